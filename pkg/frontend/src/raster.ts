/** Software back-to-front quad rasterizer.
 *
 * Mirrors the WebGL path's semantics exactly: quads sorted by view-space
 * depth, drawn far-to-near with standard over-blending of non-premultiplied
 * RGBA and bilinear texture sampling. Used headless in tests and as a
 * no-WebGL fallback.
 */

import { BakedScene, PlaneQuad, sampleTexture } from "./bundle.js";
import { CameraIntrinsics } from "./camera.js";
import { Mat3, Vec3, cross, dot, sub } from "./math.js";

export interface CameraPose {
  /** World-from-camera rotation, columns (right, down, forward). */
  rotation: Mat3;
  position: Vec3;
}

export interface RasterOptions {
  /** Disable depth sorting (debug negative control). */
  noSort?: boolean;
  /** Fill with per-plane index colors instead of textures. */
  planeIndexOverlay?: boolean;
}

/** Distinct overlay color for a plane index (golden-angle hue walk). */
export function planeIndexColor(index: number): [number, number, number] {
  const hue = (index * 137.508) % 360;
  const h = hue / 60;
  const x = 1 - Math.abs((h % 2) - 1);
  const rgb: [number, number, number] =
    h < 1 ? [1, x, 0] : h < 2 ? [x, 1, 0] : h < 3 ? [0, 1, x] :
    h < 4 ? [0, x, 1] : h < 5 ? [x, 0, 1] : [1, 0, x];
  return rgb;
}

function quadDepth(quad: PlaneQuad, pose: CameraPose): number {
  const fwd: Vec3 = [
    pose.rotation[0][2],
    pose.rotation[1][2],
    pose.rotation[2][2],
  ];
  return dot(sub(quad.center, pose.position), fwd);
}

/** Render into a Float32Array of RGB, row-major, top-left origin. */
export function renderBaked(
  scene: BakedScene,
  pose: CameraPose,
  intr: CameraIntrinsics,
  options: RasterOptions = {},
): Float32Array {
  const { width, height } = intr;
  const out = new Float32Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    out[i * 3] = scene.background[0];
    out[i * 3 + 1] = scene.background[1];
    out[i * 3 + 2] = scene.background[2];
  }
  const order = scene.planes.map((_, i) => i);
  if (!options.noSort) {
    order.sort(
      (i, j) =>
        quadDepth(scene.planes[j], pose) - quadDepth(scene.planes[i], pose),
    );
  }
  const r = pose.rotation;
  const right: Vec3 = [r[0][0], r[1][0], r[2][0]];
  const down: Vec3 = [r[0][1], r[1][1], r[2][1]];
  const forward: Vec3 = [r[0][2], r[1][2], r[2][2]];
  const rgba: [number, number, number, number] = [0, 0, 0, 0];
  for (const index of order) {
    const quad = scene.planes[index];
    const planeRight = cross(quad.up, quad.normal);
    const toPlane = sub(quad.center, pose.position);
    const bounds = projectedBounds(quad, pose, intr);
    if (!bounds) continue;
    const [x0, x1, y0, y1] = bounds;
    for (let py = y0; py <= y1; py++) {
      for (let px = x0; px <= x1; px++) {
        // Camera ray through the pixel center.
        const xc = (px + 0.5 - intr.cx) / intr.fx;
        const yc = (py + 0.5 - intr.cy) / intr.fy;
        const dir: Vec3 = [
          right[0] * xc + down[0] * yc + forward[0],
          right[1] * xc + down[1] * yc + forward[1],
          right[2] * xc + down[2] * yc + forward[2],
        ];
        const denom = dot(dir, quad.normal);
        if (Math.abs(denom) < 1e-12) continue;
        const t = dot(toPlane, quad.normal) / denom;
        if (t <= 1e-6) continue;
        const hit: Vec3 = [
          pose.position[0] + t * dir[0] - quad.center[0],
          pose.position[1] + t * dir[1] - quad.center[1],
          pose.position[2] + t * dir[2] - quad.center[2],
        ];
        const a = (dot(hit, planeRight) / quad.width) * 2;
        const b = (dot(hit, quad.up) / quad.height) * 2;
        if (Math.abs(a) > 1 || Math.abs(b) > 1) continue;
        sampleTexture(quad.texture, a, b, rgba);
        if (options.planeIndexOverlay) {
          const c = planeIndexColor(index);
          rgba[0] = c[0];
          rgba[1] = c[1];
          rgba[2] = c[2];
        }
        const alpha = rgba[3];
        const o = (py * width + px) * 3;
        out[o] = alpha * rgba[0] + (1 - alpha) * out[o];
        out[o + 1] = alpha * rgba[1] + (1 - alpha) * out[o + 1];
        out[o + 2] = alpha * rgba[2] + (1 - alpha) * out[o + 2];
      }
    }
  }
  return out;
}

/** Screen bounding box of the quad's corners; null when fully behind. */
function projectedBounds(
  quad: PlaneQuad,
  pose: CameraPose,
  intr: CameraIntrinsics,
): [number, number, number, number] | null {
  const r = pose.rotation;
  let x0 = Infinity;
  let x1 = -Infinity;
  let y0 = Infinity;
  let y1 = -Infinity;
  let anyFront = false;
  let anyBehind = false;
  for (const corner of quad.corners) {
    const rel = sub(corner, pose.position);
    // Camera coordinates: rotation columns are the camera axes.
    const cx = r[0][0] * rel[0] + r[1][0] * rel[1] + r[2][0] * rel[2];
    const cy = r[0][1] * rel[0] + r[1][1] * rel[1] + r[2][1] * rel[2];
    const cz = r[0][2] * rel[0] + r[1][2] * rel[1] + r[2][2] * rel[2];
    if (cz <= 1e-9) {
      anyBehind = true;
      continue;
    }
    anyFront = true;
    const sx = (cx / cz) * intr.fx + intr.cx;
    const sy = (cy / cz) * intr.fy + intr.cy;
    x0 = Math.min(x0, sx);
    x1 = Math.max(x1, sx);
    y0 = Math.min(y0, sy);
    y1 = Math.max(y1, sy);
  }
  if (!anyFront) return null;
  if (anyBehind) {
    // Corners straddle the camera plane: conservatively cover the viewport.
    return [0, intr.width - 1, 0, intr.height - 1];
  }
  return [
    Math.max(0, Math.floor(x0)),
    Math.min(intr.width - 1, Math.ceil(x1)),
    Math.max(0, Math.floor(y0)),
    Math.min(intr.height - 1, Math.ceil(y1)),
  ];
}
