/** Baked-bundle types and loading.
 *
 * A bundle is the /scene payload plus one RGBA texture per plane. Textures are
 * non-premultiplied uint8 RGBA; geometry arrives as world-space rectangle
 * corners (counter-clockwise seen from +normal).
 */

import { Vec3 } from "./math.js";

export interface PlaneQuad {
  corners: [Vec3, Vec3, Vec3, Vec3];
  center: Vec3;
  normal: Vec3;
  up: Vec3;
  width: number;
  height: number;
  texture: PlaneTexture;
}

export interface PlaneTexture {
  resolution: number;
  /** RGBA uint8, row-major, rows index the up axis, columns the right axis. */
  data: Uint8Array;
}

export interface BakedScene {
  background: [number, number, number];
  referenceDirection: Vec3;
  planes: PlaneQuad[];
}

interface BundlePlaneEntry {
  corners: number[][];
  center: number[];
  normal: number[];
  up: number[];
  width: number;
  height: number;
  resolution: number;
  texture: string;
}

export interface BundleManifest {
  background: number[];
  reference_direction: number[];
  planes: BundlePlaneEntry[];
}

function asVec3(a: number[]): Vec3 {
  if (a.length !== 3 || a.some((v) => !Number.isFinite(v))) {
    throw new Error(`expected a finite 3-vector, got ${JSON.stringify(a)}`);
  }
  return [a[0], a[1], a[2]];
}

export function parseBundle(
  manifest: BundleManifest,
  textures: Map<string, PlaneTexture>,
): BakedScene {
  const planes: PlaneQuad[] = manifest.planes.map((entry) => {
    const texture = textures.get(entry.texture);
    if (!texture) throw new Error(`missing texture ${entry.texture}`);
    if (texture.data.length !== texture.resolution * texture.resolution * 4) {
      throw new Error(`texture ${entry.texture}: bad payload size`);
    }
    if (entry.corners.length !== 4) {
      throw new Error(`plane with ${entry.corners.length} corners`);
    }
    return {
      corners: entry.corners.map(asVec3) as [Vec3, Vec3, Vec3, Vec3],
      center: asVec3(entry.center),
      normal: asVec3(entry.normal),
      up: asVec3(entry.up),
      width: entry.width,
      height: entry.height,
      texture,
    };
  });
  return {
    background: asVec3(manifest.background),
    referenceDirection: asVec3(manifest.reference_direction),
    planes,
  };
}

/** Fetch /scene and raw textures from the render service. */
export async function loadScene(serviceUrl: string): Promise<BakedScene> {
  const base = serviceUrl.replace(/\/$/, "");
  const resp = await fetch(`${base}/bundle/bundle.json`);
  if (!resp.ok) throw new Error(`bundle fetch failed: HTTP ${resp.status}`);
  const manifest = (await resp.json()) as BundleManifest;
  const textures = new Map<string, PlaneTexture>();
  await Promise.all(
    manifest.planes.map(async (entry) => {
      // Prefer the raw sidecar (same pixels as the PNG, no decoder needed).
      const rawName = entry.texture.replace(/\.png$/, ".bin");
      const tex = await fetch(`${base}/bundle/${rawName}`);
      if (!tex.ok) throw new Error(`texture fetch failed: ${rawName}`);
      textures.set(entry.texture, {
        resolution: entry.resolution,
        data: new Uint8Array(await tex.arrayBuffer()),
      });
    }),
  );
  return parseBundle(manifest, textures);
}

/** Bilinear RGBA lookup at normalized [-1, 1]^2 in-plane coordinates. */
export function sampleTexture(
  tex: PlaneTexture,
  a: number,
  b: number,
  out: [number, number, number, number],
): void {
  const n = tex.resolution;
  let u = ((a + 1) / 2) * n - 0.5;
  let v = ((b + 1) / 2) * n - 0.5;
  u = Math.min(Math.max(u, 0), n - 1);
  v = Math.min(Math.max(v, 0), n - 1);
  const u0 = Math.min(Math.floor(u), n - 2);
  const v0 = Math.min(Math.floor(v), n - 2);
  const fu = u - u0;
  const fv = v - v0;
  const i00 = (v0 * n + u0) * 4;
  const i01 = i00 + 4;
  const i10 = i00 + n * 4;
  const i11 = i10 + 4;
  const d = tex.data;
  for (let c = 0; c < 4; c++) {
    out[c] =
      ((1 - fv) * ((1 - fu) * d[i00 + c] + fu * d[i01 + c]) +
        fv * ((1 - fu) * d[i10 + c] + fu * d[i11 + c])) /
      255;
  }
}
