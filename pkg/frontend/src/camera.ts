/** Fly + orbit camera controller.
 *
 * The pose is kept as an explicit orthonormal frame (right, down, forward);
 * every input event re-orthonormalizes via Gram-Schmidt so error cannot
 * accumulate. The camera convention matches the render service: rotation
 * columns are (right, down, forward), camera looks along +forward.
 */

import {
  Mat3, Vec3, add, cross, dot, matFromColumns, normalize, rotateAround, scale,
  sub, norm,
} from "./math.js";

export type ControlMode = "fly" | "orbit";

export interface CameraIntrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export type InputEvent =
  | { kind: "key"; key: "w" | "a" | "s" | "d" | "q" | "e"; dt: number }
  | { kind: "drag"; dx: number; dy: number }
  | { kind: "wheel"; delta: number }
  | { kind: "mode"; mode: ControlMode };

const WORLD_UP: Vec3 = [0, 0, 1];

export class CameraController {
  position: Vec3;
  forward: Vec3;
  down: Vec3;
  mode: ControlMode = "orbit";
  target: Vec3 = [0, 0, 0];
  moveSpeed = 1.0;
  rotateSpeed = 0.005;

  constructor(position: Vec3 = [0, 0, -2], lookAt: Vec3 = [0, 0, 0]) {
    this.position = [...position];
    this.forward = normalize(sub(lookAt, position));
    this.down = this.computeDown(this.forward);
    this.orthonormalize();
  }

  private computeDown(forward: Vec3): Vec3 {
    let up = WORLD_UP;
    if (Math.abs(dot(forward, up)) > 0.98) up = [0, 1, 0];
    const right = normalize(cross(forward, up));
    return cross(forward, right);
  }

  get right(): Vec3 {
    return cross(this.down, this.forward);
  }

  /** World-from-camera rotation with columns (right, down, forward). */
  rotation(): Mat3 {
    return matFromColumns(this.right, this.down, this.forward);
  }

  orthonormalize(): void {
    this.forward = normalize(this.forward);
    this.down = normalize(
      sub(this.down, scale(this.forward, dot(this.down, this.forward))),
    );
  }

  apply(event: InputEvent): void {
    switch (event.kind) {
      case "mode":
        this.mode = event.mode;
        break;
      case "key":
        this.applyKey(event.key, event.dt);
        break;
      case "drag":
        if (this.mode === "fly") this.applyFlyDrag(event.dx, event.dy);
        else this.applyOrbitDrag(event.dx, event.dy);
        break;
      case "wheel":
        this.applyWheel(event.delta);
        break;
    }
    this.orthonormalize();
  }

  private applyKey(key: string, dt: number): void {
    const step = this.moveSpeed * dt;
    const moves: Record<string, Vec3> = {
      w: this.forward,
      s: scale(this.forward, -1),
      d: this.right,
      a: scale(this.right, -1),
      q: scale(this.down, -1),
      e: this.down,
    };
    const dir = moves[key];
    if (!dir) return;
    this.position = add(this.position, scale(dir, step));
    if (this.mode === "orbit") this.target = add(this.target, scale(dir, step));
  }

  private applyFlyDrag(dx: number, dy: number): void {
    const yaw = -dx * this.rotateSpeed;
    const pitch = -dy * this.rotateSpeed;
    this.forward = rotateAround(this.forward, WORLD_UP, yaw);
    this.down = rotateAround(this.down, WORLD_UP, yaw);
    const right = this.right;
    this.forward = rotateAround(this.forward, right, pitch);
    this.down = rotateAround(this.down, right, pitch);
  }

  private applyOrbitDrag(dx: number, dy: number): void {
    const offset = sub(this.position, this.target);
    const yaw = -dx * this.rotateSpeed;
    const pitch = -dy * this.rotateSpeed;
    let rotated = rotateAround(offset, WORLD_UP, yaw);
    // On the orbit pole the cross product degenerates; pitch around the
    // camera's own right axis instead.
    const axis = cross(rotated, WORLD_UP);
    const right = norm(axis) > 1e-6 ? normalize(axis) : this.right;
    rotated = rotateAround(rotated, right, pitch);
    // Avoid pole flips: reject pitches that collapse onto the vertical axis.
    if (Math.abs(dot(normalize(rotated), WORLD_UP)) < 0.995) {
      this.position = add(this.target, rotated);
    } else {
      this.position = add(this.target, rotateAround(offset, WORLD_UP, yaw));
    }
    this.forward = normalize(sub(this.target, this.position));
    this.down = this.computeDown(this.forward);
  }

  private applyWheel(delta: number): void {
    if (this.mode === "orbit") {
      const offset = sub(this.position, this.target);
      const r = Math.max(0.05, norm(offset) * Math.exp(delta * 0.001));
      this.position = add(this.target, scale(normalize(offset), r));
    } else {
      this.position = add(this.position, scale(this.forward, -delta * 0.001));
    }
  }

  /** Camera payload for the render service (row-major 4x4 camera-to-world). */
  toRenderRequest(intr: CameraIntrinsics): Record<string, unknown> {
    const r = this.rotation();
    const p = this.position;
    const c2w = [
      [r[0][0], r[0][1], r[0][2], p[0]],
      [r[1][0], r[1][1], r[1][2], p[1]],
      [r[2][0], r[2][1], r[2][2], p[2]],
      [0, 0, 0, 1],
    ];
    return { c2w, ...intr };
  }
}
