/** Viewer state machine tying camera, baked rasterizer and frame stream.
 *
 * Rendering targets are abstract (a callback receives RGB float frames or
 * encoded PNG bytes), so the same logic runs headless in tests and behind a
 * canvas in the browser shell.
 */

import { BakedScene, loadScene } from "./bundle.js";
import { CameraController, CameraIntrinsics, InputEvent } from "./camera.js";
import { orthonormalityError } from "./math.js";
import { RasterOptions, renderBaked } from "./raster.js";
import { FrameStream, SocketFactory } from "./stream.js";

export type ViewerMode = "baked-local" | "neural-remote";

export interface OverlayToggles {
  depth: boolean;
  planeIndex: boolean;
  stats: boolean;
}

export interface ViewerFrame {
  kind: "raster" | "png";
  raster?: Float32Array;
  png?: ArrayBuffer;
  width: number;
  height: number;
  latencyMs?: number;
}

export interface ViewerOptions {
  intrinsics: CameraIntrinsics;
  onFrame: (frame: ViewerFrame) => void;
  onError?: (message: string) => void;
  socketFactory?: SocketFactory;
  now?: () => number;
}

export class Viewer {
  readonly camera = new CameraController();
  mode: ViewerMode = "baked-local";
  overlays: OverlayToggles = { depth: false, planeIndex: false, stats: false };
  scene: BakedScene | null = null;
  private stream: FrameStream | null = null;
  private frameTimes: number[] = [];

  constructor(private readonly options: ViewerOptions) {}

  async load(serviceUrl: string): Promise<void> {
    try {
      this.scene = await loadScene(serviceUrl);
    } catch (err) {
      this.options.onError?.(String(err));
      throw err;
    }
    if (this.options.socketFactory) {
      const wsUrl = serviceUrl.replace(/^http/, "ws").replace(/\/$/, "") + "/stream";
      this.stream = new FrameStream(wsUrl, this.options.socketFactory, {
        onFrame: (png, latencyMs) => {
          this.options.onFrame({
            kind: "png",
            png,
            width: this.options.intrinsics.width,
            height: this.options.intrinsics.height,
            latencyMs,
          });
        },
        onError: (message) => this.options.onError?.(message),
        now: this.options.now,
      });
    }
  }

  /** Route an input event to the camera and redraw. */
  handleInput(event: InputEvent): void {
    this.camera.apply(event);
    this.renderFrame();
  }

  setMode(mode: ViewerMode): void {
    this.mode = mode;
    this.renderFrame();
  }

  /** Max deviation of R^T R from identity; the controller keeps this tiny. */
  orientationError(): number {
    return orthonormalityError(this.camera.rotation());
  }

  /** Frames per second over the recent raster history. */
  fps(): number {
    if (this.frameTimes.length < 2) return 0;
    const span = this.frameTimes[this.frameTimes.length - 1] - this.frameTimes[0];
    return span > 0 ? ((this.frameTimes.length - 1) * 1000) / span : 0;
  }

  renderFrame(): void {
    if (this.mode === "neural-remote") {
      const payload = this.camera.toRenderRequest(this.options.intrinsics);
      if (this.overlays.depth) payload["depth"] = true;
      this.stream?.requestFrame(payload);
      return;
    }
    if (!this.scene) return;
    const options: RasterOptions = { planeIndexOverlay: this.overlays.planeIndex };
    const raster = renderBaked(
      this.scene,
      { rotation: this.camera.rotation(), position: this.camera.position },
      this.options.intrinsics,
      options,
    );
    const now = this.options.now ?? Date.now;
    this.frameTimes.push(now());
    if (this.frameTimes.length > 60) this.frameTimes.shift();
    this.options.onFrame({
      kind: "raster",
      raster,
      width: this.options.intrinsics.width,
      height: this.options.intrinsics.height,
    });
  }

  close(): void {
    this.stream?.close();
  }
}
