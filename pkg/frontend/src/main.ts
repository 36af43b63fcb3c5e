/** Browser shell: wires the viewer to a canvas plus keyboard/mouse input.
 *
 * Serve the compiled bundle next to the render service and open it with
 * `?service=http://host:port` (defaults to the page origin).
 */

import { Viewer, ViewerFrame, ViewerMode } from "./viewer.js";

function drawRaster(ctx: CanvasRenderingContext2D, frame: ViewerFrame): void {
  const { width, height } = frame;
  const img = ctx.createImageData(width, height);
  const src = frame.raster!;
  for (let i = 0; i < width * height; i++) {
    img.data[i * 4] = Math.min(255, Math.max(0, src[i * 3] * 255 + 0.5));
    img.data[i * 4 + 1] = Math.min(255, Math.max(0, src[i * 3 + 1] * 255 + 0.5));
    img.data[i * 4 + 2] = Math.min(255, Math.max(0, src[i * 3 + 2] * 255 + 0.5));
    img.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

async function drawPng(ctx: CanvasRenderingContext2D, frame: ViewerFrame): Promise<void> {
  const blob = new Blob([frame.png!], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  ctx.drawImage(bitmap, 0, 0);
}

export async function start(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const service = params.get("service") ?? location.origin;
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const banner = document.getElementById("banner")!;
  const hud = document.getElementById("hud")!;
  const ctx = canvas.getContext("2d")!;
  let lastLatency: number | undefined;

  const viewer = new Viewer({
    intrinsics: {
      fx: canvas.width, fy: canvas.width,
      cx: canvas.width / 2, cy: canvas.height / 2,
      width: canvas.width, height: canvas.height,
    },
    onFrame: (frame) => {
      if (frame.kind === "raster") drawRaster(ctx, frame);
      else void drawPng(ctx, frame);
      lastLatency = frame.latencyMs;
      updateHud();
    },
    onError: (message) => {
      banner.textContent = message;
      banner.hidden = false;
    },
    socketFactory: (url) => {
      const ws = new WebSocket(url);
      ws.binaryType = "arraybuffer";
      const wrapped = {
        send: (d: string) => ws.send(d),
        close: () => ws.close(),
        onmessage: null as ((data: ArrayBuffer | string) => void) | null,
        onopen: null as (() => void) | null,
        onclose: null as (() => void) | null,
      };
      ws.onmessage = (ev) => wrapped.onmessage?.(ev.data as ArrayBuffer | string);
      ws.onopen = () => wrapped.onopen?.();
      ws.onclose = () => wrapped.onclose?.();
      return wrapped;
    },
  });

  function updateHud(): void {
    if (!viewer.overlays.stats) {
      hud.textContent = "";
      return;
    }
    const fps = viewer.fps().toFixed(1);
    const lat = lastLatency === undefined ? "-" : `${lastLatency.toFixed(0)}ms`;
    hud.textContent = `${viewer.mode} | ${fps} fps | rtt ${lat}`;
  }

  const keys: Record<string, boolean> = {};
  addEventListener("keydown", (ev) => {
    const k = ev.key.toLowerCase();
    if ("wasdqe".includes(k)) keys[k] = true;
    if (k === "m") {
      const next: ViewerMode =
        viewer.mode === "baked-local" ? "neural-remote" : "baked-local";
      viewer.setMode(next);
    }
    if (k === "p") { viewer.overlays.planeIndex = !viewer.overlays.planeIndex; viewer.renderFrame(); }
    if (k === "z") { viewer.overlays.depth = !viewer.overlays.depth; viewer.renderFrame(); }
    if (k === "f") { viewer.overlays.stats = !viewer.overlays.stats; updateHud(); }
    if (k === "o") {
      viewer.camera.apply({ kind: "mode", mode: viewer.camera.mode === "fly" ? "orbit" : "fly" });
    }
  });
  addEventListener("keyup", (ev) => { keys[ev.key.toLowerCase()] = false; });

  let dragging = false;
  canvas.addEventListener("mousedown", () => { dragging = true; });
  addEventListener("mouseup", () => { dragging = false; });
  addEventListener("mousemove", (ev) => {
    if (dragging) viewer.handleInput({ kind: "drag", dx: ev.movementX, dy: ev.movementY });
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    viewer.handleInput({ kind: "wheel", delta: ev.deltaY });
  });

  let last = performance.now();
  function tick(now: number): void {
    const dt = Math.min((now - last) / 1000, 0.1);
    last = now;
    for (const k of "wasdqe") {
      if (keys[k]) viewer.handleInput({ kind: "key", key: k as "w", dt });
    }
    requestAnimationFrame(tick);
  }

  try {
    await viewer.load(service);
    viewer.renderFrame();
  } catch {
    return; // banner already shows the error
  }
  requestAnimationFrame(tick);
}

if (typeof document !== "undefined" && document.getElementById("view")) {
  void start();
}
