import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import {
  BakedScene,
  BundleManifest,
  PlaneTexture,
  parseBundle,
} from "../src/bundle.js";
import { ssim } from "../src/metrics.js";
import { CameraPose, renderBaked } from "../src/raster.js";

const here = dirname(fileURLToPath(import.meta.url));

interface Fixture {
  manifest: BundleManifest;
  textures: Record<string, string>;
  camera: {
    rotation: number[][];
    position: number[];
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    width: number;
    height: number;
  };
  reference_image: string;
}

function loadFixture(): {
  scene: BakedScene;
  pose: CameraPose;
  intr: Fixture["camera"];
  reference: Float32Array;
} {
  const fixture = JSON.parse(
    readFileSync(join(here, "fixtures", "baked_fixture.json"), "utf8"),
  ) as Fixture;
  const textures = new Map<string, PlaneTexture>();
  for (const entry of fixture.manifest.planes) {
    const raw = Buffer.from(fixture.textures[entry.texture], "base64");
    textures.set(entry.texture, {
      resolution: entry.resolution,
      data: new Uint8Array(raw),
    });
  }
  const scene = parseBundle(fixture.manifest, textures);
  const pose: CameraPose = {
    rotation: fixture.camera.rotation as CameraPose["rotation"],
    position: fixture.camera.position as CameraPose["position"],
  };
  const ref = Buffer.from(fixture.reference_image, "base64");
  const reference = new Float32Array(
    ref.buffer.slice(ref.byteOffset, ref.byteOffset + ref.byteLength),
  );
  return { scene, pose, intr: fixture.camera, reference };
}

function constantQuadScene(): BakedScene {
  const tex = (r: number, g: number, b: number, a: number): PlaneTexture => {
    const data = new Uint8Array(4 * 4 * 4);
    for (let i = 0; i < 16; i++) {
      data.set([r, g, b, a], i * 4);
    }
    return { resolution: 4, data };
  };
  const quad = (z: number, texture: PlaneTexture) => ({
    corners: [
      [-1, -1, z],
      [1, -1, z],
      [1, 1, z],
      [-1, 1, z],
    ] as [number, number, number][],
    center: [0, 0, z] as [number, number, number],
    normal: [0, 0, 1] as [number, number, number],
    up: [0, 1, 0] as [number, number, number],
    width: 2,
    height: 2,
    texture,
  });
  return {
    background: [0, 0, 0],
    referenceDirection: [0, 0, -1],
    // Listed front quad first so an unsorted draw paints it before the back.
    planes: [quad(1.0, tex(255, 0, 0, 255)), quad(-1.0, tex(0, 255, 0, 255))],
  } as BakedScene;
}

const LOOK_DOWN_Z: CameraPose = {
  rotation: [
    [1, 0, 0],
    [0, -1, 0],
    [0, 0, -1],
  ],
  position: [0, 0, 3],
};

const SMALL_INTR = { fx: 40, fy: 40, cx: 16, cy: 16, width: 32, height: 32 };

describe("baked rasterizer", () => {
  it("matches the service composite at the reference direction (SSIM > 0.9)", () => {
    const { scene, pose, intr, reference } = loadFixture();
    const rendered = renderBaked(scene, pose, intr);
    const score = ssim(rendered, reference, intr.width, intr.height);
    expect(score).toBeGreaterThan(0.9);
  });

  it("shows only the front opaque quad in the overlap", () => {
    const scene = constantQuadScene();
    const img = renderBaked(scene, LOOK_DOWN_Z, SMALL_INTR);
    const center = (16 * 32 + 16) * 3;
    expect(img[center]).toBeCloseTo(1, 5);
    expect(img[center + 1]).toBeCloseTo(0, 5);
  });

  it("renders visibly wrong output with sorting disabled", () => {
    const scene = constantQuadScene();
    const sorted = renderBaked(scene, LOOK_DOWN_Z, SMALL_INTR);
    const unsorted = renderBaked(scene, LOOK_DOWN_Z, SMALL_INTR, { noSort: true });
    let maxDiff = 0;
    for (let i = 0; i < sorted.length; i++) {
      maxDiff = Math.max(maxDiff, Math.abs(sorted[i] - unsorted[i]));
    }
    expect(maxDiff).toBeGreaterThan(0.5);
  });

  it("plane-index overlay recolors without moving silhouettes", () => {
    const { scene, pose, intr } = loadFixture();
    const plain = renderBaked(scene, pose, intr);
    const overlay = renderBaked(scene, pose, intr, { planeIndexOverlay: true });
    expect(overlay.length).toBe(plain.length);
    let differing = 0;
    for (let i = 0; i < plain.length; i++) {
      if (Math.abs(plain[i] - overlay[i]) > 1e-3) differing++;
    }
    expect(differing).toBeGreaterThan(0);
  });

  it("rejects bundles with malformed geometry or textures", () => {
    const { scene } = loadFixture();
    const manifest: BundleManifest = {
      background: [0, 0, 0],
      reference_direction: [0, 0, -1],
      planes: [
        {
          corners: [[0, 0, 0]],
          center: [0, 0, 0],
          normal: [0, 0, 1],
          up: [0, 1, 0],
          width: 1,
          height: 1,
          resolution: 4,
          texture: "a.png",
        },
      ],
    };
    const textures = new Map([
      ["a.png", { resolution: 4, data: new Uint8Array(64) }],
    ]);
    expect(() => parseBundle(manifest, textures)).toThrow(/corners/);
    expect(() =>
      parseBundle(manifest, new Map([["b.png", textures.get("a.png")!]])),
    ).toThrow(/missing texture/);
    const short = new Map([["a.png", { resolution: 4, data: new Uint8Array(3) }]]);
    expect(() => parseBundle(manifest, short)).toThrow(/payload size/);
    expect(scene.planes.length).toBeGreaterThan(0);
  });

  it("sustains interactive rates on a 500-plane bundle", () => {
    const tex: PlaneTexture = {
      resolution: 32,
      data: new Uint8Array(32 * 32 * 4).fill(180),
    };
    const rand = (() => {
      let a = 123456789;
      return () => {
        a = (a * 1103515245 + 12345) % 2147483648;
        return a / 2147483648;
      };
    })();
    const planes = Array.from({ length: 500 }, () => {
      const c: [number, number, number] = [
        rand() * 2 - 1,
        rand() * 2 - 1,
        rand() * 2 - 1,
      ];
      const w = 0.2 + rand() * 0.3;
      return {
        corners: [
          [c[0] - w / 2, c[1] - w / 2, c[2]],
          [c[0] + w / 2, c[1] - w / 2, c[2]],
          [c[0] + w / 2, c[1] + w / 2, c[2]],
          [c[0] - w / 2, c[1] + w / 2, c[2]],
        ] as [number, number, number][],
        center: c,
        normal: [0, 0, 1] as [number, number, number],
        up: [0, 1, 0] as [number, number, number],
        width: w,
        height: w,
        texture: tex,
      };
    });
    const scene: BakedScene = {
      background: [0, 0, 0],
      referenceDirection: [0, 0, -1],
      planes,
    };
    const intr = { fx: 300, fy: 300, cx: 160, cy: 120, width: 320, height: 240 };
    renderBaked(scene, LOOK_DOWN_Z, intr); // warm-up
    const t0 = performance.now();
    const frames = 5;
    for (let i = 0; i < frames; i++) renderBaked(scene, LOOK_DOWN_Z, intr);
    const msPerFrame = (performance.now() - t0) / frames;
    expect(msPerFrame).toBeLessThan(100); // >= 10 FPS in software
  });
});
