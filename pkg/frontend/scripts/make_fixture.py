"""Generate the baked-bundle regression fixture for the viewer tests.

Builds a small procedural scene with the rendering package, exports a baked
bundle (raw RGBA sidecars included) and renders the service-side composite
from a camera looking along the bundle's reference direction. Everything the
TypeScript tests need lands in one JSON file with base64 payloads.

Run from the repository root:
    python3 frontend/scripts/make_fixture.py
"""

import base64
import json
import os
import tempfile

import numpy as np

from planemix.renderer import PinholeCamera, RenderConfig, bake_alpha, render_image
from planemix.scene import ProceduralExpert, Scene
from planemix.scene_io import export_baked_bundle, make_rect_cloud

OUT = os.path.join(os.path.dirname(__file__), "..", "test", "fixtures",
                   "baked_fixture.json")


def main():
    rng = np.random.default_rng(9)
    _, rects = make_rect_cloud(8, points_per_rect=16, seed=9)
    kinds = ("constant", "gradient", "checker")
    experts = [
        ProceduralExpert(kinds[k % 3], rng.uniform(0.1, 0.9, 3),
                         rng.uniform(0.1, 0.9, 3),
                         alpha=1.0 if k % 2 == 0 else 0.7)
        for k in range(len(rects))
    ]
    background = np.array([0.1, 0.12, 0.2])
    baked = [bake_alpha(e, r, 200, k) for k, (r, e) in enumerate(zip(rects, experts))]
    scene = Scene(rectangles=rects, experts=experts, background=background,
                  alpha_textures=baked, t_near=0.05, t_far=20.0)

    with tempfile.TemporaryDirectory() as tmp:
        export_baked_bundle(scene, tmp, resolution=200,
                            reference_direction=(0.0, 0.0, -1.0),
                            raw_textures=True)
        with open(os.path.join(tmp, "bundle.json")) as f:
            manifest = json.load(f)
        textures = {}
        for entry in manifest["planes"]:
            raw = entry["texture"].replace(".png", ".bin")
            with open(os.path.join(tmp, raw), "rb") as f:
                textures[entry["texture"]] = base64.b64encode(f.read()).decode()

    # Camera looking straight along the reference direction (0, 0, -1):
    # columns (right, down, forward) with down = -y so the image is upright.
    rotation = np.array([[1.0, 0.0, 0.0],
                         [0.0, -1.0, 0.0],
                         [0.0, 0.0, -1.0]])
    width = height = 96
    camera = PinholeCamera(rotation=rotation, translation=np.array([0.0, 0.0, 2.5]),
                           fx=160.0, fy=160.0, cx=width / 2.0, cy=height / 2.0,
                           width=width, height=height)
    image, _, _ = render_image(camera, scene,
                               RenderConfig(background=background, use_baked=True))

    fixture = {
        "manifest": manifest,
        "textures": textures,
        "camera": {
            "rotation": rotation.tolist(),
            "position": [0.0, 0.0, 2.5],
            "fx": 160.0, "fy": 160.0,
            "cx": width / 2.0, "cy": height / 2.0,
            "width": width, "height": height,
        },
        "reference_image": base64.b64encode(
            image.astype("<f4").tobytes()).decode(),
    }
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w") as f:
        json.dump(fixture, f)
    print(f"{OUT}: {len(rects)} planes, {width}x{height} reference")


if __name__ == "__main__":
    main()
