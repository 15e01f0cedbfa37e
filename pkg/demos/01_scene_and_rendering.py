"""Build a small Gaussian scene, render color/depth/alpha, and round-trip
it through the 3DGS PLY format.

Run:  python3 demos/01_scene_and_rendering.py
Artifacts land in demos/out/01/.
"""

from pathlib import Path

import numpy as np

from splatedit import Camera, GaussianCloud, load_ply, render, save_ply
from splatedit.imagefiles import save_pfm, save_png

out = Path(__file__).parent / "out" / "01"
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)

# A loose cluster of colored blobs in front of a gray backdrop.
n = 12
means = np.vstack([rng.uniform(-0.8, 0.8, (n, 3)), [[0, 0, 1.8]]])
scales = np.vstack([rng.uniform(0.1, 0.3, (n, 3)), [[4.0, 4.0, 0.05]]])
colors = np.vstack([rng.uniform(0.1, 0.9, (n, 3)), [[0.5, 0.5, 0.55]]])
cloud = GaussianCloud(
    means=means,
    quats=np.tile([1.0, 0, 0, 0], (n + 1, 1)),
    scales=scales,
    opacities=np.full(n + 1, 0.95),
    colors=colors,
)
print(f"scene: {len(cloud)} Gaussians")

for k, ang in enumerate((-0.5, 0.0, 0.5)):
    cam = Camera.look_at(position=(4 * np.sin(ang), 0.3, -4 * np.cos(ang)),
                         target=(0, 0, 0), fx=90.0, width=96, height=96)
    result = render(cloud, cam, background=(0.05, 0.05, 0.1))
    save_png(result.color, out / f"view{k}.png")
    save_pfm(result.depth, out / f"view{k}_depth.pfm")
    save_pfm(result.alpha, out / f"view{k}_alpha.pfm")
    print(f"view {k}: mean alpha {result.alpha.mean():.3f}, "
          f"depth range [{result.depth[result.alpha > 0.5].min():.2f}, "
          f"{result.depth.max():.2f}]")

# PLY round trip: raw fields survive a save/load cycle.
save_ply(cloud, out / "scene.ply")
back = load_ply(out / "scene.ply")
drift = max(np.abs(back.means - cloud.means).max(),
            np.abs(back.colors - cloud.colors).max(),
            np.abs(back.opacities - cloud.opacities).max())
print(f"PLY round trip: {len(back)} points, max drift {drift:.2e}")
print(f"artifacts in {out}")
