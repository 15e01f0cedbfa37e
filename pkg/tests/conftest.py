"""Shared fixtures: synthetic scenes, cameras, and the independent
brute-force compositor used as the rendering oracle."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from splatedit.render import LOWPASS, SIGMA_CLAMP, NEAR_PLANE, RenderOutput
from splatedit.scene import Camera, GaussianCloud


def make_camera(width=16, height=16, fx=20.0, position=(0.0, 0.0, -4.0),
                target=(0.0, 0.0, 0.0), name="") -> Camera:
    return Camera.look_at(position=position, target=target, fx=fx,
                          width=width, height=height, name=name)


def random_cloud(rng, n, spread=1.0, alpha_range=(0.2, 0.9)) -> GaussianCloud:
    """Random valid cloud in front of the default camera at z=-4."""
    means = rng.uniform(-spread, spread, size=(n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = rng.uniform(0.05, 0.4, size=(n, 3))
    opac = rng.uniform(*alpha_range, size=n)
    colors = rng.uniform(0.0, 1.0, size=(n, 3))
    return GaussianCloud(means, quats, scales, opac, colors)


def ring_cameras(n, radius=4.0, width=32, height=32, fx=40.0, y=0.0):
    cams = []
    for k in range(n):
        # Cameras on a partial arc so every view sees the scene front.
        ang = -0.6 + 1.2 * k / max(n - 1, 1)
        pos = (radius * np.sin(ang), y, -radius * np.cos(ang))
        cams.append(make_camera(width, height, fx, position=pos, name=f"cam{k}"))
    return cams


def bruteforce_render(cloud: GaussianCloud, camera: Camera,
                      background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Naive per-pixel reference compositor.

    Independent of the production path: rotation matrices come from
    scipy.spatial.transform, the projection Jacobian from central finite
    differences, and compositing walks every Gaussian at every pixel with no
    bounding box, no early stop, and cumprod-based transmittance.
    """
    h, w = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64)
    n = len(cloud)
    if n == 0:
        color = np.tile(bg, (h, w, 1))
        return RenderOutput(color=color, depth=np.zeros((h, w)), alpha=np.zeros((h, w)))

    # scipy uses (x, y, z, w) quaternion order.
    R = Rotation.from_quat(cloud.quats[:, [1, 2, 3, 0]]).as_matrix()
    cov3 = np.einsum("nij,nj,nkj->nik", R, cloud.scales**2, R)

    def project_pixel(points):
        cam = points @ camera.R_w2c.T + camera.t_w2c
        return np.stack([camera.fx * cam[:, 0] / cam[:, 2] + camera.cx,
                         camera.fy * cam[:, 1] / cam[:, 2] + camera.cy], axis=1)

    cam_pts = cloud.means @ camera.R_w2c.T + camera.t_w2c
    visible = cam_pts[:, 2] > NEAR_PLANE
    mean2d = np.full((n, 2), np.nan)
    mean2d[visible] = project_pixel(cloud.means[visible])

    # Jacobian of world->pixel by central differences.
    eps = 1e-5
    Jw = np.zeros((n, 2, 3))
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = eps
        Jw[visible, :, axis] = (project_pixel(cloud.means[visible] + step)
                                - project_pixel(cloud.means[visible] - step)) / (2 * eps)

    cov2 = np.einsum("nij,njk,nlk->nil", Jw, cov3, Jw)
    cov2[:, 0, 0] += LOWPASS
    cov2[:, 1, 1] += LOWPASS
    depth = np.linalg.norm(cloud.means - camera.position, axis=1)

    order = [i for i in np.argsort(depth, kind="stable") if visible[i]]
    inv = np.zeros((n, 2, 2))
    for i in order:
        inv[i] = np.linalg.inv(cov2[i])

    color = np.zeros((h, w, 3))
    depth_img = np.zeros((h, w))
    alpha_img = np.zeros((h, w))
    for py in range(h):
        for px in range(w):
            sig = np.empty(len(order))
            for k, i in enumerate(order):
                d = np.array([px, py], dtype=np.float64) - mean2d[i]
                q = d @ inv[i] @ d
                sig[k] = min(cloud.opacities[i] * np.exp(-0.5 * q), SIGMA_CLAMP)
            trans = np.concatenate([[1.0], np.cumprod(1.0 - sig)])
            wgt = sig * trans[:-1]
            color[py, px] = wgt @ cloud.colors[order] + trans[-1] * bg
            depth_img[py, px] = wgt @ depth[order]
            alpha_img[py, px] = 1.0 - trans[-1]
    return RenderOutput(color=color, depth=depth_img, alpha=alpha_img)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
