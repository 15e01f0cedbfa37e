"""Forward point-based volumetric rendering of color and depth, with
analytic gradients for scene fine-tuning.

Per pixel x', Gaussians are composited front-to-back:

    C(x') = sum_i c_i s_i prod_{j<i} (1 - s_j) + bg * prod_j (1 - s_j)
    D(x') = sum_i d_i s_i prod_{j<i} (1 - s_j)

with s_i = alpha_i * exp(-0.5 * delta^T cov2d^{-1} delta) clamped to 0.99,
where cov2d = J W Sigma W^T J^T + lambda_lp I is the EWA projection of the
world covariance and d_i is the Euclidean distance from Gaussian center to
camera center. The depth composite carries no background term.

The sort is a single global front-to-back order (ties broken by index), so a
naive per-pixel compositor reproduces the output exactly; the transmittance
early-stop threshold is chosen small enough (1e-7) to keep the difference
against a no-early-stop reference below 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InputError
from .scene import Camera, GaussianCloud

# Low-pass regularization added to the diagonal of cov2d (pixels^2).
LOWPASS = 0.3
# Per-splat opacity clamp.
SIGMA_CLAMP = 0.99
# Stop compositing a pixel once residual transmittance falls below this.
EARLY_STOP_T = 1e-7
# Bounding boxes truncate where alpha * gaussian <= this; small enough that
# truncation stays invisible to both the 1e-6 oracle comparison and
# finite-difference gradient checks.
CONTRIB_EPS = 1e-12
NEAR_PLANE = 1e-3


@dataclass(frozen=True)
class SplattedGaussian:
    """2D projection of one Gaussian: screen-space footprint plus view depth."""

    pixel_mean: NDArray
    cov2d: NDArray
    view_depth: float
    opacity: float
    color: NDArray


@dataclass
class RenderOutput:
    color: NDArray   # (H, W, 3)
    depth: NDArray   # (H, W)
    alpha: NDArray   # (H, W)


@dataclass
class GaussianGrads:
    mean: NDArray      # (N, 3)
    rotation: NDArray  # (N, 4), w.r.t. the (possibly unnormalized) input quats
    scale: NDArray     # (N, 3)
    opacity: NDArray   # (N,)
    color: NDArray     # (N, 3)


class _Projection:
    """Vectorized projection state shared by forward and backward passes."""

    __slots__ = ("ok", "order", "mean2d", "conic", "cov2d", "depth", "x_cam",
                 "R", "M", "qhat", "qnorm", "radius")

    def __init__(self, means, quats, scales, camera: Camera):
        n = means.shape[0]
        qnorm = np.linalg.norm(quats, axis=1)
        safe = np.where(qnorm > 0, qnorm, 1.0)
        qhat = quats / safe[:, None]

        w, x, y, z = qhat[:, 0], qhat[:, 1], qhat[:, 2], qhat[:, 3]
        R = np.empty((n, 3, 3))
        R[:, 0, 0] = 1 - 2 * (y * y + z * z)
        R[:, 0, 1] = 2 * (x * y - w * z)
        R[:, 0, 2] = 2 * (x * z + w * y)
        R[:, 1, 0] = 2 * (x * y + w * z)
        R[:, 1, 1] = 1 - 2 * (x * x + z * z)
        R[:, 1, 2] = 2 * (y * z - w * x)
        R[:, 2, 0] = 2 * (x * z - w * y)
        R[:, 2, 1] = 2 * (y * z + w * x)
        R[:, 2, 2] = 1 - 2 * (x * x + y * y)
        M = R * scales[:, None, :]
        sigma3 = M @ np.swapaxes(M, 1, 2)

        x_cam = means @ camera.R_w2c.T + camera.t_w2c
        zc = x_cam[:, 2]
        ok = zc > NEAR_PLANE

        zs = np.where(ok, zc, 1.0)
        mean2d = np.empty((n, 2))
        mean2d[:, 0] = camera.fx * x_cam[:, 0] / zs + camera.cx
        mean2d[:, 1] = camera.fy * x_cam[:, 1] / zs + camera.cy

        J = np.zeros((n, 2, 3))
        J[:, 0, 0] = camera.fx / zs
        J[:, 0, 2] = -camera.fx * x_cam[:, 0] / zs**2
        J[:, 1, 1] = camera.fy / zs
        J[:, 1, 2] = -camera.fy * x_cam[:, 1] / zs**2
        T = J @ camera.R_w2c
        cov2d = T @ sigma3 @ np.swapaxes(T, 1, 2)
        cov2d[:, 0, 0] += LOWPASS
        cov2d[:, 1, 1] += LOWPASS

        det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
        finite = np.isfinite(cov2d).all(axis=(1, 2)) & np.isfinite(mean2d).all(axis=1)
        ok &= (det > 0) & finite  # degenerate splats are skipped

        dsafe = np.where(det > 0, det, 1.0)
        conic = np.empty((n, 3))
        conic[:, 0] = cov2d[:, 1, 1] / dsafe
        conic[:, 1] = -cov2d[:, 0, 1] / dsafe
        conic[:, 2] = cov2d[:, 0, 0] / dsafe

        # 3-ish sigma extent, pushed out until alpha*g drops below CONTRIB_EPS.
        mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
        lam_max = mid + np.sqrt(np.maximum(mid * mid - dsafe, 0.0))
        self.radius = np.sqrt(2.0 * np.log(1.0 / CONTRIB_EPS) * np.maximum(lam_max, 0.0))

        self.ok = ok
        self.mean2d = mean2d
        self.conic = conic
        self.cov2d = cov2d
        self.depth = np.linalg.norm(means - camera.position[None, :], axis=1)
        self.x_cam = x_cam
        self.R = R
        self.M = M
        self.qhat = qhat
        self.qnorm = qnorm
        # Global front-to-back order over visible Gaussians; stable sort keeps
        # equal depths in index order for determinism.
        idx = np.nonzero(ok)[0]
        self.order = idx[np.argsort(self.depth[idx], kind="stable")]


def _bbox(mean2d, radius, width, height):
    x0 = max(int(np.floor(mean2d[0] - radius)), 0)
    x1 = min(int(np.ceil(mean2d[0] + radius)) + 1, width)
    y0 = max(int(np.floor(mean2d[1] - radius)), 0)
    y1 = min(int(np.ceil(mean2d[1] + radius)) + 1, height)
    return x0, x1, y0, y1


def project(camera: Camera, g) -> SplattedGaussian | None:
    """EWA projection of a single Gaussian; returns None when culled."""
    proj = _Projection(g.mean[None, :], g.rotation[None, :], g.scale[None, :], camera)
    if not proj.ok[0]:
        return None
    return SplattedGaussian(
        pixel_mean=proj.mean2d[0].copy(),
        cov2d=proj.cov2d[0].copy(),
        view_depth=float(proj.depth[0]),
        opacity=float(g.opacity),
        color=np.asarray(g.color, dtype=np.float64).copy(),
    )


def render_arrays(means, quats, scales, opacities, colors, camera: Camera,
                  background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Render raw parameter arrays (no invariant validation)."""
    h, w = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64)
    color_acc = np.zeros((h, w, 3))
    depth_acc = np.zeros((h, w))
    trans = np.ones((h, w))

    if means.shape[0]:
        proj = _Projection(np.asarray(means, dtype=np.float64),
                           np.asarray(quats, dtype=np.float64),
                           np.asarray(scales, dtype=np.float64), camera)
        for i in proj.order:
            x0, x1, y0, y1 = _bbox(proj.mean2d[i], proj.radius[i], w, h)
            if x0 >= x1 or y0 >= y1:
                continue
            tile = trans[y0:y1, x0:x1]
            active = tile >= EARLY_STOP_T
            if not active.any():
                continue
            dx = np.arange(x0, x1, dtype=np.float64) - proj.mean2d[i, 0]
            dy = np.arange(y0, y1, dtype=np.float64)[:, None] - proj.mean2d[i, 1]
            a, b, c = proj.conic[i]
            g = np.exp(-0.5 * (a * dx**2 + 2 * b * dx * dy + c * dy**2))
            sig = np.where(active, np.minimum(opacities[i] * g, SIGMA_CLAMP), 0.0)
            wgt = sig * tile
            color_acc[y0:y1, x0:x1] += wgt[:, :, None] * colors[i]
            depth_acc[y0:y1, x0:x1] += wgt * proj.depth[i]
            trans[y0:y1, x0:x1] = tile * (1.0 - sig)

    color = color_acc + trans[:, :, None] * bg
    return RenderOutput(color=color, depth=depth_acc, alpha=1.0 - trans)


def render(cloud: GaussianCloud, camera: Camera,
           background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Render a cloud; an empty cloud yields pure background, zero depth/alpha."""
    return render_arrays(cloud.means, cloud.quats, cloud.scales,
                         cloud.opacities, cloud.colors, camera, background)


def render_gaussian_mask(cloud: GaussianCloud, mask3d, camera: Camera) -> NDArray:
    """Composite a per-Gaussian scalar in place of color (no background term).

    With an all-ones mask this reproduces the alpha channel exactly.
    """
    values = np.asarray(getattr(mask3d, "values", mask3d), dtype=np.float64).reshape(-1)
    if values.shape[0] != len(cloud):
        raise InputError(
            f"mask has {values.shape[0]} entries for a cloud of {len(cloud)}")
    out = render_arrays(cloud.means, cloud.quats, cloud.scales, cloud.opacities,
                        np.repeat(values[:, None], 3, axis=1), camera)
    return out.color[:, :, 0]


def accumulate_vote_weights(cloud: GaussianCloud, camera: Camera,
                            pixel_values) -> tuple[NDArray, NDArray]:
    """Per-Gaussian (sum of w*value, sum of w) over the compositing weights
    w_i = s_i * prod_{j<i}(1 - s_j) of this view."""
    values = np.asarray(pixel_values, dtype=np.float64)
    h, w = camera.height, camera.width
    if values.shape != (h, w):
        raise InputError(f"pixel values shape {values.shape} != camera ({h}, {w})")
    n = len(cloud)
    num = np.zeros(n)
    den = np.zeros(n)
    if n == 0:
        return num, den

    proj = _Projection(cloud.means, cloud.quats, cloud.scales, camera)
    trans = np.ones((h, w))
    for i in proj.order:
        x0, x1, y0, y1 = _bbox(proj.mean2d[i], proj.radius[i], w, h)
        if x0 >= x1 or y0 >= y1:
            continue
        tile = trans[y0:y1, x0:x1]
        active = tile >= EARLY_STOP_T
        if not active.any():
            continue
        dx = np.arange(x0, x1, dtype=np.float64) - proj.mean2d[i, 0]
        dy = np.arange(y0, y1, dtype=np.float64)[:, None] - proj.mean2d[i, 1]
        a, b, c = proj.conic[i]
        g = np.exp(-0.5 * (a * dx**2 + 2 * b * dx * dy + c * dy**2))
        sig = np.where(active, np.minimum(cloud.opacities[i] * g, SIGMA_CLAMP), 0.0)
        wgt = sig * tile
        num[i] = np.sum(wgt * values[y0:y1, x0:x1])
        den[i] = np.sum(wgt)
        trans[y0:y1, x0:x1] = tile * (1.0 - sig)
    return num, den


# ---------------------------------------------------------------------------
# Analytic backward


# d(quat->rotmat)/dq layout helpers; rows of R flattened, per quat component.
def _dR_dq(w, x, y, z):
    return (
        2 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]]),
        2 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]]),
        2 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]]),
        2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]]),
    )


def backward_arrays(means, quats, scales, opacities, colors, camera: Camera,
                    grad_color, grad_depth,
                    background=(0.0, 0.0, 0.0)) -> GaussianGrads:
    """Gradients of sum(grad_color * C) + sum(grad_depth * D) w.r.t. all
    Gaussian parameters, replaying the forward compositing exactly."""
    h, w = camera.height, camera.width
    grad_color = np.asarray(grad_color, dtype=np.float64)
    grad_depth = np.asarray(grad_depth, dtype=np.float64)
    if grad_color.shape != (h, w, 3):
        raise InputError(f"grad_color shape {grad_color.shape} != ({h}, {w}, 3)")
    if grad_depth.shape != (h, w):
        raise InputError(f"grad_depth shape {grad_depth.shape} != ({h}, {w})")

    n = means.shape[0]
    grads = GaussianGrads(
        mean=np.zeros((n, 3)), rotation=np.zeros((n, 4)), scale=np.zeros((n, 3)),
        opacity=np.zeros(n), color=np.zeros((n, 3)),
    )
    bg = np.asarray(background, dtype=np.float64)
    if n == 0:
        return grads

    means = np.asarray(means, dtype=np.float64)
    quats = np.asarray(quats, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    proj = _Projection(means, quats, scales, camera)

    # Forward sweep, caching per-Gaussian footprints and pre-transmittance.
    trans = np.ones((h, w))
    cache: dict[int, tuple] = {}
    for i in proj.order:
        x0, x1, y0, y1 = _bbox(proj.mean2d[i], proj.radius[i], w, h)
        if x0 >= x1 or y0 >= y1:
            continue
        tile = trans[y0:y1, x0:x1]
        active = tile >= EARLY_STOP_T
        if not active.any():
            continue
        dx = np.arange(x0, x1, dtype=np.float64) - proj.mean2d[i, 0]
        dy = np.arange(y0, y1, dtype=np.float64)[:, None] - proj.mean2d[i, 1]
        a, b, c = proj.conic[i]
        g = np.exp(-0.5 * (a * dx**2 + 2 * b * dx * dy + c * dy**2))
        sig = np.where(active, np.minimum(opacities[i] * g, SIGMA_CLAMP), 0.0)
        cache[i] = ((x0, x1, y0, y1), g, tile.copy())
        trans[y0:y1, x0:x1] = tile * (1.0 - sig)

    # Backward sweep: S holds the downstream composited payload
    # sum_{j>i} w_j u_j + T_final * (bg . grad_color) per pixel.
    S = trans * (grad_color @ bg)
    for i in proj.order[::-1]:
        if i not in cache:
            continue
        (x0, x1, y0, y1), g, t_before = cache[i]
        active = t_before >= EARLY_STOP_T
        sig_raw = opacities[i] * g
        clamped = sig_raw > SIGMA_CLAMP
        sig = np.where(active, np.minimum(sig_raw, SIGMA_CLAMP), 0.0)
        wgt = sig * t_before

        gc_tile = grad_color[y0:y1, x0:x1]
        gd_tile = grad_depth[y0:y1, x0:x1]
        u = gc_tile @ colors[i] + gd_tile * proj.depth[i]

        grads.color[i] = np.einsum("yx,yxc->c", wgt, gc_tile)
        g_depth_i = float(np.sum(wgt * gd_tile))

        grad_sig = np.where(active, t_before * u - S[y0:y1, x0:x1] / (1.0 - sig), 0.0)
        S[y0:y1, x0:x1] += wgt * u

        live = active & ~clamped
        gg = np.where(live, grad_sig * opacities[i], 0.0)  # dL/dg per pixel
        grads.opacity[i] = float(np.sum(np.where(live, grad_sig * g, 0.0)))

        # Screen-space chain: dg/dmean2d = g * (conic @ delta),
        # dg/dcov2d = 0.5 * g * outer(conic@delta, conic@delta).
        a, b, c = proj.conic[i]
        dx = np.arange(x0, x1, dtype=np.float64) - proj.mean2d[i, 0]
        dy = np.arange(y0, y1, dtype=np.float64)[:, None] - proj.mean2d[i, 1]
        v1 = a * dx + b * dy
        v2 = b * dx + c * dy
        ggg = gg * g
        g_mean2d = np.array([np.sum(ggg * v1), np.sum(ggg * v2)])
        half = 0.5 * ggg
        g_cov2d = np.array([
            [np.sum(half * v1 * v1), np.sum(half * v1 * v2)],
            [np.sum(half * v1 * v2), np.sum(half * v2 * v2)],
        ])

        # View-depth chain: d_i = |mu - cam|.
        dirv = means[i] - camera.position
        grads.mean[i] += g_depth_i * dirv / proj.depth[i]

        # Projection chain.
        xc, yc, zc = proj.x_cam[i]
        fx, fy = camera.fx, camera.fy
        J = np.array([[fx / zc, 0.0, -fx * xc / zc**2],
                      [0.0, fy / zc, -fy * yc / zc**2]])
        g_xcam = J.T @ g_mean2d

        Twc = J @ camera.R_w2c
        sigma3 = proj.M[i] @ proj.M[i].T
        g_sigma3 = Twc.T @ g_cov2d @ Twc
        g_T = 2.0 * g_cov2d @ Twc @ sigma3
        g_J = g_T @ camera.R_w2c.T
        g_xcam[0] += g_J[0, 2] * (-fx / zc**2)
        g_xcam[1] += g_J[1, 2] * (-fy / zc**2)
        g_xcam[2] += (g_J[0, 0] * (-fx / zc**2) + g_J[1, 1] * (-fy / zc**2)
                      + g_J[0, 2] * (2 * fx * xc / zc**3)
                      + g_J[1, 2] * (2 * fy * yc / zc**3))
        grads.mean[i] += camera.R_w2c.T @ g_xcam

        # Covariance chain: Sigma = M M^T, M = R diag(s).
        g_M = 2.0 * g_sigma3 @ proj.M[i]
        grads.scale[i] = np.einsum("ij,ij->j", g_M, proj.R[i])
        g_R = g_M * scales[i][None, :]

        qw, qx, qy, qz = proj.qhat[i]
        for k, dR in enumerate(_dR_dq(qw, qx, qy, qz)):
            grads.rotation[i, k] = np.sum(g_R * dR)
        # Through quaternion normalization.
        gq = grads.rotation[i]
        grads.rotation[i] = (gq - proj.qhat[i] * np.dot(proj.qhat[i], gq)) / proj.qnorm[i]

    return grads


def backward(cloud: GaussianCloud, camera: Camera, grad_color,
             grad_depth, background=(0.0, 0.0, 0.0)) -> GaussianGrads:
    """Analytic gradients of the render w.r.t. mean, rotation, scale,
    opacity, and color, given upstream gradients on the color and depth
    images of a matching forward pass."""
    return backward_arrays(cloud.means, cloud.quats, cloud.scales, cloud.opacities,
                           cloud.colors, camera, grad_color, grad_depth, background)
