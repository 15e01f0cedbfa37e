"""Disparity calibration against rendered depth and Gaussian instantiation
for an edited frontal view.

Monocular estimators return disparity only up to an affine transform. The
calibration matches location and spread statistics between the monocular and
rendered disparities,

    a = s(rendered) / s(mono),   b = f(rendered) - a * f(mono),

with f the median and s the mean absolute deviation from the median, both
over jointly valid pixels. This is markedly more outlier-tolerant than a
least-squares line fit. Calibrated depth is then 1 / (a * disparity + b).

New Gaussians are unprojected from masked pixels of the edited view at depth

    d*(p) = (d_mono_edited(p) / d_mono_unedited(p)) * d_rendered(p),

so the monocular estimator only ever contributes a relative depth change;
both monocular depths share the unedited view's calibration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import (
    DegenerateScaleError, DegenerateTargetError, InitializationFailedError,
    InputError,
)
from .scene import Camera, GaussianCloud

log = logging.getLogger(__name__)

DELTA_OPACITY = 0.9
RENDER_ALPHA_MIN = 0.5


@dataclass
class DisparityMap:
    """Inverse-depth values in arbitrary units, with a per-pixel validity mask."""

    values: NDArray
    valid: NDArray = None
    source: str = "monocular"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InputError("disparity must be a HxW grid")
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.values.shape:
            raise InputError("validity mask shape must match disparity")
        if self.source not in ("monocular", "rendered"):
            raise InputError(f"unknown disparity source '{self.source}'")
        if np.any(self.values[self.valid] <= 0):
            raise InputError("disparity must be positive where valid")


@dataclass
class DepthImage:
    values: NDArray
    valid: NDArray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise InputError("depth image needs matching HxW values and validity")


@dataclass(frozen=True)
class Calibration:
    """Affine disparity correction: calibrated = a * raw + b."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0):
            raise InputError("calibration scale must be positive")


def _spread(values, center):
    return float(np.mean(np.abs(values - center)))


def calibrate_disparity(mono: DisparityMap, rendered: DisparityMap) -> Calibration:
    """Median/MAD affine fit of monocular disparity onto rendered disparity."""
    if mono.values.shape != rendered.values.shape:
        raise InputError("disparity maps must share a resolution")
    joint = mono.valid & rendered.valid
    if np.count_nonzero(joint) < 2:
        raise InputError("need at least 2 jointly valid pixels to calibrate")
    dm = mono.values[joint]
    dr = rendered.values[joint]
    f_m, f_r = float(np.median(dm)), float(np.median(dr))
    s_m, s_r = _spread(dm, f_m), _spread(dr, f_r)
    if s_m == 0.0:
        raise DegenerateScaleError("monocular disparity is constant on the valid set")
    if s_r == 0.0:
        raise DegenerateTargetError("rendered disparity is constant on the valid set")
    a = s_r / s_m
    return Calibration(a=a, b=f_r - a * f_m)


def disparity_to_depth(mono: DisparityMap, cal: Calibration) -> DepthImage:
    """Elementwise 1/(a*disparity + b); non-positive pixels become invalid."""
    calibrated = cal.a * mono.values + cal.b
    valid = mono.valid & (calibrated > 0)
    out = np.zeros_like(calibrated)
    out[valid] = 1.0 / calibrated[valid]
    return DepthImage(values=out, valid=valid)


def disparity_from_render(depth: NDArray, alpha: NDArray,
                          alpha_min: float = RENDER_ALPHA_MIN) -> DisparityMap:
    """Rendered depth to disparity; only alpha-backed pixels count as valid."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = (np.asarray(alpha) >= alpha_min) & (depth > 0)
    values = np.zeros_like(depth)
    values[valid] = 1.0 / depth[valid]
    return DisparityMap(values=values, valid=valid, source="rendered")


def depth_from_render(depth: NDArray, alpha: NDArray,
                      alpha_min: float = RENDER_ALPHA_MIN) -> DepthImage:
    depth = np.asarray(depth, dtype=np.float64)
    return DepthImage(values=depth, valid=(np.asarray(alpha) >= alpha_min) & (depth > 0))


def unproject(camera: Camera, pixel, depth):
    """World-space point(s) on the pixel ray at the given camera-frame distance.

    ``depth`` is measured along the ray from the camera center, matching the
    renderer's view-depth convention, so project/unproject round-trip exactly.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    single = pixel.ndim == 1
    pix = np.atleast_2d(pixel)
    d = np.atleast_1d(depth)
    if np.any(d <= 0):
        raise InputError("unprojection depth must be positive")
    rays = np.stack([
        (pix[:, 0] - camera.cx) / camera.fx,
        (pix[:, 1] - camera.cy) / camera.fy,
        np.ones(pix.shape[0]),
    ], axis=1)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    pts = camera.position[None, :] + (d[:, None] * rays) @ camera.R_w2c
    return pts[0] if single else pts


def build_delta_gaussians(edited_image, mask2d, mono_edited: DisparityMap,
                          mono_unedited: DisparityMap, rendered_depth: DepthImage,
                          camera: Camera, cal_unedited: Calibration,
                          stride: int = 1) -> GaussianCloud:
    """One new Gaussian per masked pixel at the depth-ratio-adjusted distance.

    Each emitted point carries the edited image's color, an isotropic
    one-pixel footprint (d*/fx), opacity 0.9, and identity rotation; pixels
    with any invalid depth are skipped with a counted warning. Raises
    InitializationFailedError when nothing survives.
    """
    edited_image = np.asarray(edited_image, dtype=np.float64)
    mask = np.asarray(getattr(mask2d, "values", mask2d), dtype=bool)
    h, w = mask.shape
    shapes = {edited_image.shape[:2], mono_edited.values.shape,
              mono_unedited.values.shape, rendered_depth.values.shape,
              (camera.height, camera.width)}
    if shapes != {(h, w)}:
        raise InputError("all frontal-view inputs must share one resolution")
    if stride < 1:
        raise InputError("stride must be >= 1")

    d_edited = disparity_to_depth(mono_edited, cal_unedited)
    d_unedited = disparity_to_depth(mono_unedited, cal_unedited)

    keep = np.zeros((h, w), dtype=bool)
    keep[::stride, ::stride] = True
    selected = mask & keep
    usable = (selected & d_edited.valid & d_unedited.valid & rendered_depth.valid)

    skipped = int(np.count_nonzero(selected) - np.count_nonzero(usable))
    if skipped:
        log.warning("delta-gaussian init skipped %d masked pixels with invalid depth",
                    skipped)
    ys, xs = np.nonzero(usable)  # row-major emission order
    if ys.size == 0:
        raise InitializationFailedError(
            "no masked pixel had valid monocular and rendered depth")

    ratio = d_edited.values[ys, xs] / d_unedited.values[ys, xs]
    d_star = ratio * rendered_depth.values[ys, xs]
    pixels = np.stack([xs.astype(np.float64), ys.astype(np.float64)], axis=1)
    points = unproject(camera, pixels, d_star)

    n = ys.size
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    scales = np.repeat((d_star / camera.fx)[:, None], 3, axis=1)
    colors = np.clip(edited_image[ys, xs], 0.0, 1.0)
    return GaussianCloud(
        means=points, quats=quats, scales=scales,
        opacities=np.full(n, DELTA_OPACITY), colors=colors,
        source_marker=np.ones(n, dtype=bool),
    )
