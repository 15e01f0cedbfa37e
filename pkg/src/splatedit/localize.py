"""Per-view 2D edit masks from noise-prediction differences, lifted to a
per-Gaussian 3D mask by compositing-weight voting.

The 2D relevance of a pixel is the channel-mean absolute difference between
a prompt-conditioned and an unconditioned noise prediction on the same noised
latent (one shared noise sample, so the difference isolates guidance). The
grid is bilinearly upsampled to image resolution, min-max normalized per
view, Gaussian-smoothed, and binarized at gamma; gamma = 0 therefore yields
an all-one mask (the global-editing limit). Each Gaussian then votes across
views with the compositing weight it contributed to each masked pixel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import gaussian_filter

from .errors import InputError, LocalizationFailedError, StageError
from .imagefiles import load_mask_png, save_mask_png
from .render import accumulate_vote_weights
from .scene import Camera, GaussianCloud


@dataclass
class LocalizationConfig:
    tau: int = 600
    gamma: float = 0.6
    filter_sigma: float = 3.0
    vote_threshold: float = 0.6

    def __post_init__(self):
        if not (1 <= int(self.tau) <= 1000):
            raise InputError("tau must lie in [1, 1000]")
        if not (0.0 <= self.gamma <= 1.0):
            raise InputError("gamma must lie in [0, 1]")
        if self.filter_sigma < 0:
            raise InputError("filter_sigma must be non-negative")
        if not (0.0 < self.vote_threshold < 1.0):
            raise InputError("vote_threshold must lie in (0, 1)")


@dataclass
class Mask2D:
    values: NDArray            # HxW bool
    view_index: int = 0
    raw_relevance: NDArray = None  # HxW float in [0,1], pre-threshold

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        if self.raw_relevance is None:
            self.raw_relevance = self.values.astype(np.float64)
        self.raw_relevance = np.asarray(self.raw_relevance, dtype=np.float64)
        if self.values.shape != self.raw_relevance.shape:
            raise InputError("mask and relevance shapes differ")
        if np.any(self.raw_relevance < 0):
            raise InputError("relevance must be non-negative")

    @property
    def pixel_sum(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass
class Mask3D:
    values: NDArray        # per-Gaussian 0/1 after binarization
    vote_weights: NDArray  # per-Gaussian accumulated compositing weight

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        self.vote_weights = np.asarray(self.vote_weights, dtype=np.float64)
        if self.values.shape != self.vote_weights.shape:
            raise InputError("mask values and vote weights must align")


def bilinear_resize(grid: NDArray, out_shape) -> NDArray:
    """Separable bilinear resampling with corner-aligned endpoints."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    oh, ow = out_shape
    if (h, w) == (oh, ow):
        return grid.copy()

    def axis_coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out), np.zeros(n_out, dtype=int), np.zeros(n_out, dtype=int)
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
        return pos - lo, lo, lo + 1

    fy, y0, y1 = axis_coords(h, oh)
    fx, x0, x1 = axis_coords(w, ow)
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def relevance_from_noise(noise_cond, noise_uncond, out_shape=None) -> NDArray:
    """Channel-mean |cond - uncond|, upsampled and min-max normalized to [0,1].

    A constant grid (including identical inputs) normalizes to all zeros.
    """
    cond = np.asarray(noise_cond, dtype=np.float64)
    uncond = np.asarray(noise_uncond, dtype=np.float64)
    if cond.shape != uncond.shape:
        raise InputError(f"noise shapes differ: {cond.shape} vs {uncond.shape}")
    if cond.ndim == 2:
        cond, uncond = cond[None], uncond[None]
    if cond.ndim != 3:
        raise InputError("noise tensors must be (C, h, w)")
    rel = np.mean(np.abs(cond - uncond), axis=0)
    if out_shape is not None and tuple(out_shape) != rel.shape:
        rel = bilinear_resize(rel, out_shape)
    lo, hi = float(rel.min()), float(rel.max())
    if hi > lo:
        rel = (rel - lo) / (hi - lo)
    else:
        rel = np.zeros_like(rel)
    return rel


def smooth_and_threshold(relevance, cfg: LocalizationConfig,
                         view_index: int = 0) -> Mask2D:
    """Gaussian blur (3-sigma truncation) then binarize at gamma (>=)."""
    rel = np.asarray(relevance, dtype=np.float64)
    blurred = gaussian_filter(rel, sigma=cfg.filter_sigma, truncate=3.0,
                              mode="reflect") if cfg.filter_sigma > 0 else rel
    return Mask2D(values=blurred >= cfg.gamma, view_index=view_index,
                  raw_relevance=rel)


def locate_2d(view_image, prompt: str, noise_oracle, cfg: LocalizationConfig,
              view_index: int = 0, seed: int = 0) -> Mask2D:
    """Edit mask for one view: two noise predictions sharing one noise sample,
    then relevance and smoothing/thresholding."""
    image = np.asarray(view_image, dtype=np.float64)
    hw = image.shape[:2]
    try:
        cond = noise_oracle.predict_noise(image, prompt, cfg.tau, seed)
        uncond = noise_oracle.predict_noise(image, "", cfg.tau, seed)
    except Exception as e:
        raise StageError("locate", str(e), view_index=view_index) from e
    rel = relevance_from_noise(cond, uncond, out_shape=hw)
    return smooth_and_threshold(rel, cfg, view_index=view_index)


def inverse_render_masks(cloud: GaussianCloud, cameras: list[Camera],
                         masks: list[Mask2D], cfg: LocalizationConfig) -> Mask3D:
    """Lift 2D masks to a per-Gaussian mask by compositing-weight voting.

    Score_i = sum_views sum_pixels w_ivp * M_v(p) / sum w, binarized at the
    vote threshold; Gaussians invisible in every view score 0.
    """
    if not masks:
        raise InputError("need at least one view mask")
    if len(masks) > len(cameras):
        raise InputError("more masks than cameras")
    num = np.zeros(len(cloud))
    den = np.zeros(len(cloud))
    for mask in masks:
        cam = cameras[mask.view_index]
        if mask.values.shape != (cam.height, cam.width):
            raise InputError(f"mask {mask.view_index} does not match its camera")
        n, d = accumulate_vote_weights(cloud, cam, mask.values.astype(np.float64))
        num += n
        den += d
    score = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return Mask3D(values=score >= cfg.vote_threshold, vote_weights=den)


def select_frontal(masks: list[Mask2D]) -> int:
    """Index of the mask with the largest pixel sum; ties take the lowest index."""
    if not masks:
        raise InputError("no masks given")
    sums = [m.pixel_sum for m in masks]
    if max(sums) == 0:
        raise LocalizationFailedError("every view produced an empty edit mask")
    return int(np.argmax(sums))


# ---------------------------------------------------------------------------
# Persistence


def save_mask2d(mask: Mask2D, png_path, cfg: LocalizationConfig | None = None) -> None:
    png_path = Path(png_path)
    save_mask_png(mask.values, png_path)
    sidecar = {"view_index": mask.view_index}
    if cfg is not None:
        sidecar.update(gamma=cfg.gamma, tau=cfg.tau)
    png_path.with_suffix(".json").write_text(json.dumps(sidecar))


def load_mask2d(png_path) -> Mask2D:
    png_path = Path(png_path)
    values = load_mask_png(png_path)
    view_index = 0
    sidecar = png_path.with_suffix(".json")
    if sidecar.exists():
        view_index = int(json.loads(sidecar.read_text()).get("view_index", 0))
    return Mask2D(values=values, view_index=view_index)


def save_mask3d(mask: Mask3D, path) -> None:
    """Flat binary: little-endian uint64 count, then one byte per Gaussian."""
    with open(Path(path), "wb") as f:
        f.write(np.uint64(mask.values.size).tobytes())
        f.write(mask.values.astype(np.uint8).tobytes())


def load_mask3d(path) -> Mask3D:
    with open(Path(path), "rb") as f:
        count = int(np.frombuffer(f.read(8), dtype="<u8")[0])
        values = np.frombuffer(f.read(count), dtype=np.uint8).astype(bool)
    if values.size != count:
        raise InputError(f"{path}: truncated 3D mask payload")
    return Mask3D(values=values, vote_weights=np.zeros(count))
