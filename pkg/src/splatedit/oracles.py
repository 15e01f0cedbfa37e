"""Protocols and deterministic mock implementations for the learned 2D
priors (editor, noise predictor, monocular depth, perceptual distance), plus
the shared forward-noising schedule.

Every numeric/geometric stage of the pipeline talks to these four small
interfaces only, so the whole system runs and is tested offline with the
mocks; the bridge package provides drop-in remote-backed implementations of
the same protocols.

All mocks are pure and bit-deterministic under a fixed seed. Image-matched
registries compare by content so a mock can serve per-view specs without the
protocol carrying view identifiers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol
from zlib import crc32

import numpy as np
from numpy.typing import NDArray

from .depth_init import DisparityMap
from .errors import InputError, OracleError

MAX_TIMESTEP = 1000
# Blend of the mock editor saturates at this starting timestep.
FULL_EDIT_T = 750


def derive_rng(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Named counter-based substream: same (seed, label, indices) -> same stream."""
    key = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                 spawn_key=(crc32(label.encode()), *indices))
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cumulative alpha-bar products.

    ``alpha_bars[t-1]`` is the noise retention at integer timestep t in
    [1, 1000]; t = 0 means no noise (alpha-bar 1) by convention.
    """

    betas: NDArray
    alpha_bars: NDArray

    @classmethod
    def linear(cls, beta_start: float = 1e-4, beta_end: float = 2e-2,
               steps: int = MAX_TIMESTEP) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, steps)
        return cls(betas=betas, alpha_bars=np.cumprod(1.0 - betas))

    @classmethod
    def from_alpha_bars(cls, alpha_bars) -> "NoiseSchedule":
        ab = np.asarray(alpha_bars, dtype=np.float64)
        if ab.ndim != 1 or np.any(np.diff(ab) >= 0):
            raise InputError("alpha_bars must be 1-D and strictly decreasing")
        prev = np.concatenate([[1.0], ab[:-1]])
        return cls(betas=1.0 - ab / prev, alpha_bars=ab)

    def alpha_bar(self, t: int) -> float:
        t = int(t)
        if not (0 <= t <= len(self.alpha_bars)):
            raise InputError(f"timestep {t} outside [0, {len(self.alpha_bars)}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])


def add_noise(signal, t: int, eps, schedule: NoiseSchedule | None = None):
    """Forward noising: sqrt(abar_t) * signal + sqrt(1 - abar_t) * eps."""
    signal = np.asarray(signal, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if signal.shape != eps.shape:
        raise InputError("signal and noise shapes differ")
    schedule = schedule or NoiseSchedule.linear()
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * signal + np.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# Protocols


class EditorOracle(Protocol):
    def edit(self, original, coarse, prompt: str, start_t: int,
             guidance: float) -> NDArray: ...


class NoisePredictor(Protocol):
    def predict_noise(self, image, prompt: str, tau: int, seed: int) -> NDArray: ...


class DepthEstimator(Protocol):
    def estimate(self, image) -> DisparityMap: ...


class PerceptualMetric(Protocol):
    def distance(self, image, target) -> tuple[float, NDArray]: ...


@dataclass
class OracleSuite:
    editor: EditorOracle
    noise: NoisePredictor
    depth: DepthEstimator
    perceptual: PerceptualMetric | None = None


def _match(registry, image, what):
    """Find a registered spec by image content; None keys act as default."""
    default = None
    for key, payload in registry:
        if key is None:
            default = payload
        elif key.shape == image.shape and np.allclose(key, image, atol=1e-6):
            return payload
    if default is not None:
        return default
    raise OracleError(f"no registered {what} spec matches the request")


# ---------------------------------------------------------------------------
# Mocks


class MockEditor:
    """Blends the coarse image toward a registered target inside a region.

    The blend factor min(1, start_t / 750) mimics denoising strength: higher
    starting timesteps edit more. Pixels outside the region are returned
    bit-identical to the coarse input.
    """

    def __init__(self, target=None, region=None):
        self._specs: list[tuple] = []
        if target is not None:
            self.register(target, region)

    def register(self, target, region, match_original=None):
        target = np.asarray(target, dtype=np.float64)
        region = (np.ones(target.shape[:2], dtype=bool) if region is None
                  else np.asarray(region, dtype=bool))
        key = None if match_original is None else np.asarray(match_original, np.float64)
        self._specs.append((key, (target, region)))

    def edit(self, original, coarse, prompt, start_t, guidance):
        original = np.asarray(original, dtype=np.float64)
        coarse = np.asarray(coarse, dtype=np.float64)
        target, region = _match(self._specs, original, "edit")
        blend = min(1.0, max(0.0, start_t / FULL_EDIT_T))
        if blend == 0.0:
            return coarse.copy()
        out = coarse.copy()
        out[region] += blend * (target[region] - coarse[region])
        return out


class MockNoisePredictor:
    """Seeded pseudo-random base prediction; a non-empty prompt adds a
    registered blob to channel 0 so the relevance recovers it exactly."""

    def __init__(self, region=None, amplitude: float = 1.0, channels: int = 4,
                 latent_downscale: int = 8):
        self.amplitude = float(amplitude)
        self.channels = int(channels)
        self.latent_downscale = int(latent_downscale)
        self._specs: list[tuple] = []
        if region is not None:
            self.register(region)

    def register(self, region, match_image=None):
        key = None if match_image is None else np.asarray(match_image, np.float64)
        self._specs.append((key, np.asarray(region, dtype=bool)))

    def latent_shape(self, image) -> tuple[int, int, int]:
        h = max(1, image.shape[0] // self.latent_downscale)
        w = max(1, image.shape[1] // self.latent_downscale)
        return (self.channels, h, w)

    def predict_noise(self, image, prompt, tau, seed):
        image = np.asarray(image, dtype=np.float64)
        shape = self.latent_shape(image)
        base = derive_rng(seed, "mock-noise", int(tau)).standard_normal(shape)
        if not prompt:
            return base
        region = _match(self._specs, image, "relevance")
        if region.shape != shape[1:]:
            raise OracleError(
                f"relevance region {region.shape} does not match latent {shape[1:]}")
        out = base.copy()
        out[0][region] += self.amplitude
        return out


class MockDepth:
    """Affine-corrupted ground-truth disparity: (true - b0) / a0, so a
    median/MAD calibration against the rendered disparity must recover
    exactly (a0, b0)."""

    def __init__(self, a0: float = 1.0, b0: float = 0.0):
        if a0 <= 0:
            raise InputError("corruption scale must stay positive")
        self.a0 = float(a0)
        self.b0 = float(b0)
        self._entries: list[tuple] = []

    def register(self, disparity_true, match_image=None, valid=None):
        disparity_true = np.asarray(disparity_true, dtype=np.float64)
        if valid is None:
            valid = disparity_true > 0
        key = None if match_image is None else np.asarray(match_image, np.float64)
        self._entries.append((key, (disparity_true, np.asarray(valid, bool))))

    def estimate(self, image) -> DisparityMap:
        image = np.asarray(image, dtype=np.float64)
        if not self._entries:
            raise OracleError("no registered depth spec")
        true, valid = self._nearest(image)
        values = (true - self.b0) / self.a0
        valid = valid & (values > 0)
        return DisparityMap(values=np.where(valid, values, 0.0), valid=valid,
                            source="monocular")

    def _nearest(self, image):
        # Exact match first, then closest by mean absolute difference, so the
        # mock still answers for lightly edited variants of a registered view.
        best, best_err = None, np.inf
        default = None
        for key, payload in self._entries:
            if key is None:
                default = payload
                continue
            if key.shape != image.shape:
                continue
            err = float(np.mean(np.abs(key - image)))
            if err < best_err:
                best, best_err = payload, err
        if best is not None:
            return best
        if default is not None:
            return default
        raise OracleError("no registered depth spec matches the request shape")


class MockPerceptual:
    """Downsampled-L2 stand-in for a learned perceptual distance.

    Returns the distance and its exact gradient with respect to the first
    image, which is what fine-tuning consumes.
    """

    def __init__(self, block: int = 4):
        if block < 1:
            raise InputError("block size must be >= 1")
        self.block = int(block)

    def distance(self, image, target):
        a = np.asarray(image, dtype=np.float64)
        b = np.asarray(target, dtype=np.float64)
        if a.shape != b.shape:
            raise InputError("perceptual inputs must share a shape")
        k = self.block
        h, w = (a.shape[0] // k) * k, (a.shape[1] // k) * k
        if h == 0 or w == 0:
            raise InputError("image smaller than one pooling block")

        def down(x):
            x = x[:h, :w]
            return x.reshape(h // k, k, w // k, k, -1).mean(axis=(1, 3))

        diff = down(a) - down(b)
        value = float(np.mean(diff**2))
        grad = np.zeros_like(a).reshape(a.shape[0], a.shape[1], -1)
        # Exact adjoint of block-mean pooling.
        per_cell = 2.0 * diff / diff.size / (k * k)
        grad[:h, :w] = np.repeat(np.repeat(per_cell, k, axis=0), k, axis=1)
        return value, grad.reshape(a.shape)


def default_mock_suite(scene, cameras, seed: int = 0,
                       edit_color=(0.85, 0.15, 0.15),
                       depth_corruption=(2.5, -0.3)) -> OracleSuite:
    """Self-configuring mock suite derived from the scene, used by the CLI's
    --mock-oracles mode: recolor a central disk of every view, with depth
    behaving as if the edit left geometry unchanged."""
    from .render import render  # local import to avoid a cycle at module load

    editor = MockEditor()
    noise = MockNoisePredictor(amplitude=1.0)
    depth = MockDepth(a0=depth_corruption[0], b0=depth_corruption[1])
    edit_color = np.asarray(edit_color, dtype=np.float64)

    for cam in cameras:
        out = render(scene, cam)
        h, w = cam.height, cam.width
        yy, xx = np.mgrid[0:h, 0:w]
        r = min(h, w) / 4.0
        region = (yy - h / 2.0) ** 2 + (xx - w / 2.0) ** 2 <= r**2

        target = out.color.copy()
        target[region] = 0.35 * target[region] + 0.65 * edit_color
        editor.register(target, region, match_original=out.color)

        lh = max(1, h // noise.latent_downscale)
        lw = max(1, w // noise.latent_downscale)
        lyy, lxx = np.mgrid[0:lh, 0:lw]
        lregion = ((lyy - lh / 2.0) ** 2 + (lxx - lw / 2.0) ** 2
                   <= (min(lh, lw) / 4.0) ** 2)
        noise.register(lregion, match_image=out.color)

        disparity = np.where(out.depth > 0, 1.0 / np.maximum(out.depth, 1e-9), 0.0)
        valid = (out.alpha >= 0.5) & (out.depth > 0)
        depth.register(disparity, match_image=out.color, valid=valid)
        depth.register(disparity, match_image=target, valid=valid)

    return OracleSuite(editor=editor, noise=noise, depth=depth,
                       perceptual=MockPerceptual())
