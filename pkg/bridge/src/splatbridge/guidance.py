"""Classifier-free guidance and the partial denoising loop.

The guided prediction combines the image+text-conditioned and the
image-only noise estimates,

    guided = (1 + w) * eps(z, z_image, prompt) - w * eps(z, z_image),

equivalently cond + w * (cond - uncond). Editing starts from the coarse
image's latent noised to the requested timestep and denoises with DDIM-style
deterministic steps; higher starting timesteps therefore permit larger
edits.
"""

from __future__ import annotations

import numpy as np

from .schedule import alpha_bar_at

DEFAULT_SAMPLE_STEPS = 10


def guided_noise(backend, z, image_latent, prompt: str, w: float, t: int,
                 seed: int) -> np.ndarray:
    """Eq.-style combination of conditional and unconditional predictions."""
    cond = backend.predict_noise(z, image_latent, prompt, t, seed)
    if w == 0.0:
        return cond
    uncond = backend.predict_noise(z, image_latent, "", t, seed)
    return cond + w * (cond - uncond)


def denoise_from(backend, z_t, image_latent, prompt: str, w: float,
                 start_t: int, table, seed: int,
                 steps: int = DEFAULT_SAMPLE_STEPS) -> np.ndarray:
    """Deterministic denoising from timestep ``start_t`` down to 0.

    Returns the final clean-latent estimate. ``start_t`` = 0 returns the
    input unchanged (no steps to run).
    """
    if start_t <= 0:
        return z_t
    timesteps = np.unique(np.linspace(0, start_t, min(steps, start_t) + 1)
                          .round().astype(int))[::-1]
    z = z_t
    x0 = z_t
    for t_now, t_next in zip(timesteps[:-1], timesteps[1:]):
        eps = guided_noise(backend, z, image_latent, prompt, w, int(t_now), seed)
        ab_now = alpha_bar_at(table, int(t_now))
        ab_next = alpha_bar_at(table, int(t_next))
        x0 = (z - np.sqrt(1.0 - ab_now) * eps) / np.sqrt(ab_now)
        z = np.sqrt(ab_next) * x0 + np.sqrt(1.0 - ab_next) * eps
    return x0
