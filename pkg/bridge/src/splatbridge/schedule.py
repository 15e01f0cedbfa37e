"""The bridge's native forward-noising schedule.

Linear betas from 1e-4 to 2e-2 over 1000 steps; ``alpha_bars[t-1]`` is the
cumulative product at integer timestep t, with t = 0 meaning no noise. The
table is reported in the hello handshake so clients can mirror it.
"""

import numpy as np

STEPS = 1000


def alpha_bars(steps: int = STEPS, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> np.ndarray:
    betas = np.linspace(beta_start, beta_end, steps)
    return np.cumprod(1.0 - betas)


def alpha_bar_at(table: np.ndarray, t: int) -> float:
    if not (0 <= t <= len(table)):
        raise ValueError(f"timestep {t} outside [0, {len(table)}]")
    return 1.0 if t == 0 else float(table[t - 1])


def add_noise(signal: np.ndarray, t: int, eps: np.ndarray,
              table: np.ndarray) -> np.ndarray:
    ab = alpha_bar_at(table, t)
    return np.sqrt(ab) * signal + np.sqrt(1.0 - ab) * eps
