"""Flow-matching primitives shared by the trajectory and action experts.

Convention: flow time tau runs from 0 (pure noise) to 1 (clean data) along
the linear interpolant x_tau = tau * x_star + (1 - tau) * z. The regression
target for a denoiser is z - x_star, so integrating the learned field with
x <- x - dt * field walks a noise sample to the data end of the path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SamplingError

# Flow times are sampled from [0, 1 - TAU_EPSILON]: the conditional field
# (x - x_star) / (1 - tau) blows up at tau = 1, so training never quite
# reaches the clean endpoint.
TAU_EPSILON = 1e-3

DEFAULT_SAMPLE_STEPS = 10


@dataclass(frozen=True)
class FlowSample:
    """One training draw: noise, the interpolated state, and the target field."""

    tau: float
    z: np.ndarray
    x_tau: np.ndarray
    v_star: np.ndarray

    @classmethod
    def create(cls, x_star: np.ndarray, z: np.ndarray, tau: float) -> "FlowSample":
        return cls(tau=float(tau), z=np.asarray(z, dtype=np.float64),
                   x_tau=interpolate(x_star, z, tau),
                   v_star=target_velocity(x_star, z))


def interpolate(x_star: np.ndarray, z: np.ndarray, tau: float) -> np.ndarray:
    """tau * x_star + (1 - tau) * z, elementwise."""
    x_star = np.asarray(x_star, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_star.shape != z.shape:
        raise ValueError(f"shape mismatch: {x_star.shape} vs {z.shape}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return tau * x_star + (1.0 - tau) * z


def target_velocity(x_star: np.ndarray, z: np.ndarray) -> np.ndarray:
    """The field-regression target z - x_star."""
    x_star = np.asarray(x_star, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_star.shape != z.shape:
        raise ValueError(f"shape mismatch: {x_star.shape} vs {z.shape}")
    return z - x_star


def sample_tau(rng: np.random.Generator) -> float:
    """Uniform flow time on [0, 1 - TAU_EPSILON]."""
    return float(rng.uniform(0.0, 1.0 - TAU_EPSILON))


def euler_sample(field: Callable[[np.ndarray, float], np.ndarray], x0: np.ndarray,
                 n_steps: int) -> np.ndarray:
    """Integrate the learned field from noise (tau=0) to data (tau=1).

    Uses the uniform grid tau_k = k / n_steps with update
    x <- x - (1/n_steps) * field(x, tau_k). The minus sign matches the
    constructor convention: the field approximates z - x_star while the
    interpolant's velocity is x_star - z.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = np.asarray(x0, dtype=np.float64).copy()
    dt = 1.0 / n_steps
    for k in range(n_steps):
        v = np.asarray(field(x, k * dt))
        if not np.all(np.isfinite(v)):
            raise SamplingError(f"non-finite field output at step {k}", step=k)
        x = x - dt * v
    return x
