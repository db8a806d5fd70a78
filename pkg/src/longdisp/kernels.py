"""Kernel functions used by every smoother in the package.

All families are symmetric, nonnegative, integrate to one, and vanish
outside [-1, 1].  Compact support is deliberate: it keeps weight vectors
sparse and lets callers drop out-of-window observations with no effect
on the fitted values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_FAMILIES = ("epanechnikov", "triweight", "uniform")


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family selector.

    family: one of "epanechnikov" (default), "triweight", "uniform".
    """

    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(
                f"unknown kernel family {self.family!r}; choose from {_FAMILIES}"
            )

    @property
    def height(self) -> float:
        """Peak value K(0); the weight of an observation sitting exactly on target."""
        return {"epanechnikov": 0.75, "triweight": 35.0 / 32.0, "uniform": 0.5}[
            self.family
        ]

    def evaluate(self, u):
        """Vectorized K(u); accepts scalars or arrays, returns float64."""
        u = np.asarray(u, dtype=np.float64)
        inside = np.abs(u) <= 1.0
        if self.family == "epanechnikov":
            vals = 0.75 * (1.0 - u * u)
        elif self.family == "triweight":
            one_minus = 1.0 - u * u
            vals = (35.0 / 32.0) * one_minus * one_minus * one_minus
        else:  # uniform
            vals = np.full_like(u, 0.5)
        return np.where(inside, vals, 0.0)


EPANECHNIKOV = KernelSpec("epanechnikov")
TRIWEIGHT = KernelSpec("triweight")
UNIFORM = KernelSpec("uniform")


def kernel_eval(spec: KernelSpec, u: float) -> float:
    """Evaluate K(u) for a single point."""
    if not np.isfinite(u):
        raise ValueError(f"kernel argument must be finite, got {u!r}")
    return float(spec.evaluate(u))


def weight_vector(spec, centers, target: float, bandwidth: float) -> np.ndarray:
    """Unnormalized kernel weights K((c - target) / bandwidth) for each center.

    Normalization is left to the weighted least-squares solve that consumes
    the weights.
    """
    if not (np.isfinite(bandwidth) and bandwidth > 0):
        raise ValueError(f"bandwidth must be positive, got {bandwidth!r}")
    centers = np.asarray(centers, dtype=np.float64)
    return spec.evaluate((centers - target) / bandwidth)
