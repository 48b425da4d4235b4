"""How many simulation replicates a confidence interval needs."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import ndtri


@dataclass(frozen=True)
class SampleSizeParams:
    """Inputs to the required-replicates calculation.

    ``l`` is the target half-length of the interval, in the units of the
    measured quantity; ``population`` is None for an effectively infinite
    population, else its size N.
    """

    z: float
    sigma: float
    l: float  # noqa: E741
    population: int | None = None
    alpha: float | None = None

    def __post_init__(self) -> None:
        if not self.z > 0:
            raise ValueError("z must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.l > 0:
            raise ValueError("half-length l must be positive")
        if self.population is not None and self.population < 2:
            raise ValueError("finite population needs N >= 2")
        if self.alpha is not None and abs(z_from_alpha(self.alpha) - self.z) > 1e-3:
            raise ValueError(f"z={self.z} inconsistent with alpha={self.alpha}")


def z_from_alpha(alpha: float) -> float:
    """Two-sided standard normal quantile Phi^-1(1 - alpha/2)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    # ndtri(1 - alpha/2) loses digits for tiny alpha; use the symmetric form
    return float(-ndtri(alpha / 2.0))


def min_samples(p: SampleSizeParams) -> tuple[float, int]:
    """Return (n_raw, n): n = z^2 sigma^2 / l^2, with the finite-population
    correction N z^2 sigma^2 / (l^2 (N - 1) + z^2 sigma^2) when N is given;
    n is n_raw rounded up."""
    zs2 = p.z**2 * p.sigma**2
    if p.population is None:
        n_raw = zs2 / p.l**2
    else:
        N = p.population
        n_raw = N * zs2 / (p.l**2 * (N - 1) + zs2)
    return n_raw, math.ceil(n_raw)


def sigma_from_range(value_range: float) -> float:
    """Six-sigma heuristic: a normal population spans about 6 sigma."""
    if not value_range > 0:
        raise ValueError("range must be positive")
    return value_range / 6.0


def mean_std(values) -> tuple[float, float | None]:
    """Mean and sample standard deviation (n - 1); std is None for n < 2."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("no values")
    m = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return m, None
    var = math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1)
    return m, math.sqrt(var)
