"""Source, channel, leakage and energy-arrival models.

Sources are rate-distortion descriptions R_s(D); the channel is a
power-to-rate map R_c(p).  Both expose first and second derivatives and
exact inverses so the policy layer can differentiate through them.  All
rates are in bits (base-2 logarithms throughout: the source and channel
rates must share a base for the mismatch factor to be dimensionless, and
the closed forms used in testing are written base 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "binary_entropy",
    "GaussianSource",
    "BernoulliSource",
    "SourceModel",
    "AwgnChannel",
    "ZeroLeakage",
    "IncreasingLeakage",
    "DecreasingLeakage",
    "ConstantLeakage",
    "TabulatedLeakage",
    "LeakageModel",
    "ArrivalModel",
    "SystemConfig",
]

_LN2 = math.log(2.0)


def binary_entropy(d: float) -> float:
    """H(d) = -d*log2(d) - (1-d)*log2(1-d), with 0*log(0) := 0."""
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"binary entropy needs d in [0, 1], got {d}")
    if d == 0.0 or d == 1.0:
        return 0.0
    return -(d * math.log2(d) + (1.0 - d) * math.log2(1.0 - d))


@dataclass(frozen=True)
class GaussianSource:
    """Gaussian source under squared error: R_s(D) = (1/2) log2(variance/D)."""

    variance: float

    def __post_init__(self):
        if not (self.variance > 0.0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def d_max(self) -> float:
        return self.variance

    @property
    def rate_threshold(self) -> float:
        # zero distortion needs unbounded rate for a continuous source
        return math.inf

    def rate(self, d: float) -> float:
        if d < 0.0:
            raise ValueError(f"distortion must be >= 0, got {d}")
        if d == 0.0:
            return math.inf
        if d >= self.variance:
            return 0.0
        return 0.5 * math.log2(self.variance / d)

    def rate_derivatives(self, d: float) -> tuple[float, float]:
        if not 0.0 < d < self.d_max:
            raise ValueError(f"need 0 < d < {self.d_max}, got {d}")
        return -1.0 / (2.0 * d * _LN2), 1.0 / (2.0 * d * d * _LN2)

    def rate_inverse(self, r: float) -> float:
        if r < 0.0:
            raise ValueError(f"rate must be >= 0, got {r}")
        if r == 0.0:
            return self.d_max
        if math.isinf(r):
            return 0.0
        return self.variance * 2.0 ** (-2.0 * r)


@dataclass(frozen=True)
class BernoulliSource:
    """Bernoulli(prob) source under Hamming distortion: R_s(D) = H(prob) - H(D)."""

    prob: float

    def __post_init__(self):
        if not 0.0 < self.prob < 1.0:
            raise ValueError(f"prob must be in (0, 1), got {self.prob}")

    @property
    def d_max(self) -> float:
        return min(self.prob, 1.0 - self.prob)

    @property
    def rate_threshold(self) -> float:
        return binary_entropy(self.prob)

    def rate(self, d: float) -> float:
        if d < 0.0:
            raise ValueError(f"distortion must be >= 0, got {d}")
        if d >= self.d_max:
            return 0.0
        return self.rate_threshold - binary_entropy(d)

    def rate_derivatives(self, d: float) -> tuple[float, float]:
        if not 0.0 < d < self.d_max:
            raise ValueError(f"need 0 < d < {self.d_max}, got {d}")
        first = math.log2(d / (1.0 - d))
        second = 1.0 / (d * (1.0 - d) * _LN2)
        return first, second

    def rate_inverse(self, r: float) -> float:
        if r < 0.0:
            raise ValueError(f"rate must be >= 0, got {r}")
        if r == 0.0:
            return self.d_max
        if r >= self.rate_threshold:
            return 0.0
        # invert H on (0, d_max]: H is strictly increasing there and
        # H(d_max) = H(prob), so the target entropy is always bracketed
        target = self.rate_threshold - r
        lo, hi = 1e-300, self.d_max
        for _ in range(200):
            if hi - lo <= 1e-15:
                break
            mid = 0.5 * (lo + hi)
            if binary_entropy(mid) < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


SourceModel = Union[GaussianSource, BernoulliSource]


@dataclass(frozen=True)
class AwgnChannel:
    """Average-power-constrained Gaussian channel: R_c(p) = (1/2) log2(1 + p/noise)."""

    noise: float

    def __post_init__(self):
        if not (self.noise > 0.0 and math.isfinite(self.noise)):
            raise ValueError(f"noise must be positive, got {self.noise}")

    def rate(self, p: float) -> float:
        if p < 0.0:
            raise ValueError(f"power must be >= 0, got {p}")
        return 0.5 * math.log2(1.0 + p / self.noise)

    def rate_derivatives(self, p: float) -> tuple[float, float]:
        if p < 0.0:
            raise ValueError(f"power must be >= 0, got {p}")
        denom = self.noise + p
        first = 1.0 / (2.0 * _LN2 * denom)
        second = -1.0 / (2.0 * _LN2 * denom * denom)
        return first, second


# ---------------------------------------------------------------------------
# Leakage
# ---------------------------------------------------------------------------
#
# Leakage is a charge-dependent drain rate ell(z) >= 0, bounded on (0, L].
# The storage dynamics only ever evaluate it for z > 0; an empty battery
# loses nothing, so the drain rate at z = 0 is zero by convention
# regardless of the model's limit from above.

def _check_charge(z):
    if np.any(np.asarray(z) < 0.0):
        raise ValueError("charge must be >= 0")


@dataclass(frozen=True)
class ZeroLeakage:
    def rate(self, z):
        _check_charge(z)
        return np.zeros_like(z, dtype=float) if np.ndim(z) else 0.0


@dataclass(frozen=True)
class IncreasingLeakage:
    """ell(z) = 1 - exp(-z): loss grows with the stored charge."""

    def rate(self, z):
        _check_charge(z)
        out = -np.expm1(-np.asarray(z, dtype=float))
        return out if np.ndim(z) else float(out)


@dataclass(frozen=True)
class DecreasingLeakage:
    """ell(z) = exp(-z): loss is worst right after depletion."""

    def rate(self, z):
        _check_charge(z)
        out = np.exp(-np.asarray(z, dtype=float))
        return out if np.ndim(z) else float(out)


@dataclass(frozen=True)
class ConstantLeakage:
    """ell(z) = 1."""

    def rate(self, z):
        _check_charge(z)
        return np.ones_like(z, dtype=float) if np.ndim(z) else 1.0


@dataclass(frozen=True)
class TabulatedLeakage:
    """Linear interpolation of a (charge, rate) table.

    Extrapolation is constant on both sides (the right edge keeps the
    table bounded, as required of any leakage model).
    """

    charges: tuple
    rates: tuple

    def __post_init__(self):
        zs = np.asarray(self.charges, dtype=float)
        vs = np.asarray(self.rates, dtype=float)
        if zs.ndim != 1 or zs.shape != vs.shape or zs.size < 2:
            raise ValueError("need matching 1-d tables with at least two rows")
        if np.any(np.diff(zs) <= 0.0):
            raise ValueError("table charges must be strictly increasing")
        if np.any(zs < 0.0) or np.any(vs < 0.0) or not np.all(np.isfinite(vs)):
            raise ValueError("table entries must be finite and non-negative")
        object.__setattr__(self, "charges", tuple(float(z) for z in zs))
        object.__setattr__(self, "rates", tuple(float(v) for v in vs))

    def rate(self, z):
        _check_charge(z)
        out = np.interp(np.asarray(z, dtype=float), self.charges, self.rates)
        return out if np.ndim(z) else float(out)


LeakageModel = Union[
    ZeroLeakage, IncreasingLeakage, DecreasingLeakage, ConstantLeakage, TabulatedLeakage
]


@dataclass(frozen=True)
class ArrivalModel:
    """Compound Poisson energy arrivals.

    Packets arrive at Poisson rate ``delta`` (events per unit time) and
    carry Exp(``lam``) energy, so the mean harvest rate is delta/lam.
    """

    delta: float
    lam: float

    def __post_init__(self):
        # delta = 0 (arrivals switched off) is a meaningful degenerate case
        # for drain-only simulation runs
        if not (self.delta >= 0.0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be positive, got {self.lam}")

    @property
    def mean_harvest_rate(self) -> float:
        return self.delta / self.lam


@dataclass(frozen=True)
class SystemConfig:
    """Battery-side description: arrivals, leakage, capacity, startup power.

    ``p0plus`` is the power prescribed just above the empty state; policies
    are anchored to it as their initial condition.  Capacity may be
    ``math.inf`` for the unbounded-storage analyses.
    """

    arrivals: ArrivalModel
    leakage: LeakageModel = field(default_factory=ZeroLeakage)
    capacity: float = math.inf
    p0plus: float = 1e-3

    def __post_init__(self):
        if not self.capacity > 0.0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if not (self.p0plus > 0.0 and math.isfinite(self.p0plus)):
            raise ValueError(f"p0plus must be positive, got {self.p0plus}")
