"""Separation distortion map, normalized distortion, and lower bounds.

With source rate R_s and channel rate R_c, transmitting at power p with
mismatch factor kappa (channel uses per source symbol) achieves

    D(p, kappa) = R_s^{-1}(kappa * R_c(p)).

The normalized form D_dagger(p, q) = q * D(p, 1/q) is jointly convex in
(p, q) on p >= 0, q > 0, which is what makes the constant-power,
matched-bandwidth scheme a lower bound on any average distortion.  The
convexity itself is checked empirically here (chords plus
finite-difference Hessians) rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .models import ArrivalModel, AwgnChannel, SourceModel
from .numerics import seeded_rng

__all__ = [
    "distortion",
    "gaussian_distortion",
    "d_dagger",
    "lower_bound",
    "ConvexityReport",
    "convexity_probe",
]


def distortion(src: SourceModel, ch: AwgnChannel, p: float, kappa: float) -> float:
    """Distortion of the separation scheme at power p, mismatch kappa.

    Parameters
    ----------
    src, ch : source and channel models
    p : transmit power, >= 0
    kappa : channel uses per source symbol, > 0

    Returns
    -------
    float
        ``src.rate_inverse(kappa * ch.rate(p))``; equals ``src.d_max`` at
        p = 0 and 0 once ``kappa * ch.rate(p)`` reaches the source's rate
        threshold.
    """
    if not kappa > 0.0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    return src.rate_inverse(kappa * ch.rate(p))


def gaussian_distortion(variance: float, noise: float, p: float, kappa: float) -> float:
    """Closed form sigma^2 (1 + p/N)^(-kappa) for the Gaussian/AWGN pair.

    Kept as an independent path so the generic inversion route can be
    cross-checked against it.
    """
    if not kappa > 0.0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    if p < 0.0:
        raise ValueError(f"power must be >= 0, got {p}")
    return variance * (1.0 + p / noise) ** (-kappa)


def d_dagger(src: SourceModel, ch: AwgnChannel, p: float, q: float) -> float:
    """Normalized distortion D_dagger(p, q) = q * D(p, 1/q) for q > 0."""
    if not q > 0.0:
        raise ValueError(f"q must be > 0, got {q}")
    return q * distortion(src, ch, p, 1.0 / q)


def lower_bound(
    src: SourceModel, ch: AwgnChannel, arrivals: ArrivalModel, capacity: float
) -> float:
    """Distortion floor for any policy on a battery of the given capacity.

    The long-run average power available to any policy is at most the
    delivered harvest rate (delta/lam) * (1 - exp(-lam * capacity)) —
    arrivals overshooting the capacity are clipped — and joint convexity
    of D_dagger turns that power budget into the bound
    D_dagger(p_avg, 1).  Independent of the leakage model (leakage only
    reduces what is actually available).
    """
    if not capacity > 0.0:
        raise ValueError(f"capacity must be positive, got {capacity}")
    if math.isinf(capacity):
        p_avg = arrivals.mean_harvest_rate
    else:
        p_avg = arrivals.mean_harvest_rate * (-math.expm1(-arrivals.lam * capacity))
    return d_dagger(src, ch, p_avg, 1.0)


@dataclass
class ConvexityReport:
    """Outcome of a randomized convexity probe of D_dagger.

    Violations are recorded (with their witness points), never raised, so
    a failing probe can be inspected.
    """

    chord_checks: int = 0
    hessian_checks: int = 0
    chord_violations: list = field(default_factory=list)
    hessian_violations: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        return len(self.chord_violations) + len(self.hessian_violations)

    @property
    def passed(self) -> bool:
        return self.violations == 0


# FD Hessians are meaningless where D_dagger has a kink (the
# zero-distortion boundary kappa*R_c = R_s^th), where curvature
# concentrates as D -> 0 (truncation error explodes), and where the
# determinant degenerates (p -> 0), so those checks carry margins; the
# chord test covers the full box, kink included.
_BOUNDARY_MARGIN = 1e-3   # rate-units distance from kappa*R_c = R_s^th
_EDGE_MARGIN = 1e-2       # smallest p and q probed with a Hessian
_DISTORTION_FLOOR = 1e-2  # smallest D/d_max probed with a Hessian


def _hessian_eligible(src, ch, p: float, q: float, hp: float, hq: float) -> bool:
    if p - hp <= 0.0 or q - hq <= 0.0:
        return False
    if p < _EDGE_MARGIN or q < _EDGE_MARGIN:
        return False
    if distortion(src, ch, p, 1.0 / q) < _DISTORTION_FLOOR * src.d_max:
        return False
    if math.isinf(src.rate_threshold):
        return True
    # every stencil corner must also sit strictly inside the
    # positive-distortion region, else the stencil straddles the kink
    for pp in (p - hp, p, p + hp):
        for qq in (q - hq, q, q + hq):
            if ch.rate(pp) / qq > src.rate_threshold - _BOUNDARY_MARGIN:
                return False
    return True


def convexity_probe(
    src: SourceModel,
    ch: AwgnChannel,
    samples: int,
    seed: int = 0,
    p_hi: float = 10.0,
    q_hi: float = 5.0,
) -> ConvexityReport:
    """Randomized chord and Hessian checks of D_dagger's joint convexity.

    For each of ``samples`` draws: two points in (0, p_hi] x (0, q_hi] and
    a mixing weight t get a chord check

        D_dagger(t*a + (1-t)*b) <= t*D_dagger(a) + (1-t)*D_dagger(b) + 1e-9,

    and the first point, when strictly interior (clear of the
    zero-distortion kink and of the degenerate p, q -> 0 edges), gets a
    central finite-difference Hessian check: leading minor and determinant
    both positive (Sylvester).

    Returns a :class:`ConvexityReport`; violations are recorded with their
    witness points rather than raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = seeded_rng(seed)
    rep = ConvexityReport()
    f = lambda p, q: d_dagger(src, ch, p, q)
    for _ in range(samples):
        u = rng.uniform(size=5)
        p1, p2 = (1.0 - u[0]) * p_hi, (1.0 - u[1]) * p_hi
        q1, q2 = (1.0 - u[2]) * q_hi, (1.0 - u[3]) * q_hi
        t = u[4]
        lhs = f(t * p1 + (1 - t) * p2, t * q1 + (1 - t) * q2)
        rhs = t * f(p1, q1) + (1 - t) * f(p2, q2)
        rep.chord_checks += 1
        if lhs > rhs + 1e-9:
            rep.chord_violations.append(
                {"p1": p1, "q1": q1, "p2": p2, "q2": q2, "t": t, "gap": lhs - rhs}
            )

        hp = 1e-4 * max(1.0, abs(p1))
        hq = 1e-4 * max(1.0, abs(q1))
        if not _hessian_eligible(src, ch, p1, q1, hp, hq):
            continue
        fpp = (f(p1 + hp, q1) - 2 * f(p1, q1) + f(p1 - hp, q1)) / (hp * hp)
        fqq = (f(p1, q1 + hq) - 2 * f(p1, q1) + f(p1, q1 - hq)) / (hq * hq)
        fpq = (
            f(p1 + hp, q1 + hq)
            - f(p1 + hp, q1 - hq)
            - f(p1 - hp, q1 + hq)
            + f(p1 - hp, q1 - hq)
        ) / (4 * hp * hq)
        det = fpp * fqq - fpq * fpq
        rep.hessian_checks += 1
        if not (fpp > 0.0 and det > 0.0):
            rep.hessian_violations.append(
                {"p": p1, "q": q1, "fpp": fpp, "det": det}
            )
    return rep
