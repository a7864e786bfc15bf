"""Self-contained numerical kernel.

Real Lambert W branches, bracketed scalar root finding, an embedded
adaptive Runge-Kutta integrator, composite quadrature on graded grids,
and a deterministic seedable random stream.  Nothing in here knows about
sources, channels or batteries; the rest of the package builds on this
single auditable core instead of pulling in a general-purpose solver
library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericsError",
    "SingularityError",
    "ConvergenceError",
    "lambert_w",
    "RootBracket",
    "find_root",
    "integrate_ode",
    "Grid",
    "quadrature",
    "cumulative_integral",
    "Rng",
    "seeded_rng",
]

_INV_E = math.exp(-1.0)


class NumericsError(Exception):
    """Base class for numerical failures (as opposed to bad inputs)."""


class SingularityError(NumericsError):
    """ODE integration halted early (blow-up, domain exit, step underflow).

    Carries the independent variable ``z`` at which integration stopped.
    """

    def __init__(self, message: str, z: float):
        super().__init__(f"{message} (at z={z!r})")
        self.message = message
        self.z = z


class ConvergenceError(NumericsError):
    """An iteration failed to reach its tolerance within its budget."""


# ---------------------------------------------------------------------------
# Lambert W
# ---------------------------------------------------------------------------

def lambert_w(branch: int, x: float) -> float:
    """Real Lambert W: the solution w of w*exp(w) = x on the given branch.

    branch 0 is defined for x >= -1/e and returns w >= -1; branch -1 is
    defined for -1/e <= x < 0 and returns w <= -1.  The result satisfies
    |w*exp(w) - x| <= 1e-12 * max(1, |x|); the scaling only matters for
    branch-0 arguments far above 1, where the identity itself is that
    ill-conditioned in double precision -- on [-1/e, 1] the bound is the
    plain absolute 1e-12.

    Method: a cheap initial guess (square-root series near the branch
    point x = -1/e, logarithmic asymptotics elsewhere) refined by Halley
    iterations, which converge at better-than-quadratic rate for this
    function.
    """
    x = float(x)
    if branch not in (0, -1):
        raise ValueError(f"branch must be 0 or -1, got {branch}")
    if not math.isfinite(x):
        raise ValueError("x must be finite")
    if x < -_INV_E:
        # tolerate values a few ulp past the branch point, reject the rest
        if x > -_INV_E - 1e-14:
            return -1.0
        raise ValueError(f"x={x} below the branch point -1/e")
    if branch == -1 and x >= 0.0:
        raise ValueError(f"branch -1 requires x < 0, got {x}")

    if branch == 0 and x == 0.0:
        return 0.0

    # initial guess
    t = 2.0 * (math.e * x + 1.0)
    if t <= 0.0:
        return -1.0  # exactly at the branch point within rounding
    if x < -0.25:
        # series around the branch point: w = -1 + s - s^2/3 + 11 s^3/72,
        # with s = +sqrt(t) on branch 0 and -sqrt(t) on branch -1
        s = math.sqrt(t) if branch == 0 else -math.sqrt(t)
        w = -1.0 + s * (1.0 + s * (-1.0 / 3.0 + s * (11.0 / 72.0)))
    elif branch == 0:
        w = math.log1p(x)
    else:
        # branch -1, x in (-0.25, 0): asymptotic guess from w ~ ln(-x) - ln(-ln(-x))
        lx = math.log(-x)
        w = lx - math.log(-lx)

    # Halley refinement
    tol = 0.25e-12 * max(1.0, abs(x))
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        if abs(f) <= tol:
            break
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w -= step
        if abs(step) <= 1e-16 * (1.0 + abs(w)):
            break
    else:
        raise ConvergenceError(f"lambert_w({branch}, {x}) did not converge")

    resid = abs(w * math.exp(w) - x)
    if resid > 1e-12 * max(1.0, abs(x)):
        raise ConvergenceError(
            f"lambert_w({branch}, {x}): residual {resid:.3e} above tolerance"
        )
    return w


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RootBracket:
    """An interval [lo, hi] on which a continuous function changes sign."""

    lo: float
    hi: float
    tol: float = 1e-12

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


def find_root(g, bracket: RootBracket, max_iter: int = 200) -> float:
    """Bisection root of g on the bracket.

    Deterministic; returns a point r with either |g(r)| = 0 hit exactly or
    final bracket width below ``bracket.tol``.  Raises ValueError if the
    function values at the endpoints do not straddle a sign change.
    """
    lo, hi = bracket.lo, bracket.hi
    glo = g(lo)
    ghi = g(hi)
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if (glo > 0.0) == (ghi > 0.0):
        raise ValueError(
            f"invalid bracket: g({lo})={glo} and g({hi})={ghi} have the same sign"
        )
    neg_lo = glo < 0.0
    for _ in range(max_iter):
        if hi - lo <= bracket.tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # interval no longer splittable in floating point
        gm = g(mid)
        if gm == 0.0:
            return mid
        if (gm < 0.0) == neg_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# ODE integration (embedded Runge-Kutta-Fehlberg 4(5) pair)
# ---------------------------------------------------------------------------

def integrate_ode(
    rhs,
    z0: float,
    p0: float,
    z_end: float,
    *,
    atol: float = 1e-10,
    rtol: float = 1e-9,
    sample_points=None,
    rhs_cap: float = 1e9,
    max_steps: int = 2_000_000,
):
    """Integrate the scalar ODE p' = rhs(z, p) from (z0, p0) to z_end.

    Returns (zs, ps) as numpy arrays.  With ``sample_points`` (strictly
    increasing values in (z0, z_end]), steps are clipped so the trajectory
    is evaluated exactly at those points and the returned arrays are
    [z0, *sample_points] and the matching states; otherwise the accepted
    step points are returned.

    Local error per step is controlled to atol + rtol*|p| using the
    classic Fehlberg 4(5) embedded pair (the 5th-order value is
    propagated).  Integration halts with :class:`SingularityError` when
    the right-hand side exceeds ``rhs_cap`` or is non-finite, when the
    state leaves (0, +inf), or when the required step underflows --
    the exception carries the z reached.
    """
    z0 = float(z0)
    z_end = float(z_end)
    p = float(p0)
    if not (z0 < z_end):
        raise ValueError(f"need z0 < z_end, got {z0} >= {z_end}")
    if not (p > 0.0 and math.isfinite(p)):
        raise ValueError(f"initial state must be in (0, inf), got {p0}")

    span = z_end - z0

    targets = None
    if sample_points is not None:
        targets = np.asarray(sample_points, dtype=float)
        if targets.ndim != 1 or targets.size == 0:
            raise ValueError("sample_points must be a non-empty 1-d sequence")
        if np.any(np.diff(targets) <= 0.0):
            raise ValueError("sample_points must be strictly increasing")
        if targets[0] <= z0 or targets[-1] > z_end + 1e-12 * max(1.0, abs(z_end)):
            raise ValueError("sample_points must lie in (z0, z_end]")

    class _StageFailure(Exception):
        # trial stage left the valid region: reject the step and shrink
        pass

    def call(z, y, fatal=False):
        if not (math.isfinite(y) and y > 0.0):
            if fatal:
                raise SingularityError("state left (0, inf)", z)
            raise _StageFailure
        try:
            v = rhs(z, y)
        except SingularityError:
            # the rhs itself declared this point singular; only fatal if
            # it happens at an accepted point rather than a trial stage
            if fatal:
                raise
            raise _StageFailure from None
        if not math.isfinite(v) or abs(v) > rhs_cap:
            if fatal:
                raise SingularityError("right-hand side blew up", z)
            raise _StageFailure
        return v

    zs = [z0]
    ps = [p]
    out_p = []
    next_target = 0  # index into targets

    z = z0
    h = span / 100.0  # natural (unclipped) step, adapted by the controller
    h_min = 1e-14 * span
    steps = 0

    while True:
        if targets is not None:
            if next_target >= targets.size:
                break
            limit = float(targets[next_target])
        else:
            limit = z_end
        remaining = limit - z
        if remaining <= 0.0:
            # at (or within rounding of) the target already
            if targets is None:
                break
            out_p.append(p)
            next_target += 1
            continue

        steps += 1
        if steps > max_steps:
            raise SingularityError("step budget exhausted", z)

        hit = h >= remaining
        h_try = remaining if hit else h
        if h_try < h_min and not hit:
            raise SingularityError("step size underflow", z)

        try:
            k1 = call(z, p, fatal=True)
            k2 = call(z + h_try / 4.0, p + h_try * k1 / 4.0)
            k3 = call(z + 3.0 * h_try / 8.0, p + h_try * (3.0 * k1 + 9.0 * k2) / 32.0)
            k4 = call(
                z + 12.0 * h_try / 13.0,
                p + h_try * (1932.0 * k1 - 7200.0 * k2 + 7296.0 * k3) / 2197.0,
            )
            k5 = call(
                z + h_try,
                p
                + h_try
                * (
                    439.0 / 216.0 * k1
                    - 8.0 * k2
                    + 3680.0 / 513.0 * k3
                    - 845.0 / 4104.0 * k4
                ),
            )
            k6 = call(
                z + h_try / 2.0,
                p
                + h_try
                * (
                    -8.0 / 27.0 * k1
                    + 2.0 * k2
                    - 3544.0 / 2565.0 * k3
                    + 1859.0 / 4104.0 * k4
                    - 11.0 / 40.0 * k5
                ),
            )
            p_new = p + h_try * (
                16.0 / 135.0 * k1
                + 6656.0 / 12825.0 * k3
                + 28561.0 / 56430.0 * k4
                - 9.0 / 50.0 * k5
                + 2.0 / 55.0 * k6
            )
            if not math.isfinite(p_new) or p_new <= 0.0:
                raise _StageFailure
        except _StageFailure:
            # the trial step left the valid region; shrink and retry --
            # if no step survives, the h_min guard above reports z
            h = h_try * 0.25
            continue

        err = abs(
            h_try
            * (
                k1 / 360.0
                - 128.0 / 4275.0 * k3
                - 2197.0 / 75240.0 * k4
                + k5 / 50.0
                + 2.0 / 55.0 * k6
            )
        )
        scale = atol + rtol * max(abs(p), abs(p_new))
        ratio = err / scale if scale > 0.0 else math.inf

        if ratio == 0.0:
            factor = 5.0
        else:
            factor = min(5.0, max(0.2, 0.9 * ratio ** -0.2))

        if ratio <= 1.0:  # accept
            z = limit if hit else z + h_try
            p = p_new
            if targets is not None:
                if hit:
                    out_p.append(p)
                    next_target += 1
                # keep the natural step after a clipped hit
                if not hit:
                    h = h_try * factor
            else:
                zs.append(z)
                ps.append(p)
                if z >= z_end:
                    break
                h = h_try * factor
        else:  # reject and retry with a smaller step
            h = h_try * factor

    if targets is not None:
        return (
            np.concatenate(([z0], targets)),
            np.array([ps[0]] + out_p),
        )
    return np.array(zs), np.array(ps)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Quadrature grid on (0, L]: strictly increasing nodes plus trapezoid weights.

    The first node is strictly positive (the left endpoint 0 is excluded,
    matching integrals taken over (0+, L]); the weights integrate exactly
    any function that is piecewise linear between the nodes, and they sum
    to nodes[-1] - nodes[0].
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("need at least two nodes")
        if nodes[0] <= 0.0:
            raise ValueError("first node must be > 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")
        if weights.shape != nodes.shape:
            raise ValueError("weights and nodes length mismatch")
        span = nodes[-1] - nodes[0]
        if abs(float(weights.sum()) - span) > 1e-12 * max(1.0, span):
            raise ValueError("weights do not sum to the grid span")

    @property
    def capacity(self) -> float:
        return float(self.nodes[-1])

    @staticmethod
    def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
        w = np.zeros_like(nodes)
        gaps = np.diff(nodes)
        w[:-1] += 0.5 * gaps
        w[1:] += 0.5 * gaps
        return w

    @classmethod
    def from_nodes(cls, nodes) -> "Grid":
        nodes = np.asarray(nodes, dtype=float)
        return cls(nodes, cls._trapezoid_weights(nodes))

    @classmethod
    def uniform(cls, capacity: float, n: int = 2000, z_min: float = 1e-6) -> "Grid":
        if not 0.0 < z_min < capacity:
            raise ValueError("need 0 < z_min < capacity")
        return cls.from_nodes(np.linspace(z_min, capacity, n))

    @classmethod
    def graded(
        cls,
        capacity: float,
        n: int = 2000,
        z_min: float = 1e-6,
        knee_fraction: float = 0.1,
        geometric_fraction: float = 0.4,
    ) -> "Grid":
        """Geometric spacing from z_min up to a knee, then uniform up to capacity.

        The stationary density develops a sharp boundary layer above z = 0
        when the policy's power there is small; the geometric section
        resolves it at a fixed nodes-per-decade cost while the uniform
        section keeps the bulk truncation error small.
        """
        if capacity <= 0.0 or not math.isfinite(capacity):
            raise ValueError("capacity must be finite and positive")
        if n < 16:
            raise ValueError("need at least 16 nodes")
        knee = capacity * knee_fraction
        if not z_min < knee < capacity:
            raise ValueError("need z_min < knee < capacity")
        n_geo = int(round(n * geometric_fraction))
        n_geo = max(2, min(n_geo, n - 2))
        geo = np.geomspace(z_min, knee, n_geo)
        lin = np.linspace(knee, capacity, n - n_geo + 1)[1:]
        return cls.from_nodes(np.concatenate((geo, lin)))


def quadrature(values, grid: Grid) -> float:
    """Composite trapezoid integral of node values over the grid's span.

    Exact (to rounding) for integrands that are piecewise linear between
    the nodes.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.nodes.shape:
        raise ValueError(
            f"length mismatch: {values.shape} values on {grid.nodes.shape} nodes"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    return float(np.dot(grid.weights, values))


def cumulative_integral(x, y) -> np.ndarray:
    """Cumulative integral of samples y over abscissae x, order-4 accurate.

    Returns an array C with C[0] = 0 and C[k] approximating the integral
    of the sampled function from x[0] to x[k].  Each interval is
    integrated under the local cubic through the four nearest samples
    (clamped stencils at the ends), so smooth integrands converge at
    O(h^4) -- needed where plain trapezoid error would be amplified by
    steep multiplier profiles.  Falls back to trapezoid when fewer than
    four samples are given.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    if np.any(np.diff(x) <= 0.0):
        raise ValueError("x must be strictly increasing")
    if n < 4:
        inc = 0.5 * (y[1:] + y[:-1]) * np.diff(x)
        return np.concatenate(([0.0], np.cumsum(inc)))

    m = n - 1  # number of intervals
    j0 = np.clip(np.arange(m) - 1, 0, n - 4)  # stencil start per interval
    idx = j0[:, None] + np.arange(4)[None, :]  # (m, 4) sample indices
    xm = 0.5 * (x[:-1] + x[1:])  # interval midpoints for conditioning
    t = x[idx] - xm[:, None]  # (m, 4) local abscissae

    # moments of 1, t, t^2, t^3 over each interval, in local coordinates
    a = (x[:-1] - xm)[:, None]
    b = (x[1:] - xm)[:, None]
    powers = np.arange(1, 5)[None, :]
    mom = (b ** powers - a ** powers) / powers  # (m, 4)

    # weights w solve M w = mom with M[i, j, k] = t[i, k]^j (moment matching)
    vand = t[:, None, :] ** np.arange(4)[None, :, None]  # (m, 4, 4)
    w = np.linalg.solve(vand, mom[:, :, None])[:, :, 0]

    inc = np.sum(w * y[idx], axis=1)
    return np.concatenate(([0.0], np.cumsum(inc)))


# ---------------------------------------------------------------------------
# Random stream
# ---------------------------------------------------------------------------

class Rng:
    """Deterministic stream of uniform and exponential variates.

    Built on the PCG64 bit stream; uniforms are raw 64-bit draws mapped to
    [0, 1) with 53-bit resolution, and exponentials are exact inverse-CDF
    transforms -log1p(-u)/rate of those uniforms.  Identical seeds give
    identical streams.
    """

    def __init__(self, seed: int):
        self._bits = np.random.PCG64(seed)
        self.seed = int(seed)

    def uniform(self, size=None):
        raw = self._bits.random_raw(size if size is not None else 1)
        u = (raw >> np.uint64(11)) * (1.0 / (1 << 53))
        if size is None:
            return float(u[0])
        return u

    def exponential(self, rate: float = 1.0, size=None):
        if rate <= 0.0:
            raise ValueError("rate must be positive")
        if size is None:
            return -math.log1p(-self.uniform()) / rate
        return -np.log1p(-self.uniform(size=size)) / rate


def seeded_rng(seed: int) -> Rng:
    """Create a deterministic random stream from a 64-bit seed."""
    return Rng(seed)
