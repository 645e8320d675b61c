"""Decoy-state bounds for weak-coherent-pulse BB84.

Photon-number yields above the cutoff N are folded into one remainder
variable per intensity, bounded by the Poisson tail, so truncation never
makes a bound optimistic.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.stats import poisson

from .asymptotic import binary_entropy
from .errors import InfeasibleObservations, OutOfRange


# Boxes are widened by these amounts, in turn, so data lying exactly on the
# boundary of the feasible set (a lossless channel, say) survive rounding.
# Widening only enlarges the set, so bounds stay valid.
SLACK_LADDER = (1e-10, 1e-9, 1e-8)


def poisson_pn(mu, n):
    if mu <= 0 or n < 0 or int(n) != n:
        raise OutOfRange(f"need mu > 0 and integer n >= 0, got mu={mu}, n={n}")
    return float(poisson.pmf(int(n), mu))


def _tail(mu, cutoff):
    return float(poisson.sf(cutoff, mu))


@dataclass(frozen=True)
class DecoyModel:
    """Signal intensity first. ``y0_bounds`` is prior knowledge of the
    background yield, e.g. a separately measured dark-count rate."""

    intensities: tuple
    gains: tuple
    error_gains: tuple
    cutoff: int = 10
    y0_bounds: tuple = (0.0, 1.0)

    def __post_init__(self):
        mus = tuple(float(v) for v in self.intensities)
        gains = tuple(float(v) for v in self.gains)
        errs = tuple(float(v) for v in self.error_gains)
        if len(mus) < 2:
            raise OutOfRange("decoy analysis needs at least two intensities")
        if not (len(gains) == len(errs) == len(mus)):
            raise OutOfRange("one gain and one error gain per intensity are required")
        if any(mu <= 0 for mu in mus):
            raise OutOfRange("intensities must be positive")
        for g, e in zip(gains, errs):
            if not (0 <= g <= 1 and 0 <= e <= 1):
                raise OutOfRange("gains and error gains must lie in [0, 1]")
            if e > g + 1e-15:
                raise OutOfRange(f"error gain {e} exceeds gain {g}")
        if self.cutoff < 2:
            raise OutOfRange("photon-number cutoff must be at least 2")
        lo, hi = (float(v) for v in self.y0_bounds)
        if not 0 <= lo <= hi <= 1:
            raise OutOfRange(f"background yield interval {self.y0_bounds} is not inside [0, 1]")
        object.__setattr__(self, "y0_bounds", (lo, hi))
        object.__setattr__(self, "intensities", mus)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "error_gains", errs)

    @property
    def signal(self):
        return self.intensities[0]


@dataclass(frozen=True)
class LpCertificate:
    value: float
    primal: float
    dual: float
    status: str

    @property
    def gap(self):
        return abs(self.primal - self.dual)


@dataclass(frozen=True)
class DecoyBounds:
    y1_lower: float
    e1_upper: float
    b1_upper: float
    yield_lp: LpCertificate
    error_lp: LpCertificate


def _box_dual(c, A, b, lb, ub, y):
    """min c·x over {A x = b, lb <= x <= ub} is at least this for any y."""
    g = c - A.T @ y
    return float(b @ y + np.sum(np.minimum(g * lb, g * ub)))


def _solve_box_lp(c, A, b, lb, ub):
    # presolve misreports boundary data (e.g. a lossless channel) as infeasible
    opts = {"presolve": False}
    res = linprog(c, A_eq=A, b_eq=b, bounds=list(zip(lb, ub)), method="highs", options=opts)
    if res.status == 2:
        raise InfeasibleObservations("observed statistics are inconsistent with any channel")
    if res.status != 0:
        raise InfeasibleObservations(f"decoy LP failed: {res.message}")
    # multipliers from the explicit dual: max b·y + lb·λ - ub·μ, Aᵀy + λ - μ = c
    m, n = A.shape
    dual = linprog(
        -np.concatenate([b, lb, -ub]),
        A_eq=np.hstack([A.T, np.eye(n), -np.eye(n)]),
        b_eq=c,
        bounds=[(None, None)] * m + [(0, None)] * (2 * n),
        method="highs",
        options=opts,
    )
    ys = [np.asarray(res.eqlin.marginals, dtype=float)]
    if dual.status == 0:
        ys.append(dual.x[:m])
    # polish: reduced costs vanish on variables strictly inside their box
    free = (res.x > lb + 1e-9) & (res.x < ub - 1e-9)
    if free.any():
        y, *_ = np.linalg.lstsq(A[:, free].T, c[free], rcond=None)
        ys.append(y)
    value = max(_box_dual(c, A, b, lb, ub, y) for y in ys)
    primal = float(res.fun)
    if free.any():
        x = np.clip(res.x, lb, ub)
        x[~free] = np.where(np.abs(x - lb) <= np.abs(x - ub), lb, ub)[~free]
        xf, *_ = np.linalg.lstsq(A[:, free], b - A[:, ~free] @ x[~free], rcond=None)
        x[free] = xf
        if np.all(x >= lb - 1e-13) and np.all(x <= ub + 1e-13) and np.max(np.abs(A @ x - b)) < 1e-13:
            primal = float(c @ x)
    return LpCertificate(min(value, primal), primal, value, "optimal")


def decoy_lp_bounds(model):
    """Certified (Y1_lower, e1_upper) with the LP certificates attached.

    Variables are the yields Y_n, the error yields b_n = e_n Y_n with
    0 <= b_n <= Y_n, and tail remainders for both gain families. Returns a
    :class:`DecoyBounds`.
    """
    for slack in SLACK_LADDER:
        try:
            return _decoy_lps(model, slack)
        except InfeasibleObservations:
            if slack == SLACK_LADDER[-1]:
                raise


def _decoy_lps(model, slack):
    N = model.cutoff
    K = len(model.intensities)
    P = np.array([[poisson_pn(mu, n) for n in range(N + 1)] for mu in model.intensities])
    tails = np.array([_tail(mu, N) for mu in model.intensities]) + slack
    ny = N + 1
    # x = [Y_0..Y_N, b_0..b_N, r_1..r_K, s_1..s_K, slack_0..slack_N] with Y_n = b_n + slack_n
    nv = 3 * ny + 2 * K
    A = np.zeros((2 * K + ny, nv))
    A[:K, :ny] = P
    A[:K, 2 * ny : 2 * ny + K] = np.eye(K)
    A[K : 2 * K, ny : 2 * ny] = P
    A[K : 2 * K, 2 * ny + K : 2 * ny + 2 * K] = np.eye(K)
    A[2 * K :, :ny] = np.eye(ny)
    A[2 * K :, ny : 2 * ny] = -np.eye(ny)
    A[2 * K :, 2 * ny + 2 * K :] = -np.eye(ny)
    b = np.concatenate([model.gains, model.error_gains, np.zeros(ny)])
    lb = np.zeros(nv)
    ub = np.concatenate([np.full(2 * ny, 1 + slack), tails, tails, np.full(ny, 1 + slack)])
    lb[0], ub[0] = model.y0_bounds

    c = np.zeros(nv)
    c[1] = 1.0
    ylp = _solve_box_lp(c, A, b, lb, ub)
    c = np.zeros(nv)
    c[ny + 1] = -1.0
    blp = _solve_box_lp(c, A, b, lb, ub)
    y1 = min(1.0, max(0.0, ylp.value))
    b1 = min(1.0, -blp.value)
    e1 = min(1.0, b1 / y1) if y1 > 0 else 1.0
    return DecoyBounds(y1, e1, b1, ylp, LpCertificate(-blp.value, -blp.primal, -blp.dual, blp.status))


def decoy_asymptotic_rate(model, q_x1_upper=None, q_z=None, f_ec=1.0):
    """Γ_Z^(1) (1 - h(q_X^(1))) - f_EC Γ_Z h(Q_Z) for the signal intensity.

    ``q_x1_upper`` defaults to the LP bound on the single-photon error rate
    and ``q_z`` to the signal's observed error ratio.
    """
    if f_ec < 1.0:
        raise OutOfRange("error-correction efficiency must be at least 1")
    bounds = decoy_lp_bounds(model)
    gain = model.gains[0]
    q1 = bounds.e1_upper if q_x1_upper is None else float(q_x1_upper)
    if q_z is None:
        q_z = model.error_gains[0] / gain if gain > 0 else 0.0
    if not (0 <= q1 <= 1 and 0 <= q_z <= 0.5):
        raise OutOfRange(f"error rates out of range: q_x1={q1}, Q_Z={q_z}")
    gamma1 = poisson_pn(model.signal, 1) * bounds.y1_lower
    single = gamma1 * (1.0 - binary_entropy(min(q1, 0.5)))
    return single - f_ec * gain * binary_entropy(q_z)


def loss_channel(eta, intensities, error=0.0, cutoff=10, known_background=True):
    """Model for a pure-loss channel with yields 1 - (1 - η)^n and error ratio ``error``.

    Gains are the closed form 1 - exp(-η μ), so the simulated data carry no
    truncation error. With ``known_background`` the zero dark-count yield
    is passed on as prior knowledge.
    """
    if not 0 <= eta <= 1:
        raise OutOfRange(f"transmittance {eta} outside [0, 1]")
    gains = [1.0 - math.exp(-eta * mu) for mu in intensities]
    y0 = (0.0, 0.0) if known_background else (0.0, 1.0)
    return DecoyModel(tuple(intensities), tuple(gains), tuple(error * g for g in gains), cutoff, y0)
