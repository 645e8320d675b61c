"""Finite-size key-length accounting.

Every function here is pure arithmetic on real numbers. Logarithms are base 2
except inside the sampling bound, whose exponent is natural. Key lengths are
floored only at the very end.
"""

import math
from dataclasses import dataclass

from .asymptotic import binary_entropy
from .errors import OutOfRange, TooFewRounds

__all__ = [
    "SecurityParams",
    "FiniteRunSpec",
    "KeyLength",
    "binary_entropy",
    "serfling_bound",
    "serfling_deviation",
    "aep_delta",
    "aep_threshold",
    "aep_correction",
    "key_length_leftover",
    "leak_ir_bound",
    "eur_bb84_key_length",
    "postselection_lift",
    "eat_constant",
    "eat_rate",
]


def _open_unit(name, value):
    if not 0.0 < value < 1.0:
        raise OutOfRange(f"{name}={value} must lie strictly between 0 and 1")


@dataclass(frozen=True)
class SecurityParams:
    eps_pa: float = 1e-10
    eps_ir: float = 1e-10
    eps_smooth: float = 1e-10

    def __post_init__(self):
        for name in ("eps_pa", "eps_ir", "eps_smooth"):
            _open_unit(name, getattr(self, name))
        if self.eps_sec >= 1.0:
            raise OutOfRange(f"secrecy parameter {self.eps_sec} is not below 1")

    @property
    def eps_sec(self):
        return self.eps_pa + 2.0 * self.eps_smooth

    @property
    def eps_cor(self):
        return self.eps_ir


@dataclass(frozen=True)
class FiniteRunSpec:
    """A run with ``n`` key rounds and ``m`` test rounds.

    The test sample is drawn without replacement from the n + m sifted
    rounds. ``d_a`` is Alice's local key dimension and ``d`` the per-round
    dimension used by the permutation-invariance lift.
    """

    n: int
    m: int
    q_x: float
    q_z: float
    d_a: int = 2
    d: int = 4

    def __post_init__(self):
        if not (1 <= self.m < self.n):
            raise OutOfRange(f"need 1 <= m < n, got n={self.n}, m={self.m}")
        for name in ("q_x", "q_z"):
            q = getattr(self, name)
            if not 0.0 <= q <= 0.5:
                raise OutOfRange(f"{name}={q} outside [0, 1/2]")


@dataclass(frozen=True)
class KeyLength:
    """Final key length; ``raw`` keeps the unclamped real value."""

    length: int
    raw: float

    def __int__(self):
        return self.length


def serfling_bound(n, m, beta):
    """Probability that the unsampled mean exceeds the sample mean by beta."""
    if not (1 <= m < n):
        raise OutOfRange(f"need 1 <= m < n, got n={n}, m={m}")
    if beta < 0:
        raise OutOfRange("beta must be nonnegative")
    return math.exp(-2.0 * beta * beta * n * m / (n - m + 1))


def serfling_deviation(n, m, eps):
    """Inverse of :func:`serfling_bound` in beta."""
    if not (1 <= m < n):
        raise OutOfRange(f"need 1 <= m < n, got n={n}, m={m}")
    _open_unit("eps", eps)
    return math.sqrt((n - m + 1) * math.log(1.0 / eps) / (2.0 * n * m))


def aep_delta(eps, hmin_single, hmax_single):
    eta = math.sqrt(2.0 ** (-hmin_single)) + math.sqrt(2.0**hmax_single) + 1.0
    return 4.0 * math.log2(eta) * math.sqrt(math.log2(2.0 / eps**2))


def aep_threshold(eps):
    return math.ceil(1.6 * math.log2(2.0 / eps**2))


def aep_correction(n, H, hmin_single, hmax_single, eps):
    """Smooth min-entropy of n i.i.d. rounds: n H - sqrt(n) δ."""
    _open_unit("eps", eps)
    threshold = aep_threshold(eps)
    if n < threshold:
        raise TooFewRounds(n, threshold)
    return n * H - math.sqrt(n) * aep_delta(eps, hmin_single, hmax_single)


def key_length_leftover(hmin_eps, leak, eps_pa):
    raw = hmin_eps - leak - 2.0 * math.log2(1.0 / (2.0 * eps_pa))
    return KeyLength(max(0, math.floor(raw)), raw)


def leak_ir_bound(n, Q, eps_prime, eps_ir, mode="plain", f_ec=1.16):
    """Bits leaked by one-way error correction on n bits with error rate Q.

    ``mode="plain"`` charges f_ec · n h(Q); ``mode="aep"`` charges the
    smooth max-entropy n h(Q) + sqrt(n) δ at smoothing eps_prime / 2.
    """
    if n < 1 or not 0.0 <= Q <= 0.5:
        raise OutOfRange(f"invalid n={n} or Q={Q}")
    _open_unit("eps_prime", eps_prime)
    _open_unit("eps_ir", eps_ir)
    extra = math.log2(8.0 / eps_prime**2 + 2.0 / (2.0 - eps_prime)) + math.log2(1.0 / eps_ir)
    if mode == "plain":
        if f_ec < 1.0:
            raise OutOfRange("error-correction efficiency must be at least 1")
        return n * binary_entropy(Q) * f_ec + extra
    if mode == "aep":
        # a classical bit given B: H_min >= 0 and H_max <= 1 per round
        return n * binary_entropy(Q) + math.sqrt(n) * aep_delta(eps_prime / 2.0, 0.0, 1.0) + extra
    raise OutOfRange(f"unknown leak mode {mode!r}")


def eur_bb84_key_length(spec, params, leak_mode="plain", f_ec=1.0):
    """BB84 key length from the uncertainty relation with overlap c = 1/2.

    The phase error rate is the X-basis test rate widened by the sampling
    deviation, and the min-entropy of the n key bits is n (1 - h(Q_X^up)).
    Returns (KeyLength, rate per key round).
    """
    beta = serfling_deviation(spec.n + spec.m, spec.m, params.eps_smooth)
    q_up = min(0.5, spec.q_x + beta)
    hmin = spec.n * (1.0 - binary_entropy(q_up))
    leak = leak_ir_bound(spec.n, spec.q_z, params.eps_smooth, params.eps_ir, leak_mode, f_ec)
    key = key_length_leftover(hmin, leak, params.eps_pa)
    return key, key.length / spec.n


def postselection_lift(length, eps, n, d):
    """Coherent-attack parameters from collective-attack ones: (ℓ', ε')."""
    if n < 1 or d < 1:
        raise OutOfRange("need n >= 1 and d >= 1")
    k = d * d - 1
    penalty = 2.0 * k * math.log2(n + 1)
    log_eps = math.log10(eps) + k * math.log10(n + 1) if eps > 0 else -math.inf
    eps_new = 10.0**log_eps if log_eps > -300 else 0.0
    return math.floor(length - penalty), eps_new


def eat_constant(d_a, grad_norm, eps_p):
    """2 (log(1 + 2 d_A) + ⌈‖∇f‖∞⌉) sqrt(1 - 2 log(ε p_Ω))."""
    if d_a < 1 or grad_norm < 0:
        raise OutOfRange("need d_A >= 1 and a nonnegative gradient norm")
    _open_unit("eps * p_omega", eps_p)
    return 2.0 * (math.log2(1 + 2 * d_a) + math.ceil(grad_norm)) * math.sqrt(1.0 - 2.0 * math.log2(eps_p))


def eat_rate(n, h, d_a, grad_norm, eps, p_omega=1.0):
    if n < 1:
        raise OutOfRange("need n >= 1")
    if not 0.0 < p_omega <= 1.0:
        raise OutOfRange(f"p_omega={p_omega} must lie in (0, 1]")
    return n * h - eat_constant(d_a, grad_norm, eps * p_omega) * math.sqrt(n)
