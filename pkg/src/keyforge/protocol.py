"""Protocol scenarios: POVMs, measurement/sifting/key maps and constraint sets.

Register order on the enlarged space is A Ã Ā B B̃ B̄, with the key register
R prepended by the key-map isometry. Basis registers have one level per
basis; outcome registers have as many levels as the largest POVM.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import sdpcore
from .errors import (
    DimensionMismatch,
    EfficiencyOutOfRange,
    IncompleteKeyMap,
    InfeasibleScenario,
    InvalidDistribution,
    InvalidPovm,
    InvalidQber,
)
from .linalg import check_hermitian, kron, ket, shannon_entropy, sqrtm_psd

EQUALITY = "equality"
INTERVAL = "interval"
LOWER = "lower"


# --- data types ---------------------------------------------------------------


@dataclass(frozen=True)
class Povm:
    elements: tuple
    label: int = 0

    def __post_init__(self):
        els = tuple(np.asarray(e, dtype=complex) for e in self.elements)
        object.__setattr__(self, "elements", els)
        validate_povm(els)

    @property
    def dim(self):
        return self.elements[0].shape[0]

    def __len__(self):
        return len(self.elements)


def validate_povm(elements, tol_psd=1e-10, tol_sum=1e-9):
    if not len(elements):
        raise InvalidPovm("POVM needs at least one element")
    d = elements[0].shape[0]
    total = np.zeros((d, d), dtype=complex)
    for k, E in enumerate(elements):
        if E.shape != (d, d):
            raise InvalidPovm(f"element {k} has shape {E.shape}, expected {(d, d)}")
        try:
            check_hermitian(E, f"element {k}")
        except Exception as exc:
            raise InvalidPovm(str(exc)) from exc
        if np.linalg.eigvalsh((E + E.conj().T) / 2)[0] < -tol_psd:
            raise InvalidPovm(f"element {k} is not positive semidefinite")
        total += E
    if np.max(np.abs(total - np.eye(d))) > tol_sum:
        raise InvalidPovm("POVM elements do not sum to the identity")


@dataclass(frozen=True)
class Constraint:
    """Tr(op rho) = value, |Tr(op rho) - value| <= half_width, or Tr(op rho) >= value."""

    op: np.ndarray
    value: float
    kind: str = EQUALITY
    half_width: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "op", check_hermitian(self.op, "constraint operator"))
        if self.kind not in (EQUALITY, INTERVAL, LOWER):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.half_width < 0:
            raise ValueError("half_width must be nonnegative")

    def is_identity(self):
        d = self.op.shape[0]
        return self.kind == EQUALITY and np.max(np.abs(self.op - np.eye(d))) <= 1e-12 and abs(self.value - 1) <= 1e-12


@dataclass(frozen=True)
class EllipsoidConstraint:
    """(p - center)^T cov^{-1} (p - center) <= radius2 with p_j = Tr(ops[j] rho)."""

    ops: tuple
    center: np.ndarray
    cov: np.ndarray
    radius2: float

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(check_hermitian(o, "ellipsoid operator") for o in self.ops))
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (len(self.ops), len(self.ops)) or np.linalg.eigvalsh((cov + cov.T) / 2)[0] <= 0:
            raise ValueError("ellipsoid covariance must be positive definite with one row per operator")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius2 < 0:
            raise ValueError("radius must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    d_a: int
    d_b: int
    povms_a: tuple
    povms_b: tuple
    probs_a: tuple
    probs_b: tuple
    kept: tuple
    key_map: dict
    key_size: int
    constraints: tuple
    ellipsoids: tuple = ()
    discard_b: tuple = ()
    reference_state: Optional[np.ndarray] = None
    key_basis: int = 0
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.d_a * self.d_b

    def identity_index(self):
        for i, c in enumerate(self.constraints):
            if c.is_identity():
                return i
        return None

    def partner_basis(self, x):
        ys = [y for (xx, y) in self.kept if xx == x]
        return ys[0] if ys else None

    def kept_outcomes_b(self, y):
        """Bob's outcomes in basis ``y`` that survive the public discard step."""
        return [b for b in range(len(self.povms_b[y])) if (y, b) not in self.discard_b]


def make_scenario(
    povms_a,
    povms_b,
    kept,
    key_map,
    constraints,
    probs_a=None,
    probs_b=None,
    key_size=None,
    ellipsoids=(),
    reference_state=None,
    key_basis=0,
    name="custom",
    check=True,
    meta=None,
    discard_b=(),
):
    """Assemble and validate a Scenario; the identity constraint is added if absent.

    ``discard_b`` lists (basis, outcome) pairs of Bob that are announced and
    dropped before key generation, such as a no-click event.
    """
    povms_a = tuple(p if isinstance(p, Povm) else Povm(tuple(p), i) for i, p in enumerate(povms_a))
    povms_b = tuple(p if isinstance(p, Povm) else Povm(tuple(p), i) for i, p in enumerate(povms_b))
    d_a, d_b = povms_a[0].dim, povms_b[0].dim
    if any(p.dim != d_a for p in povms_a) or any(p.dim != d_b for p in povms_b):
        raise DimensionMismatch("all POVMs of one party must act on the same space")
    probs_a = _basis_probs(probs_a, len(povms_a))
    probs_b = _basis_probs(probs_b, len(povms_b))
    kept = tuple(sorted({(int(x), int(y)) for x, y in kept}))
    for x, y in kept:
        if not (0 <= x < len(povms_a) and 0 <= y < len(povms_b)):
            raise DimensionMismatch(f"kept pair {(x, y)} refers to an unknown basis")
    key_map = {tuple(int(v) for v in k): int(r) for k, r in key_map.items()}
    for x, y in kept:
        for a in range(len(povms_a[x])):
            if (x, a, y) not in key_map:
                raise IncompleteKeyMap(f"key map undefined on kept triple {(x, a, y)}")
    if key_size is None:
        key_size = 1 + max(key_map.values()) if key_map else 1
    cons = [c if isinstance(c, Constraint) else Constraint(*c) for c in constraints]
    dim = d_a * d_b
    for c in cons:
        if c.op.shape != (dim, dim):
            raise DimensionMismatch(f"constraint operator shape {c.op.shape} does not match {(dim, dim)}")
    # a vanishing operator carries no information; keeping it leaves an empty row
    for c in cons:
        if not np.any(np.abs(c.op) > 1e-14):
            lo = c.value - c.half_width if c.kind != LOWER else c.value
            hi = c.value + c.half_width if c.kind != LOWER else np.inf
            if not lo - 1e-12 <= 0.0 <= hi + 1e-12:
                raise InfeasibleScenario("a zero operator is constrained to a nonzero value")
    cons = [c for c in cons if np.any(np.abs(c.op) > 1e-14)]
    if not any(c.is_identity() for c in cons):
        cons.insert(0, Constraint(np.eye(dim), 1.0))
    for e in ellipsoids:
        if any(o.shape != (dim, dim) for o in e.ops):
            raise DimensionMismatch("ellipsoid operator has the wrong shape")
    discard_b = tuple(sorted({(int(y), int(b)) for y, b in discard_b}))
    for y, b in discard_b:
        if not (0 <= y < len(povms_b) and 0 <= b < len(povms_b[y])):
            raise DimensionMismatch(f"discarded outcome {(y, b)} does not exist")
    sc = Scenario(
        d_a=d_a,
        d_b=d_b,
        povms_a=povms_a,
        povms_b=povms_b,
        probs_a=probs_a,
        probs_b=probs_b,
        kept=kept,
        key_map=key_map,
        key_size=int(key_size),
        constraints=tuple(cons),
        ellipsoids=tuple(ellipsoids),
        discard_b=discard_b,
        reference_state=None if reference_state is None else np.asarray(reference_state, dtype=complex),
        key_basis=int(key_basis),
        name=name,
        meta=dict(meta or {}),
    )
    if check:
        check_feasible(sc)
    return sc


def _basis_probs(p, n):
    if p is None:
        return tuple([1.0 / n] * n)
    p = tuple(float(v) for v in p)
    if len(p) != n or min(p) < 0 or abs(sum(p) - 1) > 1e-12:
        raise InvalidDistribution(f"basis probabilities {p} are not a distribution over {n} bases")
    return p


# --- maps on the enlarged space ---------------------------------------------------


@dataclass(frozen=True)
class KrausMeasurement:
    operators: tuple  # one per basis, shape (d * n_bases * n_out, d)
    n_bases: int
    n_out: int
    dim: int


def _party_kraus(povms, probs):
    d = povms[0].dim
    nb = len(povms)
    no = max(len(p) for p in povms)
    ops = []
    for x, (povm, px) in enumerate(zip(povms, probs)):
        K = np.zeros((d * nb * no, d), dtype=complex)
        for a, E in enumerate(povm.elements):
            K += np.sqrt(px) * kron(sqrtm_psd(E), ket(x, nb)[:, None], ket(a, no)[:, None])
        ops.append(K)
    return KrausMeasurement(tuple(ops), nb, no, d)


def build_measurement_map(scenario):
    """Kraus operators of Alice and Bob; the joint channel uses their tensor products."""
    ka = _party_kraus(scenario.povms_a, scenario.probs_a)
    kb = _party_kraus(scenario.povms_b, scenario.probs_b)
    for k in (ka, kb):
        total = sum(K.conj().T @ K for K in k.operators)
        if np.max(np.abs(total - np.eye(k.dim))) > 1e-9:
            raise InvalidPovm("measurement channel is not trace preserving")
    return ka, kb


def apply_measurement(rho, ka, kb):
    out = 0
    for KA in ka.operators:
        for KB in kb.operators:
            K = np.kron(KA, KB)
            out = out + K @ rho @ K.conj().T
    return out


@dataclass(frozen=True)
class SiftingProjector:
    kept: tuple
    matrix: np.ndarray


def build_sifting(scenario):
    ka, kb = build_measurement_map(scenario)
    dA, nxa, noa = ka.dim, ka.n_bases, ka.n_out
    dB, nxb, nob = kb.dim, kb.n_bases, kb.n_out
    P = 0
    for x, y in scenario.kept:
        outs = np.diag([1.0 if b in scenario.kept_outcomes_b(y) else 0.0 for b in range(nob)])
        P = P + kron(
            np.eye(dA),
            np.outer(ket(x, nxa), ket(x, nxa)),
            np.eye(noa),
            np.eye(dB),
            np.outer(ket(y, nxb), ket(y, nxb)),
            outs,
        )
    return SiftingProjector(scenario.kept, P)


def p_pass(sigma, projector):
    P = projector.matrix if isinstance(projector, SiftingProjector) else projector
    if P.shape != sigma.shape:
        raise DimensionMismatch(f"projector {P.shape} and state {sigma.shape} differ")
    return float(np.real(np.trace(P @ sigma @ P)))


@dataclass(frozen=True)
class KeyMapIsometry:
    key_size: int
    mapping: dict
    matrix: np.ndarray


def build_keymap(scenario):
    """Isometry V appending the key register R in front of A Ã Ā B B̃ B̄.

    Triples outside the kept set are sent to symbol 0; the sifting projector
    removes them before V acts, so this completion never affects G.
    """
    for x, y in scenario.kept:
        for a in range(len(scenario.povms_a[x])):
            if (x, a, y) not in scenario.key_map:
                raise IncompleteKeyMap(f"key map undefined on kept triple {(x, a, y)}")
    nxa, noa = len(scenario.povms_a), max(len(p) for p in scenario.povms_a)
    nxb, nob = len(scenario.povms_b), max(len(p) for p in scenario.povms_b)
    nr = scenario.key_size
    V = 0
    for x in range(nxa):
        for a in range(noa):
            for y in range(nxb):
                r = scenario.key_map.get((x, a, y), 0)
                proj = kron(
                    np.eye(scenario.d_a),
                    np.outer(ket(x, nxa), ket(x, nxa)),
                    np.outer(ket(a, noa), ket(a, noa)),
                    np.eye(scenario.d_b),
                    np.outer(ket(y, nxb), ket(y, nxb)),
                    np.eye(nob),
                )
                V = V + np.kron(ket(r, nr)[:, None], proj)
    return KeyMapIsometry(nr, dict(scenario.key_map), V)


def apply_G(rho, scenario, maps=None):
    """G(rho) = V Π M(rho) Π V† on the full enlarged space (subnormalized)."""
    ka, kb, Pi, V = maps or (*build_measurement_map(scenario), build_sifting(scenario), build_keymap(scenario))
    if rho.shape != (scenario.dim, scenario.dim):
        raise DimensionMismatch(f"state shape {rho.shape} does not match {scenario.dim}")
    sig = apply_measurement(rho, ka, kb)
    P = Pi.matrix
    sig = P @ sig @ P
    return V.matrix @ sig @ V.matrix.conj().T


def apply_Z(sigma, key_size):
    """Pinching of the leading key register."""
    d = sigma.shape[0]
    if d % key_size:
        raise DimensionMismatch(f"dimension {d} is not divisible by key size {key_size}")
    rest = d // key_size
    out = np.zeros_like(sigma)
    for j in range(key_size):
        sl = slice(j * rest, (j + 1) * rest)
        out[sl, sl] = sigma[sl, sl]
    return out


class CompressedG:
    """G restricted to its support: kept (x, y) blocks, rows labelled (a, b, system).

    For each kept pair the block is E ρ E† with
    E = sqrt(p_x p_y) Σ_{a,b} |a b⟩ ⊗ (sqrt(M_a|x) ⊗ sqrt(N_b|y)). The key
    register is implicit: every row carries the symbol g(x, a, y), and the
    pinching keeps the diagonal blocks of equal symbol.
    """

    def __init__(self, scenario):
        self.scenario = scenario
        d = scenario.dim
        self.E = []
        self.labels = []
        for x, y in scenario.kept:
            pa, pb = scenario.povms_a[x], scenario.povms_b[y]
            pre = np.sqrt(scenario.probs_a[x] * scenario.probs_b[y])
            rows = []
            lab = []
            keep_b = scenario.kept_outcomes_b(y)
            for a, Ma in enumerate(pa.elements):
                sa = sqrtm_psd(Ma)
                for Nb in (pb.elements[b] for b in keep_b):
                    rows.append(pre * np.kron(sa, sqrtm_psd(Nb)))
                    lab.extend([scenario.key_map[(x, a, y)]] * d)
            self.E.append(np.vstack(rows))
            self.labels.append(np.array(lab))
        self.dims = [E.shape[0] for E in self.E]
        self.d_out = int(sum(self.dims))
        self.p_pass = float(sum(scenario.probs_a[x] * scenario.probs_b[y] for x, y in scenario.kept))

    def apply(self, rho):
        return [E @ rho @ E.conj().T for E in self.E]

    def adjoint(self, blocks):
        return sum(E.conj().T @ B @ E for E, B in zip(self.E, blocks))

    def pinch(self, blocks):
        out = []
        for B, lab in zip(blocks, self.labels):
            mask = lab[:, None] == lab[None, :]
            out.append(np.where(mask, B, 0))
        return out


# --- source replacement and imperfections ------------------------------------------


def source_replacement(states, probs):
    """|Ψ⟩ = Σ_j sqrt(p_j) |j⟩_A' ⊗ |φ_j⟩ for prepare-and-measure states φ_j.

    ``states`` is indexed by the joint label j = (a, x) flattened in the
    caller's order; the returned vector lives on (number of labels) ⊗ system.
    """
    states = [np.asarray(s, dtype=complex).ravel() for s in states]
    probs = np.asarray(probs, dtype=float).ravel()
    if len(states) != len(probs) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
        raise InvalidDistribution("probabilities must be a distribution matching the states")
    d = states[0].shape[0]
    for s in states:
        if s.shape[0] != d or abs(np.linalg.norm(s) - 1) > 1e-10:
            raise InvalidDistribution("states must be normalized vectors of equal dimension")
    n = len(states)
    psi = sum(np.sqrt(p) * np.kron(ket(j, n), s) for j, (p, s) in enumerate(zip(probs, states)))
    return psi / np.linalg.norm(psi)


def extend_noclick(povm):
    """Direct-sum each element with 0 and add the no-click element 1 - Σ M."""
    els = [np.asarray(e, dtype=complex) for e in (povm.elements if isinstance(povm, Povm) else povm)]
    d = els[0].shape[0]
    out = []
    for E in els:
        F = np.zeros((d + 1, d + 1), dtype=complex)
        F[:d, :d] = E
        out.append(F)
    total = sum(out)
    out.append(np.eye(d + 1) - total)
    return Povm(tuple(out), povm.label if isinstance(povm, Povm) else 0)


def apply_efficiency(povm, etas):
    """Scale click elements by their efficiencies and complete with a no-click element.

    With one efficiency per element a completion element is appended. With
    one fewer (a POVM already extended by :func:`extend_noclick`) the last
    element is treated as no-click and replaced by 1 - Σ η M.
    """
    els = [np.asarray(e, dtype=complex) for e in (povm.elements if isinstance(povm, Povm) else povm)]
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    if len(etas) == 1 and len(els) > 1:
        etas = np.full(len(els), etas[0])
    if len(etas) not in (len(els), len(els) - 1):
        raise DimensionMismatch(f"{len(etas)} efficiencies for {len(els)} POVM elements")
    if np.any(etas < 0) or np.any(etas > 1):
        raise EfficiencyOutOfRange(f"efficiencies {etas.tolist()} must lie in [0, 1]")
    clicks = els[: len(etas)]
    scaled = [eta * E for eta, E in zip(etas, clicks)]
    d = els[0].shape[0]
    completion = np.eye(d) - sum(scaled)
    return Povm(tuple(scaled) + (completion,), povm.label if isinstance(povm, Povm) else 0)


def fidelity_constraint(psi, eps):
    psi = np.asarray(psi, dtype=complex).ravel()
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise InvalidDistribution("target state must be normalized")
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    return Constraint(np.outer(psi, psi.conj()), 1.0 - eps, LOWER)


# --- BB84 ---------------------------------------------------------------------------


def bb84_povms():
    z = [np.diag([1.0, 0.0]).astype(complex), np.diag([0.0, 1.0]).astype(complex)]
    plus = np.array([1, 1]) / np.sqrt(2)
    minus = np.array([1, -1]) / np.sqrt(2)
    x = [np.outer(plus, plus).astype(complex), np.outer(minus, minus).astype(complex)]
    return Povm(tuple(z), 0), Povm(tuple(x), 1)


def bell_state(which="phi+"):
    v = {
        "phi+": [1, 0, 0, 1],
        "phi-": [1, 0, 0, -1],
        "psi+": [0, 1, 1, 0],
        "psi-": [0, 1, -1, 0],
    }[which]
    v = np.array(v, dtype=complex) / np.sqrt(2)
    return np.outer(v, v.conj())


def bb84_state(q_z, q_x):
    """Bell-diagonal state with Z-basis error rate q_z and X-basis error rate q_x.

    When q_z == q_x this is the depolarized Bell state with visibility 1 - 2q.
    """
    _check_qber(q_z)
    _check_qber(q_x)
    psi_m = min(q_z, q_x) / 2
    psi_p = q_z - psi_m
    phi_m = q_x - psi_m
    phi_p = 1 - psi_m - psi_p - phi_m
    return (
        phi_p * bell_state("phi+") + phi_m * bell_state("phi-") + psi_p * bell_state("psi+") + psi_m * bell_state("psi-")
    )


def _check_qber(q):
    if not (0 <= q <= 0.5):
        raise InvalidQber(f"QBER {q} outside [0, 1/2]")


def joint_probability_constraints(povms_a, povms_b, rho):
    cons = []
    for pa in povms_a:
        for pb in povms_b:
            for Ma in pa.elements:
                for Nb in pb.elements:
                    op = np.kron(Ma, Nb)
                    cons.append(Constraint(op, float(np.real(np.trace(op @ rho)))))
    return cons


def bb84_constraints(q_z, q_x, granularity="fine"):
    _check_qber(q_z)
    _check_qber(q_x)
    pz, px = bb84_povms()
    ident = Constraint(np.eye(4), 1.0)
    if granularity == "coarse":
        out = [ident]
        for povm, q in ((pz, q_z), (px, q_x)):
            err = np.kron(povm.elements[0], povm.elements[1]) + np.kron(povm.elements[1], povm.elements[0])
            out.append(Constraint(err, float(q)))
        return out
    if granularity != "fine":
        raise ValueError(f"unknown granularity {granularity!r}")
    return [ident] + joint_probability_constraints((pz, px), (pz, px), bb84_state(q_z, q_x))


def bb84_scenario(q_z, q_x=None, granularity="fine", p_z=0.5, eta_b=None, noclick=False, check=False):
    """Entanglement-based BB84; optional per-detector efficiencies on Bob's side.

    ``eta_b`` maps (basis, outcome) to an efficiency; with efficiencies the
    constraints are the joint statistics of the depolarized state measured
    with the lossy POVMs, including the no-click outcome.
    """
    q_x = q_z if q_x is None else q_x
    pz, px = bb84_povms()
    povms_a = (pz, px)
    povms_b = (pz, px)
    lossy = eta_b is not None or noclick
    if lossy:
        eta_b = eta_b or {}
        povms_b = tuple(
            apply_efficiency(p, [eta_b.get((y, b), 1.0) for b in range(len(p))]) for y, p in enumerate(povms_b)
        )
        povms_b = tuple(Povm(p.elements, y) for y, p in enumerate(povms_b))
    rho = bb84_state(q_z, q_x)
    if lossy or granularity == "fine":
        if granularity == "coarse":
            raise ValueError("efficiency models need fine-grained statistics")
        cons = [Constraint(np.eye(4), 1.0)] + joint_probability_constraints(povms_a, povms_b, rho)
    else:
        cons = bb84_constraints(q_z, q_x, "coarse")
    key_map = {(x, a, x): a for x in (0, 1) for a in (0, 1)}
    # no-click rounds are announced and dropped before the key is formed
    discard = [(y, 2) for y in (0, 1)] if lossy else []
    return make_scenario(
        povms_a,
        povms_b,
        [(0, 0), (1, 1)],
        key_map,
        cons,
        probs_a=(p_z, 1 - p_z),
        probs_b=(p_z, 1 - p_z),
        key_size=2,
        reference_state=rho,
        key_basis=0,
        name="bb84",
        check=check,
        meta={"q_z": q_z, "q_x": q_x, "granularity": granularity},
        discard_b=discard,
    )


# --- statistics of a reference state ------------------------------------------------


def fixed_expectation(scenario, op, tol=1e-9):
    """Tr(op σ) when it is pinned by the equality constraints, else None."""
    eqs = [c for c in scenario.constraints if c.kind == EQUALITY]
    A = np.array([c.op.reshape(-1) for c in eqs]).T
    target = np.asarray(op, dtype=complex).reshape(-1)
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    if np.max(np.abs(A @ coef - target)) > tol * (1.0 + np.max(np.abs(target))):
        return None
    return float(np.real(coef @ np.array([c.value for c in eqs])))


def bob_keep_operator(scenario, y):
    """1_A ⊗ Σ N_b over Bob's outcomes in basis ``y`` that are not discarded."""
    pb = scenario.povms_b[y]
    N = sum(pb.elements[b] for b in scenario.kept_outcomes_b(y))
    return np.kron(np.eye(scenario.d_a), N)


def keep_probability(scenario, y, rho=None):
    """Probability that Bob's basis-``y`` outcome survives discarding."""
    if not scenario.discard_b:
        return 1.0
    op = bob_keep_operator(scenario, y)
    if rho is not None:
        return float(np.real(np.trace(op @ rho)))
    p = fixed_expectation(scenario, op)
    if p is None:
        rho = scenario.reference_state
        if rho is None:
            raise InfeasibleScenario("the click probability is not fixed by the constraints")
        p = float(np.real(np.trace(op @ rho)))
    return p


def sifted_key_error_cost(scenario, rho=None):
    """H(key | Bob's outcome, announcements) per kept round, from a reference state."""
    rho = scenario.reference_state if rho is None else rho
    if rho is None:
        raise InfeasibleScenario("no reference state to derive the error-correction cost")
    weights = [scenario.probs_a[x] * scenario.probs_b[y] * keep_probability(scenario, y, rho) for x, y in scenario.kept]
    total = sum(weights)
    if total <= 0:
        return 0.0
    return sum(w / total * _cond_key_entropy(scenario, rho, x, y) for w, (x, y) in zip(weights, scenario.kept))


def key_basis_error_cost(scenario, rho=None):
    """H(A_x* | B_y*) for the designated key basis and its sifting partner."""
    rho = scenario.reference_state if rho is None else rho
    x = scenario.key_basis
    y = scenario.partner_basis(x)
    if y is None:
        raise InfeasibleScenario(f"key basis {x} has no kept partner")
    return _cond_key_entropy(scenario, rho, x, y, raw_outcome=True)


def _cond_key_entropy(scenario, rho, x, y, raw_outcome=False):
    pa, pb = scenario.povms_a[x], scenario.povms_b[y]
    keep_b = scenario.kept_outcomes_b(y)
    nr = len(pa) if raw_outcome else scenario.key_size
    joint = np.zeros((nr, len(keep_b)))
    for a, Ma in enumerate(pa.elements):
        r = a if raw_outcome else scenario.key_map[(x, a, y)]
        for j, b in enumerate(keep_b):
            joint[r, j] += max(0.0, float(np.real(np.trace(np.kron(Ma, pb.elements[b]) @ rho))))
    if joint.sum() <= 0:
        return 0.0
    joint /= joint.sum()
    return shannon_entropy(joint) - shannon_entropy(joint.sum(axis=0))


# --- optimisation over the feasible set ----------------------------------------------


class FeasibleSet:
    """Adds a Hermitian σ ⪰ 0 satisfying the scenario constraints to a builder."""

    def __init__(self, builder, scenario, sigma=None, psd=True):
        self.builder = builder
        self.scenario = scenario
        d = scenario.dim
        self.sigma = builder.add_hermitian(d) if sigma is None else sigma
        self.psd_block = builder.add_lmi(self.sigma, tag="sigma") if psd else None
        self.eq_rows = {}
        self.ge_rows = {}
        for i, c in enumerate(scenario.constraints):
            lin = self.sigma.trace_with(c.op)
            if c.kind == EQUALITY:
                self.eq_rows[i] = builder.add_eq(lin, c.value)
            elif c.kind == INTERVAL:
                lo = builder.add_ge(lin, c.value - c.half_width)
                hi = builder.add_ge((-lin[0], {k: -v for k, v in lin[1].items()}), -(c.value + c.half_width))
                self.ge_rows[i] = (lo, hi)
            else:
                self.ge_rows[i] = (builder.add_ge(lin, c.value), None)
        self.soc_blocks = []
        for e in scenario.ellipsoids:
            L = np.linalg.cholesky(e.cov)
            Linv = np.linalg.inv(L)
            lins = [self.sigma.trace_with(o) for o in e.ops]
            us = []
            for k in range(len(e.ops)):
                const = -float(Linv[k] @ e.center) + sum(Linv[k, j] * lins[j][0] for j in range(len(lins)))
                coef = {}
                for j, (_, cj) in enumerate(lins):
                    for var, val in cj.items():
                        coef[var] = coef.get(var, 0.0) + Linv[k, j] * val
                us.append((const, coef))
            blk = builder.add_soc((float(np.sqrt(e.radius2)), {}), us, tag="ellipsoid")
            self.soc_blocks.append((blk, Linv))

    def multipliers(self, sol):
        """Solver multipliers in the operator convention of :func:`dual_bound`."""
        n = len(self.scenario.constraints)
        y = np.zeros(n)
        u = np.zeros(n)
        v = np.zeros(n)
        for i, row in self.eq_rows.items():
            y[i] = sol.y[row]
        for i, (lo, hi) in self.ge_rows.items():
            u[i] = sol.z_lin[lo]
            if hi is not None:
                v[i] = sol.z_lin[hi]
        lams = []
        for blk, Linv in self.soc_blocks:
            Z = sol.z_blocks[blk]
            w = Z[:-1, -1]
            lams.append(2.0 * Linv.T @ w)
        return y, u, v, lams


def dual_bound(scenario, Omega, y, u, v, lams=(), restore=True):
    """Certified lower bound on min_{σ∈S} Tr(σ Ω) from (possibly infeasible) multipliers.

    ``Omega`` may be a list; the bound then holds for every member at once,
    which is what a decomposition σ = Σ_a σ_a with cost Σ_a Tr(σ_a Ω_a) needs.

    Interval multipliers are clipped to be nonnegative and the identity
    multiplier is shifted down until Σ y_i Γ_i + ... ⪯ Ω holds, so the value
    returned is a weak-duality bound for any input. Returns (bound,
    violation-before-restoration).
    """
    cons = scenario.constraints
    u = np.clip(np.asarray(u, dtype=float), 0.0, None)
    v = np.clip(np.asarray(v, dtype=float), 0.0, None)
    y = np.array(y, dtype=float)
    ops = []
    coefs = []
    for i, c in enumerate(cons):
        if c.kind == EQUALITY:
            coefs.append(y[i])
        elif c.kind == INTERVAL:
            coefs.append(u[i] - v[i])
        else:
            coefs.append(u[i])
            v[i] = 0.0
        ops.append(c.op)
    ell_terms = 0.0
    omegas = list(Omega) if isinstance(Omega, (list, tuple)) else [Omega]
    extra = np.zeros(np.shape(omegas[0]), dtype=complex)
    for e, lam in zip(scenario.ellipsoids, lams):
        lam = np.asarray(lam, dtype=float)
        L = np.linalg.cholesky(e.cov)
        ell_terms += float(lam @ e.center) - np.sqrt(e.radius2) * float(np.linalg.norm(L.T @ lam))
        for lj, o in zip(lam, e.ops):
            extra = extra + lj * o
    bound_ops = [np.asarray(O, dtype=complex) - extra for O in omegas]
    viols = [sdpcore.verify_dual_feasibility(ops, coefs, B) for B in bound_ops]
    viol = max(viols)
    if restore:
        idx = scenario.identity_index()
        worst = bound_ops[int(np.argmax(viols))]
        coefs = sdpcore.restore_dual_feasibility(ops, coefs, worst, idx)
        y[idx] = coefs[idx]
    value = ell_terms
    for i, c in enumerate(cons):
        if c.kind == EQUALITY:
            value += y[i] * c.value
        elif c.kind == INTERVAL:
            value += u[i] * (c.value - c.half_width) - v[i] * (c.value + c.half_width)
        else:
            value += u[i] * c.value
    return float(value), float(viol)


def linear_min(scenario, Omega, opts=None):
    """Solve min Tr(σ Ω) over the feasible set; returns (σ, certified bound, solution)."""
    pb = sdpcore.ProgramBuilder()
    fs = FeasibleSet(pb, scenario)
    pb.add_objective(fs.sigma.trace_with(Omega))
    sol = sdpcore.solve(pb.build(), opts)
    if sol.status == sdpcore.INFEASIBLE:
        raise InfeasibleScenario("constraint set is empty")
    if not np.all(np.isfinite(sol.x)):
        raise InfeasibleScenario(f"feasible-set solve failed with status {sol.status}")
    sigma = fs.sigma.value(sol.x)
    sigma = (sigma + sigma.conj().T) / 2
    bound, viol = dual_bound(scenario, Omega, *fs.multipliers(sol))
    return sigma, bound, sol, viol


def check_feasible(scenario, opts=None):
    """Feasibility solve; raises InfeasibleScenario if no PSD trace-one point exists."""
    sigma, _, sol, _ = linear_min(scenario, np.eye(scenario.dim), opts)
    res = max(sol.residuals.get("primal", 0.0), 0.0)
    if sol.status not in (sdpcore.OPTIMAL,) and res > 1e-6:
        raise InfeasibleScenario(f"feasibility solve ended with status {sol.status}")
    return sigma


def relax(scenario, delta):
    """Copy of ``scenario`` with every non-identity constraint widened by ``delta``.

    The widened set contains the original one, so any lower bound proved on
    it stays valid; it is used to regain strict feasibility when the
    original set has an empty interior.
    """
    cons = []
    for c in scenario.constraints:
        if c.is_identity():
            cons.append(c)
        elif c.kind == LOWER:
            cons.append(Constraint(c.op, c.value - delta, LOWER))
        else:
            cons.append(Constraint(c.op, c.value, INTERVAL, c.half_width + delta))
    return replace(scenario, constraints=tuple(cons))
