"""Certified asymptotic key-rate bounds.

Two independent routes to a lower bound on the conditional entropy of the
key given Eve:

* Frank–Wolfe on f(ρ) = D(G(ρ) || Z(G(ρ))), finished with a linearization
  whose dual is restored to exact feasibility;
* a Gauss–Radau rational relaxation of the logarithm, posed as one SDP and
  certified by an explicitly constructed dual point.

A guessing-probability SDP gives the min-entropy as a third, looser bound.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import protocol, sdpcore
from .errors import (
    InfeasibleScenario,
    OutOfRange,
    PerturbationOutOfRange,
    SolverNotConverged,
    SOutOfRange,
    UnsupportedConstraint,
)
from .linalg import LOG_CLAMP, kron, partial_trace, purify, relative_entropy, sqrtm_psd

LN2 = math.log(2.0)
# widening steps tried when the constraint set has no interior
RELAXATION_LADDER = (0.0, 1e-7, 1e-6, 1e-5)


def binary_entropy(q):
    if not 0.0 <= q <= 1.0:
        raise OutOfRange(f"probability {q} outside [0, 1]")
    if q in (0.0, 1.0):
        return 0.0
    return float(-q * math.log2(q) - (1 - q) * math.log2(1 - q))


# --- Gauss–Radau quadrature --------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    m: int
    nodes: np.ndarray
    weights: np.ndarray


def gauss_radau_rule(m):
    """Gauss–Radau rule on [0, 1] with the node at 1 fixed (Golub–Welsch).

    The Jacobi matrix of the shifted Legendre polynomials is modified in its
    last diagonal entry so that 1 becomes an eigenvalue; nodes are the
    eigenvalues and weights the squared first components of the eigenvectors.
    """
    m = int(m)
    if m < 1:
        raise OutOfRange("a quadrature rule needs at least one node")
    if m == 1:
        return QuadratureRule(1, np.array([1.0]), np.array([1.0]))
    k = np.arange(1, m)
    b = k / (2.0 * np.sqrt(4.0 * k * k - 1.0))
    a = np.full(m, 0.5)
    Jm1 = np.diag(a[:-1]) + np.diag(b[:-1], 1) + np.diag(b[:-1], -1)
    rhs = np.zeros(m - 1)
    rhs[-1] = b[-1] ** 2
    delta = np.linalg.solve(Jm1 - np.eye(m - 1), rhs)
    a[-1] = 1.0 + delta[-1]
    J = np.diag(a) + np.diag(b, 1) + np.diag(b, -1)
    t, V = np.linalg.eigh(J)
    w = V[0, :] ** 2
    t[-1] = 1.0
    return QuadratureRule(m, t, w / w.sum())


# --- reports ------------------------------------------------------------------------


@dataclass
class KeyRateReport:
    method: str
    bound: float  # certified lower bound on H(key | E) per sifted round
    ec_term: float
    raw_rate: float
    rate: float
    residual: float
    iterations: int
    runtime: float
    status: str = "ok"
    details: dict = field(default_factory=dict)


def devetak_winter_rate(hae_bound, ec_term=None, qber=None):
    """(raw, clamped) rate; pass either H(A|B) as ``ec_term`` or a QBER for h(Q)."""
    if ec_term is None:
        if qber is None:
            raise ValueError("need an error-correction term or a QBER")
        ec_term = binary_entropy(qber)
    raw = float(hae_bound - ec_term)
    return raw, max(0.0, raw)


def chsh_di_rate(S, Q):
    if not 2.0 - 1e-12 <= S <= 2.0 * math.sqrt(2.0) + 1e-12:
        raise SOutOfRange(f"CHSH value {S} outside [2, 2√2]")
    if not 0.0 <= Q <= 0.5:
        raise OutOfRange(f"QBER {Q} outside [0, 1/2]")
    arg = max(0.0, (S / 2.0) ** 2 - 1.0)
    p = min(1.0, 0.5 + 0.5 * math.sqrt(arg))
    return 1.0 - binary_entropy(p) - binary_entropy(Q)


# --- the objective f and its gradient ---------------------------------------------


def zeta_eps(eps, d_out):
    return 2.0 * eps * (d_out - 1) * math.log2(d_out / (eps * (d_out - 1)))


def _check_eps(eps, d_out):
    ceiling = 1.0 / (math.e * (d_out - 1)) if d_out > 1 else 1.0
    if not 0.0 < eps <= ceiling:
        raise PerturbationOutOfRange(f"perturbation {eps} outside (0, {ceiling:.3e}]")


def _log2_blocks(blocks):
    out = []
    for B in blocks:
        w, U = np.linalg.eigh((B + B.conj().T) / 2)
        out.append((U * np.log2(np.maximum(w, LOG_CLAMP))) @ U.conj().T)
    return out


class Objective:
    """f_ε(ρ) = D(G_ε(ρ) || Z G_ε(ρ)) with G_ε = (1-ε) G + ε Tr(G) 1/d′."""

    def __init__(self, scenario, eps=1e-10):
        self.scenario = scenario
        self.G = protocol.CompressedG(scenario)
        self.d_out = self.G.d_out
        _check_eps(eps, self.d_out)
        self.eps = eps
        self._adj_identity = self.G.adjoint([np.eye(n) for n in self.G.dims])

    def forward(self, rho):
        blocks = self.G.apply(rho)
        tr = sum(np.trace(B).real for B in blocks)
        e = self.eps
        return [(1 - e) * B + (e * tr / self.d_out) * np.eye(B.shape[0]) for B in blocks]

    def adjoint(self, blocks):
        tr = sum(np.trace(B).real for B in blocks)
        return (1 - self.eps) * self.G.adjoint(blocks) + (self.eps * tr / self.d_out) * self._adj_identity

    def value(self, rho):
        X = self.forward(rho)
        ZX = self.G.pinch(X)
        total = 0.0
        for A, LA, LB in zip(X, _log2_blocks(X), _log2_blocks(ZX)):
            total += float(np.real(np.sum(A.T * (LA - LB))))
        return max(total, 0.0) if total > -1e-12 else total

    def gradient(self, rho):
        X = self.forward(rho)
        diff = [LA - LB for LA, LB in zip(_log2_blocks(X), _log2_blocks(self.G.pinch(X)))]
        g = self.adjoint(diff)
        return (g + g.conj().T) / 2


def objective_f(rho, scenario, eps=1e-10):
    return Objective(scenario, eps).value(np.asarray(rho, dtype=complex))


def gradient_f(rho, scenario, eps=1e-10):
    return Objective(scenario, eps).gradient(np.asarray(rho, dtype=complex))


# --- Frank–Wolfe ---------------------------------------------------------------------


@dataclass
class FrankWolfeState:
    rho: np.ndarray
    f: float
    grad: np.ndarray
    gap: float
    iteration: int
    eps_pert: float
    converged: bool
    history: list = field(default_factory=list)


def _psd_normalize(rho):
    rho = (rho + rho.conj().T) / 2
    w, U = np.linalg.eigh(rho)
    w = np.clip(w, 0.0, None)
    rho = (U * w) @ U.conj().T
    return rho / np.trace(rho).real


def closest_feasible(scenario, target=None, opts=None):
    """Frobenius projection of ``target`` (default the maximally mixed state) onto S."""
    d = scenario.dim
    target = np.eye(d) / d if target is None else np.asarray(target, dtype=complex)
    pb = sdpcore.ProgramBuilder()
    fs = protocol.FeasibleSet(pb, scenario)
    t = pb.add_real(1)
    us = []
    for B in sdpcore._hermitian_basis(d):
        nrm = math.sqrt(np.real(np.sum(B.conj() * B)))
        const, coef = fs.sigma.trace_with(B)
        tgt = float(np.real(np.sum(B.T * target)))
        us.append(((const - tgt) / nrm, {k: v / nrm for k, v in coef.items()}))
    pb.add_soc((0.0, {int(t[0]): 1.0}), us)
    pb.add_objective(pb.scalar(t[0]))
    sol = sdpcore.solve(pb.build(), opts)
    if sol.status == sdpcore.INFEASIBLE or not np.all(np.isfinite(sol.x)):
        raise InfeasibleScenario(f"no feasible starting point (solver status {sol.status})")
    return _psd_normalize(fs.sigma.value(sol.x))


def _golden(fun, tol=1e-6):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, 1.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    lam = (a + b) / 2.0
    # the endpoints are never sampled by the bracket, so compare explicitly
    best = min(((fun(lam), lam), (fun(1.0), 1.0)))
    return best[1], best[0]


def frank_wolfe_minimize(scenario, eps_stop=1e-7, max_iter=300, line_search_tol=1e-6, eps_pert=1e-10, opts=None):
    if scenario.ellipsoids:
        raise UnsupportedConstraint("ellipsoid constraints are only handled by the Gauss–Radau backend")
    obj = Objective(scenario, eps_pert)
    rho = closest_feasible(scenario, opts=opts)
    f = obj.value(rho)
    history = [f]
    gap = math.inf
    grad = obj.gradient(rho)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        sigma, _, _, _ = protocol.linear_min(scenario, grad, opts)
        sigma = _psd_normalize(sigma)
        delta = sigma - rho
        gap = -float(np.real(np.sum(delta.T * grad)))
        if gap < eps_stop:
            converged = True
            break
        lam, f_new = _golden(lambda s: obj.value(rho + s * delta), line_search_tol)
        if f_new > f:
            # no descent along this direction within line-search resolution
            converged = gap < 10 * eps_stop
            break
        rho = _psd_normalize(rho + lam * delta)
        f = obj.value(rho)
        history.append(f)
        grad = obj.gradient(rho)
    return FrankWolfeState(rho, f, grad, gap, it, eps_pert, converged, history)


def certified_bound_fw(state, scenario, opts=None):
    """Linearization bound min_S f ≥ f_ε(ρ) + min_S Tr((σ-ρ)∇f_ε) - ζ_ε.

    The inner minimum is replaced by a weak-duality value from restored
    multipliers, so the result is valid for any state ρ. Returns
    (bound, violation-before-restoration).
    """
    obj = Objective(scenario, state.eps_pert)
    rho = _psd_normalize(state.rho)
    grad = obj.gradient(rho)
    _, lin_bound, _, viol = protocol.linear_min(scenario, grad, opts)
    beta = obj.value(rho) - float(np.real(np.sum(rho.T * grad))) + lin_bound
    return beta - zeta_eps(state.eps_pert, obj.d_out), viol


def fw_rate(scenario, eps_stop=1e-7, max_iter=300, eps_pert=1e-10, opts=None):
    """Frank–Wolfe key rate per basis-matched round.

    The rate is (f - p_kept H(key | Bob, announcements)) / p_pass, where
    p_pass is the basis-sifting probability and p_kept additionally drops
    Bob's discarded outcomes. Without discarding the two coincide.
    """
    t0 = time.perf_counter()
    st = frank_wolfe_minimize(scenario, eps_stop, max_iter, eps_pert=eps_pert, opts=opts)
    bound, viol = certified_bound_fw(st, scenario, opts)
    ppass = protocol.CompressedG(scenario).p_pass
    pkept = sum(
        scenario.probs_a[x] * scenario.probs_b[y] * protocol.keep_probability(scenario, y) for x, y in scenario.kept
    )
    hae = bound / ppass
    ec = protocol.sifted_key_error_cost(scenario) * pkept / ppass
    raw, clamped = devetak_winter_rate(hae, ec)
    return KeyRateReport(
        "frank_wolfe",
        hae,
        ec,
        raw,
        clamped,
        max(viol, 0.0),
        st.iteration,
        time.perf_counter() - t0,
        "ok" if st.converged else "max_iter",
        {"f_iterate": st.f / ppass, "gap": st.gap, "p_pass": ppass, "p_kept": pkept},
    )


# --- Gauss–Radau SDP -------------------------------------------------------------------


def _key_operators(scenario, x=None):
    x = scenario.key_basis if x is None else x
    ib = np.eye(scenario.d_b)
    return [kron(M, ib) for M in scenario.povms_a[x].elements]


def _range_projector(M, tol=1e-10):
    w, U = np.linalg.eigh(M)
    keep = w > tol * max(1.0, w[-1])
    return U[:, keep] @ U[:, keep].conj().T


def gauss_radau_bound(scenario, x=None, m=8, opts=None, kappa=1.0):
    """Certified lower bound on H(A_x | E) over the feasible set.

    The solver's dual blocks only seed the certificate: the off-diagonal part
    of each first block is projected onto the support of its key operator and
    the remaining entries are completed so both dual blocks are PSD by
    construction. What is left is a linear minimum over S, bounded by weak
    duality. ``kappa`` rescales the reference operator 1 ⊗ ρ_E, which only
    moves where the rational approximation of the logarithm is tight.
    Returns (bound, details).
    """
    if m < 2:
        raise OutOfRange("the Gauss–Radau relaxation needs m >= 2")
    if kappa <= 0:
        raise OutOfRange("kappa must be positive")
    rule = gauss_radau_rule(m)
    Ms = _key_operators(scenario, x)
    d = scenario.dim
    cs = rule.weights / (rule.nodes * LN2)
    c_m = float(cs.sum())
    post = _postselection(scenario, x)
    face = _zero_probability_face(scenario)
    plan = ([("face", 0.0)] if face is not None else []) + [("full", r) for r in RELAXATION_LADDER]
    sol = None
    for kind, relaxation in plan:
        target = protocol.relax(scenario, relaxation) if relaxation else scenario
        V = face if kind == "face" else np.eye(d)
        if post is None:
            W = None
            ops = [V.conj().T @ M @ V for M in Ms]
        else:
            Ur = _range_basis(post @ V)
            W = Ur.conj().T @ post @ V
            ops = [Ur.conj().T @ M @ Ur for M in Ms]
        pb, blocks = _gauss_radau_program(target, ops, rule, cs, kappa, None if kind == "full" else V, W)
        sol = sdpcore.solve(pb.build(), opts)
        if sol.status == sdpcore.INFEASIBLE and relaxation == 0.0:
            raise InfeasibleScenario("constraint set is empty")
        if sol.status == sdpcore.OPTIMAL:
            break
    if sol is None or not np.all(np.isfinite(sol.x)) or not sol.z_blocks:
        raise SolverNotConverged(f"Gauss–Radau SDP ended with status {getattr(sol, 'status', None)}")
    sigma_star = _sigma_value(pb, sol, V.shape[1])
    if W is not None:
        sigma_star = W @ sigma_star @ W.conj().T
    r = sigma_star.shape[0]
    lift = V if W is None else V @ W.conj().T
    supports = [np.linalg.eigh(M) for M in ops]
    seeds = {"solver": [], "primal": []}
    for i, a, k1, _ in blocks:
        t, c, M = rule.nodes[i], cs[i], ops[a]
        if t >= 1.0:
            zero = np.zeros((r, r), dtype=complex)
            seeds["solver"].append(zero)
            seeds["primal"].append(zero)
            continue
        w, U = supports[a]
        U = U[:, w > 1e-10 * max(1.0, w[-1])]
        Y1 = pb.dual_block(sol, k1)
        seeds["solver"].append(Y1[:r, r:] @ U @ U.conj().T)
        seeds["primal"].append(_optimal_q1(sigma_star, M, U, c, t, kappa))
    best = None
    for name, q1s in seeds.items():
        P = lift @ _certificate_operator(q1s, blocks, rule, cs, ops, kappa) @ lift.conj().T
        _, lin, _, viol = protocol.linear_min(scenario, -P, opts)
        cand = (c_m - math.log2(kappa) + lin, viol, name)
        if best is None or cand[0] > best[0]:
            best = cand
    bound, viol, seed = best
    return bound, {
        "sdp_value": sol.primal_objective,
        "dual_value": sol.dual_objective,
        "status": sol.status,
        "iterations": sol.iterations,
        "violation": viol,
        "mode": kind,
        "seed": seed,
        "relaxation": relaxation,
    }


def _sigma_value(pb, sol, r):
    """Primal state block (the first LMI added by the program builder)."""
    blk = pb.blocks[0]
    S = blk.const + np.tensordot(sol.x[blk.cols], blk.mats, axes=1)
    if pb.block_tags[0][1]:
        S = S[:r, :r] + 1j * S[r:, :r]
    return (S + S.conj().T) / 2


def _optimal_q1(sigma, M, U, c, t, kappa):
    """Off-diagonal dual block minimising Tr(σ P) for a fixed state σ.

    Stationarity of the two quadratic completions gives a Sylvester-type
    equation a σ X K⁻¹ + b X σ_K = b c M σ U in X (columns on supp M).
    """
    a = 1.0 / (c * (1 - t))
    b = 1.0 / (c * t * kappa)
    K = U.conj().T @ M @ U
    sK = U.conj().T @ sigma @ U
    d, k = U.shape
    lhs = a * np.kron(sigma, np.linalg.inv(K).T) + b * np.kron(np.eye(d), sK.T)
    rhs = (b * c * M @ sigma @ U).reshape(-1)
    X, *_ = np.linalg.lstsq(lhs, rhs, rcond=1e-13)
    return X.reshape(d, k) @ U.conj().T


def _certificate_operator(q1s, blocks, rule, cs, Ms, kappa):
    d = Ms[0].shape[0]
    P = np.zeros((d, d), dtype=complex)
    for Q1, (i, a, _, _) in zip(q1s, blocks):
        t, c, M = rule.nodes[i], cs[i], Ms[a]
        if t < 1.0:
            R1 = c * (1 - t) * M
            P = P + Q1 @ np.linalg.pinv(R1, rcond=1e-12, hermitian=True) @ Q1.conj().T
        Q2 = c * M - Q1.conj().T
        P = P + Q2 @ Q2.conj().T / (c * t * kappa)
    return (P + P.conj().T) / 2


def _zero_probability_face(scenario, tol=1e-10):
    """Basis of the common kernel of PSD constraint operators observed with value 0.

    Tr(Γσ) = 0 with Γ ⪰ 0 forces supp σ ⊆ ker Γ, so every feasible state lives
    on this face. Returns None when the face is the whole space.
    """
    d = scenario.dim
    W = np.zeros((d, d), dtype=complex)
    for c in scenario.constraints:
        if c.kind != protocol.EQUALITY or c.value != 0.0:
            continue
        if np.linalg.eigvalsh(c.op)[0] < -1e-12:
            continue
        W = W + c.op
    if not np.any(W):
        return None
    w, U = np.linalg.eigh(W)
    keep = w <= tol * max(1.0, w[-1])
    if keep.all() or not keep.any():
        return None
    return U[:, keep]


def _range_basis(W, tol=1e-10):
    U, s, _ = np.linalg.svd(W)
    keep = s > tol * max(1.0, s[0])
    return U[:, : int(keep.sum())]


def _postselection(scenario, x=None):
    """K / sqrt(p) for Bob's surviving outcomes in the partner basis, or None.

    The entropy is then evaluated on the conditional state K σ K† / p. This
    is linear in σ because p is pinned by the observed statistics.
    """
    if not scenario.discard_b:
        return None
    x = scenario.key_basis if x is None else x
    y = scenario.partner_basis(x)
    if y is None or len(scenario.kept_outcomes_b(y)) == len(scenario.povms_b[y]):
        return None
    op = protocol.bob_keep_operator(scenario, y)
    p = protocol.fixed_expectation(scenario, op)
    if p is None:
        raise UnsupportedConstraint("discarding needs the surviving-outcome probability to be observed exactly")
    if p <= 0:
        raise InfeasibleScenario("no rounds survive the discard step")
    return sqrtm_psd(op) / math.sqrt(p)


def _gauss_radau_program(scenario, ops, rule, cs, kappa=1.0, V=None, W=None):
    """Build the relaxation.

    With ``V`` the feasible state is V τ V†; with ``W`` the entropy is taken
    on W τ W† instead of τ. ``ops`` act on whichever of these the blocks see.
    """
    pb = sdpcore.ProgramBuilder()
    if V is None:
        tau = protocol.FeasibleSet(pb, scenario).sigma
    else:
        tau = pb.add_hermitian(V.shape[1])
        pb.add_lmi(tau)
        protocol.FeasibleSet(pb, scenario, sigma=tau.lmul(V).rmul(V.conj().T), psd=False)
    sig = tau if W is None else tau.lmul(W).rmul(W.conj().T)
    r = ops[0].shape[0]
    blocks = []
    for i, (t, c) in enumerate(zip(rule.nodes, cs)):
        for a, M in enumerate(ops):
            zeta = pb.add_complex(r, r)
            eta = pb.add_hermitian(r)
            theta = pb.add_hermitian(r)
            const, coef = (zeta + zeta.H).trace_with(M)
            for part, op in ((eta, (1 - t) * M), (theta, kappa * t * np.eye(r))):
                cst, cf = part.trace_with(op)
                const += cst
                for k, v in cf.items():
                    coef[k] = coef.get(k, 0.0) + v
            pb.add_objective((c * const, {k: c * v for k, v in coef.items()}))
            k1 = pb.add_lmi(sdpcore.Affine.bmat([[sig, zeta], [zeta.H, eta]]))
            k2 = pb.add_lmi(sdpcore.Affine.bmat([[sig, zeta.H], [zeta, theta]]))
            blocks.append((i, a, k1, k2))
    pb.offset += float(np.sum(cs)) - math.log2(kappa)
    return pb, blocks


def gr_rate(scenario, m=8, opts=None, kappa=1.0):
    t0 = time.perf_counter()
    bound, info = gauss_radau_bound(scenario, None, m, opts, kappa)
    ec = protocol.key_basis_error_cost(scenario)
    # both terms are per surviving round; rescale to per key-basis round
    keep = protocol.keep_probability(scenario, scenario.partner_basis(scenario.key_basis))
    bound, ec = keep * bound, keep * ec
    info["keep_probability"] = keep
    raw, clamped = devetak_winter_rate(bound, ec)
    return KeyRateReport(
        "gauss_radau",
        bound,
        ec,
        raw,
        clamped,
        max(info["violation"], 0.0),
        info["iterations"],
        time.perf_counter() - t0,
        "ok" if info["status"] == sdpcore.OPTIMAL else info["status"],
        info,
    )


# --- min-entropy --------------------------------------------------------------------------


def _guessing_dual(conditionals, opts=None):
    """min Tr Y s.t. Y ⪰ σ_a for all a; the returned Y is made feasible by a shift."""
    dE = conditionals[0].shape[0]
    pb = sdpcore.ProgramBuilder()
    Y = pb.add_hermitian(dE)
    for s in conditionals:
        pb.add_lmi(Y - s)
    pb.add_objective(Y.trace_with(np.eye(dE)))
    sol = sdpcore.solve(pb.build(), opts)
    Yv = Y.value(sol.x) if np.all(np.isfinite(sol.x)) else np.zeros((dE, dE), dtype=complex)
    Yv = (Yv + Yv.conj().T) / 2
    shift = max(max(np.linalg.eigvalsh(s - Yv)[-1] for s in conditionals), 0.0)
    return float(np.trace(Yv).real + dE * shift), sol


def guessing_probability(rho, povm, d_b):
    """Eve's optimal guessing probability for Alice's outcome when Eve purifies ρ_AB."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    psi = purify(rho)
    r = psi.size // d
    conds = []
    for M in povm.elements:
        op = kron(M, np.eye(d_b), np.eye(r))
        vec = psi
        full = op @ np.outer(vec, vec.conj())
        conds.append(partial_trace(full, [d, r], [1]))
    return _guessing_dual(conds)[0]


def hmin_bound(scenario, x=None, rho=None, opts=None):
    """Certified lower bound on H_min(A_x | E).

    With ``rho`` given the purification is fixed; otherwise Eve also picks the
    worst feasible state, through the decomposition ρ = Σ_a ρ_a with guess a.
    """
    x = scenario.key_basis if x is None else x
    if rho is None and _postselection(scenario, x) is not None:
        raise UnsupportedConstraint("the min-entropy bound does not handle discarded outcomes")
    povm = scenario.povms_a[x]
    if rho is not None:
        pg = guessing_probability(rho, povm, scenario.d_b)
        return -math.log2(min(max(pg, 1e-300), 1.0))
    Ms = _key_operators(scenario, x)
    d = scenario.dim
    pb = sdpcore.ProgramBuilder()
    parts = [pb.add_hermitian(d) for _ in Ms]
    for p in parts:
        pb.add_lmi(p)
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    fs = protocol.FeasibleSet(pb, scenario, sigma=total, psd=False)
    for p, M in zip(parts, Ms):
        pb.add_objective(p.trace_with(-M))
    sol = sdpcore.solve(pb.build(), opts)
    if sol.status == sdpcore.INFEASIBLE:
        raise InfeasibleScenario("constraint set is empty")
    if not np.all(np.isfinite(sol.x)):
        raise SolverNotConverged(f"guessing-probability SDP ended with status {sol.status}")
    neg_pg, _ = protocol.dual_bound(scenario, [-M for M in Ms], *fs.multipliers(sol))
    pg = min(max(-neg_pg, 1e-300), 1.0)
    return -math.log2(pg)


def hmin_rate(scenario, opts=None):
    t0 = time.perf_counter()
    bound = hmin_bound(scenario, opts=opts)
    ec = protocol.key_basis_error_cost(scenario)
    raw, clamped = devetak_winter_rate(bound, ec)
    return KeyRateReport("min_entropy", bound, ec, raw, clamped, 0.0, 0, time.perf_counter() - t0)


def key_entropy_given_eve(rho, povm, d_b):
    """H(A|E) of Alice's outcome when Eve holds a purification of ρ_AB."""
    sc = protocol.make_scenario(
        [povm],
        [[np.eye(d_b)]],
        [(0, 0)],
        {(0, a, 0): a for a in range(len(povm))},
        [],
        key_size=len(povm),
        check=False,
    )
    return exact_f(sc, rho)


def exact_f(scenario, rho):
    """Unperturbed D(G(ρ) || Z G(ρ))."""
    G = protocol.CompressedG(scenario)
    X = G.apply(np.asarray(rho, dtype=complex))
    return float(sum(relative_entropy(A, Z) for A, Z in zip(X, G.pinch(X))))
