"""Dense primal-dual interior-point solver for small semidefinite programs.

Problems are stored in the conic standard form

    minimize    c^T x
    subject to  A x = b
                h - G x = s,   s in K

with K a product of a nonnegative orthant and real symmetric PSD cones.
Complex Hermitian matrix inequalities are embedded as real symmetric blocks
of doubled size through H -> [[Re H, -Im H], [Im H, Re H]].

The iteration is a homogeneous self-dual embedding with Nesterov-Todd
scaling and a Mehrotra predictor-corrector, in the spirit of CVXOPT's
``conelp``. Certified bounds never trust the solver directly: callers
rebuild exactly feasible dual points and evaluate weak duality themselves.
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, IdentityConstraintMissing, IllFormedProgram

log = logging.getLogger(__name__)

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAX_ITER = "MaxIter"
NUMERICAL = "NumericalTrouble"


@dataclass
class SolverOptions:
    gap_tol: float = 1e-8
    res_tol: float = 1e-9
    max_iter: int = 200
    step: float = 0.99
    refine: int = 2

    @classmethod
    def from_env(cls, **kw):
        opts = cls(**kw)
        env = os.environ.get("KEYFORGE_SOLVER_TOL")
        if env:
            opts.gap_tol = float(env)
        return opts


@dataclass
class PsdBlock:
    """Real symmetric block ``const + sum_j x[cols[j]] * mats[j]`` constrained PSD."""

    cols: np.ndarray
    mats: np.ndarray
    const: np.ndarray

    @property
    def dim(self):
        return self.const.shape[0]


@dataclass
class ConeProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lin_G: np.ndarray  # rows of the affine map g0 + lin_G x >= 0
    lin_g0: np.ndarray
    blocks: list
    offset: float = 0.0

    @property
    def nvar(self):
        return self.c.shape[0]

    def validate(self):
        n = self.nvar
        if self.A.shape != (self.b.shape[0], n):
            raise IllFormedProgram(f"A has shape {self.A.shape}, expected ({self.b.shape[0]}, {n})")
        if self.lin_G.shape != (self.lin_g0.shape[0], n):
            raise IllFormedProgram("linear inequality data has inconsistent shape")
        for k, blk in enumerate(self.blocks):
            d = blk.dim
            if blk.const.shape != (d, d) or blk.mats.shape != (len(blk.cols), d, d):
                raise IllFormedProgram(f"block {k} has inconsistent shapes")
            if np.max(np.abs(blk.const - blk.const.T), initial=0.0) > 1e-12 * (1 + np.max(np.abs(blk.const))):
                raise IllFormedProgram(f"block {k} constant is not symmetric")
            if len(blk.cols) and np.max(np.abs(blk.mats - blk.mats.transpose(0, 2, 1))) > 1e-12 * (
                1 + np.max(np.abs(blk.mats))
            ):
                raise IllFormedProgram(f"block {k} coefficient is not symmetric")
            if len(blk.cols) and (blk.cols.min() < 0 or blk.cols.max() >= n):
                raise IllFormedProgram(f"block {k} references an unknown variable")
        for arr in (self.c, self.A, self.b, self.lin_G, self.lin_g0):
            if not np.all(np.isfinite(arr)):
                raise IllFormedProgram("non-finite program data")

    def dump(self, path):
        """Write the program as sparse triplets ``block row col re im``.

        Block 0 holds the objective (row 0) and equality rows (row i+1, last
        column index n is the right-hand side). Block 1 holds the linear
        inequalities in the same layout. PSD block k+2 lists, for each
        variable j in the block, entries tagged ``j`` as ``k+2 j row col re im``
        with j = -1 for the constant term.
        """
        with open(path, "w") as fh:
            fh.write(f"# keyforge cone program: nvar={self.nvar} offset={self.offset!r}\n")
            for j in np.nonzero(self.c)[0]:
                fh.write(f"0 0 {j} {self.c[j]!r} 0.0\n")
            for i in range(self.A.shape[0]):
                for j in np.nonzero(self.A[i])[0]:
                    fh.write(f"0 {i + 1} {j} {self.A[i, j]!r} 0.0\n")
                fh.write(f"0 {i + 1} {self.nvar} {self.b[i]!r} 0.0\n")
            for i in range(self.lin_G.shape[0]):
                for j in np.nonzero(self.lin_G[i])[0]:
                    fh.write(f"1 {i} {j} {self.lin_G[i, j]!r} 0.0\n")
                fh.write(f"1 {i} {self.nvar} {self.lin_g0[i]!r} 0.0\n")
            for k, blk in enumerate(self.blocks):
                terms = [(-1, blk.const)] + list(zip(blk.cols.tolist(), blk.mats))
                for j, M in terms:
                    r, cidx = np.nonzero(np.triu(M))
                    for a, bb in zip(r, cidx):
                        fh.write(f"{k + 2} {j} {a} {bb} {M[a, bb]!r} 0.0\n")


@dataclass
class ConeSolution:
    status: str
    x: np.ndarray
    y: np.ndarray  # equality multipliers
    z_lin: np.ndarray  # multipliers of linear inequalities
    z_blocks: list  # PSD multipliers, one per block
    primal_objective: float
    dual_objective: float
    residuals: dict = field(default_factory=dict)
    iterations: int = 0


# --- cone helpers -------------------------------------------------------------


class _Cone:
    """Bookkeeping for vectors in R^ml x S^n1 x ... x S^nk."""

    def __init__(self, ml, dims):
        self.ml = ml
        self.dims = list(dims)
        self.degree = ml + sum(self.dims)

    def identity(self):
        return [np.ones(self.ml)] + [np.eye(d) for d in self.dims]

    @staticmethod
    def inner(u, v):
        return float(u[0] @ v[0] + sum(np.sum(a * b) for a, b in zip(u[1:], v[1:])))

    @staticmethod
    def norm(u):
        return float(np.sqrt(np.sum(u[0] ** 2) + sum(np.sum(a * a) for a in u[1:])))

    @staticmethod
    def axpy(alpha, u, v):
        return [v[i] + alpha * u[i] for i in range(len(u))]

    @staticmethod
    def scale(alpha, u):
        return [alpha * a for a in u]

    def min_eig(self, u):
        vals = [u[0].min()] if self.ml else []
        vals += [np.linalg.eigvalsh(a)[0] for a in u[1:]]
        return min(vals) if vals else np.inf


class _Scaling:
    """Nesterov-Todd scaling point for the current (s, z) pair."""

    def __init__(self, s, z):
        self.d = np.sqrt(s[0] / z[0]) if len(s[0]) else np.zeros(0)  # W on the orthant
        self.lam = [np.sqrt(s[0] * z[0])]
        self.r = []
        self.rinv = []
        for S, Z in zip(s[1:], z[1:]):
            ls, Qs = np.linalg.eigh(S)
            lz, Qz = np.linalg.eigh(Z)
            Ls = Qs * np.sqrt(np.maximum(ls, 1e-300))
            Lz = Qz * np.sqrt(np.maximum(lz, 1e-300))
            U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
            isq = 1.0 / np.sqrt(lam)
            self.r.append((Ls @ Vt.T) * isq)
            self.rinv.append(isq[:, None] * (U.T @ Lz.T))
            self.lam.append(lam)

    # W u
    def W(self, u):
        return [u[0] * self.d] + [_sym(r.T @ a @ r) for r, a in zip(self.r, u[1:])]

    # W^{-T} u
    def Wit(self, u):
        return [u[0] / self.d] + [_sym(ri @ a @ ri.T) for ri, a in zip(self.rinv, u[1:])]

    # W^T u
    def Wt(self, u):
        return [u[0] * self.d] + [_sym(r @ a @ r.T) for r, a in zip(self.r, u[1:])]

    # (W^T W)^{-1} u
    def WtW_inv(self, u):
        out = [u[0] / self.d**2]
        for ri, a in zip(self.rinv, u[1:]):
            t = _sym(ri @ a @ ri.T)
            out.append(_sym(ri.T @ t @ ri))
        return out

    # W^T W u
    def WtW(self, u):
        out = [u[0] * self.d**2]
        for r, a in zip(self.r, u[1:]):
            t = _sym(r.T @ a @ r)
            out.append(_sym(r @ t @ r.T))
        return out

    def lam_sq(self):
        return [self.lam[0] ** 2] + [np.diag(l**2) for l in self.lam[1:]]

    def lam_div(self, u):
        """Solve lam o q = u for q."""
        out = [u[0] / self.lam[0]]
        for l, a in zip(self.lam[1:], u[1:]):
            out.append(2.0 * a / (l[:, None] + l[None, :]))
        return out

    def max_step(self, ds_scaled, dz_scaled):
        """Largest alpha with lam + alpha*d in the cone for both directions."""
        amax = np.inf
        for d in (ds_scaled, dz_scaled):
            if len(d[0]):
                neg = d[0] < 0
                if np.any(neg):
                    amax = min(amax, float(np.min(-self.lam[0][neg] / d[0][neg])))
            for l, a in zip(self.lam[1:], d[1:]):
                isq = 1.0 / np.sqrt(l)
                m = np.linalg.eigvalsh(isq[:, None] * a * isq[None, :])[0]
                if m < 0:
                    amax = min(amax, -1.0 / m)
        return amax


def _sym(M):
    return (M + M.T) / 2


def _jordan(u, v):
    return [u[0] * v[0]] + [(a @ b + b @ a) / 2 for a, b in zip(u[1:], v[1:])]


# --- linear maps -----------------------------------------------------------------


class _Maps:
    def __init__(self, prog):
        self.prog = prog
        self.n = prog.nvar
        self.Gl = -prog.lin_G
        self.hl = prog.lin_g0
        self.blocks = [(blk.cols, -blk.mats, blk.const) for blk in prog.blocks]

    def G(self, x):
        out = [self.Gl @ x]
        for cols, Gm, _ in self.blocks:
            out.append(np.tensordot(x[cols], Gm, axes=1) if len(cols) else np.zeros(Gm.shape[1:]))
        return out

    def GT(self, z):
        out = self.Gl.T @ z[0]
        for (cols, Gm, _), Z in zip(self.blocks, z[1:]):
            if len(cols):
                np.add.at(out, cols, np.tensordot(Gm, Z, axes=([1, 2], [0, 1])))
        return out

    def h(self):
        return [self.hl.copy()] + [c.copy() for _, _, c in self.blocks]


def _reduce_equalities(A, b, tol=1e-10):
    """Drop dependent rows of A; report inconsistency of the dropped ones."""
    if A.shape[0] == 0:
        return A, b, np.arange(0), True
    scale = max(1.0, float(np.max(np.abs(A))))
    Q, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * scale * max(A.shape)))
    keep = np.sort(piv[:rank])
    Ak, bk = A[keep], b[keep]
    if rank == A.shape[0]:
        return Ak, bk, keep, True
    # consistency: b must lie in the row-space relation of A
    coef, *_ = np.linalg.lstsq(Ak.T, A.T, rcond=None)
    pred = coef.T @ bk
    ok = np.max(np.abs(pred - b)) <= 1e-8 * max(1.0, float(np.max(np.abs(b))))
    return Ak, bk, keep, bool(ok)


# --- main solver -------------------------------------------------------------------


def _acceptable(rec, opts):
    """Reporting tolerances for Optimal: looser than the stopping rule by 10x each."""
    pres, dres, gap, *_, pcost, dcost = rec
    scale = 1.0 + min(abs(pcost), abs(dcost))
    return max(pres, dres) <= 10 * opts.res_tol and gap <= 10 * opts.gap_tol * scale


def solve(prog, opts=None):
    """Solve ``prog``; statuses are reported in the returned ConeSolution."""
    opts = opts or SolverOptions.from_env()
    prog.validate()
    n = prog.nvar
    A_full, b_full = prog.A, prog.b
    A, b, keep_rows, consistent = _reduce_equalities(A_full, b_full)
    cone = _Cone(prog.lin_G.shape[0], [blk.dim for blk in prog.blocks])
    maps = _Maps(prog)
    c = prog.c

    def empty_solution(status):
        return ConeSolution(
            status,
            np.full(n, np.nan),
            np.full(A_full.shape[0], np.nan),
            np.full(cone.ml, np.nan),
            [np.full((d, d), np.nan) for d in cone.dims],
            np.nan,
            np.nan,
        )

    if not consistent:
        return empty_solution(INFEASIBLE)
    if cone.degree == 0:
        raise IllFormedProgram("program has no cone constraints")

    h = maps.h()
    resx0 = max(1.0, float(np.linalg.norm(c)))
    resy0 = max(1.0, float(np.linalg.norm(b)))
    resz0 = max(1.0, _Cone.norm(h))

    # Gram matrix of G restricted per block is rebuilt each iteration through the scaling.
    def build_schur(W):
        H = np.zeros((n, n))
        if cone.ml:
            Gs = maps.Gl / W.d[:, None]
            H += Gs.T @ Gs
        for (cols, Gm, _), ri in zip(maps.blocks, W.rinv):
            if not len(cols):
                continue
            T = np.einsum("ab,jbc,dc->jad", ri, Gm, ri, optimize=True).reshape(len(cols), -1)
            H[np.ix_(cols, cols)] += T @ T.T
        return H

    class KKT:
        def __init__(self, W):
            self.W = W
            H = build_schur(W)
            Ht = H + A.T @ A
            scale = max(1.0, float(np.max(np.abs(np.diag(Ht)))) if n else 1.0)
            reg = 0.0
            for _ in range(8):
                try:
                    self.cf = sla.cho_factor(Ht + reg * np.eye(n), lower=True, check_finite=False)
                    break
                except np.linalg.LinAlgError:
                    reg = 1e-14 * scale if reg == 0.0 else reg * 100
            else:
                raise np.linalg.LinAlgError("KKT factorization failed")
            if A.shape[0]:
                HiAt = sla.cho_solve(self.cf, A.T)
                S = A @ HiAt
                self.Sf = sla.cho_factor(S + 1e-15 * np.trace(S) * np.eye(A.shape[0]), lower=True)
            else:
                self.Sf = None

        def _solve_once(self, bx, by, bz):
            W = self.W
            rhs = bx + maps.GT(W.WtW_inv(bz)) + A.T @ by
            if self.Sf is not None:
                t = sla.cho_solve(self.cf, rhs)
                uy = sla.cho_solve(self.Sf, A @ t - by)
                ux = sla.cho_solve(self.cf, rhs - A.T @ uy)
            else:
                uy = np.zeros(0)
                ux = sla.cho_solve(self.cf, rhs)
            uz = W.WtW_inv(_Cone.axpy(-1.0, bz, maps.G(ux)))
            return ux, uy, uz

        def solve(self, bx, by, bz):
            ux, uy, uz = self._solve_once(bx, by, bz)
            W = self.W
            for _ in range(opts.refine):
                rx = bx - (A.T @ uy + maps.GT(uz))
                ry = by - A @ ux
                rz = _Cone.axpy(-1.0, _Cone.axpy(-1.0, W.WtW(uz), maps.G(ux)), bz)
                if max(np.linalg.norm(rx), np.linalg.norm(ry), _Cone.norm(rz)) < 1e-15:
                    break
                dx, dy, dz = self._solve_once(rx, ry, rz)
                ux, uy, uz = ux + dx, uy + dy, _Cone.axpy(1.0, dz, uz)
            return ux, uy, uz

    # initial point from two least-norm problems
    ident = _Cone(cone.ml, cone.dims).identity()

    class _IdScale:
        d = np.ones(cone.ml)
        rinv = [np.eye(dd) for dd in cone.dims]
        r = rinv

        def WtW_inv(self, u):
            return [a.copy() for a in u]

        def WtW(self, u):
            return [a.copy() for a in u]

    try:
        k0 = KKT(_IdScale())
        x, _, uz = k0.solve(np.zeros(n), b, h)
        s = _Cone.scale(-1.0, uz)
        _, y, z = k0.solve(-c, np.zeros(A.shape[0]), [np.zeros_like(a) for a in h])
    except np.linalg.LinAlgError as exc:
        raise IllFormedProgram(f"G does not have full column rank on ker A: {exc}") from exc

    for vec in ("s", "z"):
        v = s if vec == "s" else z
        ts = -cone.min_eig(v)
        nrm = _Cone.norm(v)
        if ts >= -1e-8 * max(nrm, 1.0):
            v = _Cone.axpy(1.0 + ts, ident, v)
        if vec == "s":
            s = v
        else:
            z = v
    tau, kappa = 1.0, 1.0

    status = MAX_ITER
    best = None
    it = 0
    for it in range(opts.max_iter + 1):
        Gx = maps.G(x)
        GTz = maps.GT(z)
        rx = A.T @ y + GTz + c * tau
        ry = A @ x - b * tau
        rz = _Cone.axpy(-tau, h, _Cone.axpy(1.0, s, Gx))
        hz = _Cone.inner(h, z)
        cx, by_ = float(c @ x), float(b @ y)
        rt = kappa + cx + by_ + hz
        sz = _Cone.inner(s, z)
        mu = (sz + tau * kappa) / (cone.degree + 1)

        pcost = cx / tau
        dcost = -(by_ + hz) / tau
        gap = sz / tau**2
        pres = max(np.linalg.norm(ry) / tau / resy0, _Cone.norm(rz) / tau / resz0)
        dres = np.linalg.norm(rx) / tau / resx0
        gap_ok = gap <= opts.gap_tol * (1.0 + min(abs(pcost), abs(dcost)))
        cur = (pres, dres, gap, x / tau, y / tau, [a / tau for a in z], pcost, dcost)
        log.debug(
            "%3d p=%+.8e d=%+.8e pres=%.1e dres=%.1e gap=%.1e tau=%.2e kap=%.2e",
            it, pcost, dcost, pres, dres, gap, tau, kappa,
        )
        improved = best is None or max(pres, dres) + gap < max(best[0], best[1]) + best[2]
        if improved:
            best = cur
        elif _acceptable(best, opts):
            # progress has stalled at a point that already meets the reporting tolerances
            status = OPTIMAL
            break
        if pres <= opts.res_tol and dres <= opts.res_tol and gap_ok:
            status = OPTIMAL
            best = cur
            break
        if by_ + hz < 0:
            pinf = np.linalg.norm(A.T @ y + GTz) / resx0 / (-(by_ + hz))
            if pinf <= opts.res_tol:
                status = INFEASIBLE
                break
        if cx < 0:
            dinf = max(np.linalg.norm(A @ x) / resy0, _Cone.norm(_Cone.axpy(1.0, s, Gx)) / resz0) / (-cx)
            if dinf <= opts.res_tol:
                status = UNBOUNDED
                break
        if it == opts.max_iter:
            break

        try:
            W = _Scaling(s, z)
            kkt = KKT(W)
            x2, y2, z2 = kkt.solve(-c, b, h)
            if not (np.all(np.isfinite(x2)) and np.all(np.isfinite(y2))):
                raise FloatingPointError("non-finite KKT solution")
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.debug("scaling failure at iteration %d: %s", it, exc)
            status = NUMERICAL
            break
        den = -kappa / tau + float(c @ x2 + b @ y2) + _Cone.inner(h, z2)
        lam = W.lam

        def direction(sigma, corr):
            eta = 1.0 - sigma
            xi = _Cone.scale(-1.0, W.lam_sq())
            xi = _Cone.axpy(sigma * mu, ident, xi)
            xi_t = -tau * kappa + sigma * mu
            if corr is not None:
                xi = _Cone.axpy(-1.0, _jordan(corr[0], corr[1]), xi)
                xi_t -= corr[2]
            q = W.lam_div(xi)
            Wtq = W.Wt(q)
            bz = _Cone.axpy(-1.0, Wtq, _Cone.scale(-eta, rz))
            x1, y1, z1 = kkt.solve(-eta * rx, -eta * ry, bz)
            num = -eta * rt - xi_t / tau - float(c @ x1 + b @ y1) - _Cone.inner(h, z1)
            dtau = num / den
            dx = x1 + dtau * x2
            dy = y1 + dtau * y2
            dz = _Cone.axpy(dtau, z2, z1)
            ds = _Cone.axpy(-1.0, W.WtW(dz), Wtq)
            dkap = (xi_t - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        def step_len(dz, ds, dtau, dkap):
            a = W.max_step(W.Wit(ds), W.W(dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        try:
            dxa, dya, dza, dsa, dta, dka = direction(0.0, None)
            aaff = min(1.0, step_len(dza, dsa, dta, dka))
            sigma = (1.0 - aaff) ** 3
            corr = (W.Wit(dsa), W.W(dza), dta * dka)
            dx, dy, dz, ds, dtau, dkap = direction(sigma, corr)
            alpha = min(1.0, opts.step * step_len(dz, ds, dtau, dkap))
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.debug("search direction failure at iteration %d: %s", it, exc)
            status = NUMERICAL
            break
        if not np.isfinite(alpha) or alpha < 1e-12:
            log.debug("step %.2e too short at iteration %d (sigma %.2e)", alpha, it, sigma)
            status = NUMERICAL
            break
        # backtrack if rounding pushed the trial point out of the cone
        for _ in range(40):
            s_new = _Cone.axpy(alpha, ds, s)
            z_new = _Cone.axpy(alpha, dz, z)
            t_new, k_new = tau + alpha * dtau, kappa + alpha * dkap
            if cone.min_eig(s_new) > 0 and cone.min_eig(z_new) > 0 and t_new > 0 and k_new > 0:
                break
            alpha *= 0.5
        else:
            status = NUMERICAL
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s, z, tau, kappa = s_new, z_new, t_new, k_new

    if status in (MAX_ITER, NUMERICAL) and best is not None and _acceptable(best, opts):
        status = OPTIMAL
    if status in (INFEASIBLE, UNBOUNDED):
        sol = empty_solution(status)
        sol.iterations = it
        return sol
    pres, dres, gap, xs, ys, zs, pcost, dcost = best
    y_full = np.zeros(A_full.shape[0])
    y_full[keep_rows] = ys
    # report the dual objective in the minimisation convention, y enters as -b^T y
    return ConeSolution(
        status,
        xs,
        -y_full,
        zs[0],
        list(zs[1:]),
        pcost + prog.offset,
        dcost + prog.offset,
        {"primal": pres, "dual": dres, "gap": gap},
        it,
    )


# --- dual feasibility utilities ----------------------------------------------------


def verify_dual_feasibility(gammas, y, bound):
    """lambda_max(sum_i y_i Gamma_i - bound); nonpositive means feasible."""
    bound = np.asarray(bound, dtype=complex)
    y = np.asarray(y, dtype=float)
    if len(gammas) != len(y):
        raise DimensionMismatch(f"{len(gammas)} operators but {len(y)} multipliers")
    M = -bound.copy()
    for yi, g in zip(y, gammas):
        g = np.asarray(g)
        if g.shape != bound.shape:
            raise DimensionMismatch(f"operator shape {g.shape} differs from {bound.shape}")
        M = M + yi * g
    M = (M + M.conj().T) / 2
    return float(np.linalg.eigvalsh(M)[-1])


def restore_dual_feasibility(gammas, y, bound, identity_index):
    """Shift the identity multiplier down until sum y_i Gamma_i <= bound holds."""
    if identity_index is None:
        raise IdentityConstraintMissing("the identity operator must be among the constraints")
    g = np.asarray(gammas[identity_index])
    if np.max(np.abs(g - np.eye(g.shape[0]))) > 1e-12:
        raise IdentityConstraintMissing(f"constraint {identity_index} is not the identity")
    y = np.array(y, dtype=float)
    viol = verify_dual_feasibility(gammas, y, bound)
    y[identity_index] -= max(0.0, viol) + 1e-12
    return y


# --- modelling layer -----------------------------------------------------------------


def embed_hermitian(H):
    """Real symmetric embedding of a complex Hermitian matrix."""
    H = np.asarray(H)
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def extract_hermitian(S):
    """Inverse pairing of :func:`embed_hermitian` for dual matrices.

    For a real symmetric ``S`` on the embedded space the returned Hermitian
    ``Z`` satisfies ``Tr(S embed(H)) = 2 Re Tr(Z H)``; the factor two is the
    trace correction of the doubled embedding.
    """
    d = S.shape[0] // 2
    P, Q = S[:d, :d], S[:d, d:]
    R, T = S[d:, :d], S[d:, d:]
    return ((P + T) + 1j * (R - Q)) / 2


class Affine:
    """Complex matrix-valued affine function ``const + sum_j x_j coef[j]`` of real x."""

    def __init__(self, shape, const=None, coef=None):
        self.shape = tuple(shape)
        self.const = np.zeros(self.shape, dtype=complex) if const is None else np.asarray(const, dtype=complex)
        self.coef = dict(coef or {})

    @classmethod
    def constant(cls, M):
        M = np.asarray(M, dtype=complex)
        return cls(M.shape, M.copy())

    def __add__(self, other):
        if not isinstance(other, Affine):
            other = Affine.constant(np.broadcast_to(other, self.shape))
        coef = dict(self.coef)
        for k, v in other.coef.items():
            coef[k] = coef[k] + v if k in coef else v
        return Affine(self.shape, self.const + other.const, coef)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Affine) else -np.asarray(other))

    def __mul__(self, a):
        return Affine(self.shape, self.const * a, {k: v * a for k, v in self.coef.items()})

    __rmul__ = __mul__

    @property
    def H(self):
        return Affine(self.shape[::-1], self.const.conj().T, {k: v.conj().T for k, v in self.coef.items()})

    def lmul(self, M):
        return Affine((M.shape[0], self.shape[1]), M @ self.const, {k: M @ v for k, v in self.coef.items()})

    def rmul(self, M):
        return Affine((self.shape[0], M.shape[1]), self.const @ M, {k: v @ M for k, v in self.coef.items()})

    def trace_with(self, M):
        """Real part of Tr(M @ self) as a scalar affine function (const, {idx: coef})."""
        M = np.asarray(M)
        const = float(np.real(np.sum(M.T * self.const)))
        coef = {k: float(np.real(np.sum(M.T * v))) for k, v in self.coef.items()}
        return const, coef

    def value(self, x):
        out = self.const.copy()
        for k, v in self.coef.items():
            out = out + x[k] * v
        return out

    @staticmethod
    def bmat(rows):
        heights = [r[0].shape[0] for r in rows]
        widths = [e.shape[1] for e in rows[0]]
        shape = (sum(heights), sum(widths))
        const = np.zeros(shape, dtype=complex)
        coef = {}
        r0 = 0
        for row, hgt in zip(rows, heights):
            c0 = 0
            for e, wid in zip(row, widths):
                const[r0 : r0 + hgt, c0 : c0 + wid] += e.const
                for k, v in e.coef.items():
                    if k not in coef:
                        coef[k] = np.zeros(shape, dtype=complex)
                    coef[k][r0 : r0 + hgt, c0 : c0 + wid] += v
                c0 += wid
            r0 += hgt
        return Affine(shape, const, coef)


def _hermitian_basis(d):
    mats = []
    for k in range(d):
        E = np.zeros((d, d), dtype=complex)
        E[k, k] = 1.0
        mats.append(E)
    for k in range(d):
        for l in range(k + 1, d):
            E = np.zeros((d, d), dtype=complex)
            E[k, l] = E[l, k] = 1.0
            mats.append(E)
            F = np.zeros((d, d), dtype=complex)
            F[k, l] = -1j
            F[l, k] = 1j
            mats.append(F)
    return mats


class ProgramBuilder:
    """Assembles a ConeProgram from real, Hermitian and complex matrix variables."""

    def __init__(self):
        self.nvar = 0
        self.objective = {}
        self.offset = 0.0
        self.eq_rows = []
        self.ge_rows = []
        self.blocks = []
        self.block_tags = []

    def add_real(self, count=1):
        idx = np.arange(self.nvar, self.nvar + count)
        self.nvar += count
        return idx

    def add_hermitian(self, d):
        basis = _hermitian_basis(d)
        idx = self.add_real(len(basis))
        return Affine((d, d), None, {int(i): B for i, B in zip(idx, basis)})

    def add_complex(self, rows, cols):
        idx = self.add_real(2 * rows * cols)
        coef = {}
        k = 0
        for i in range(rows):
            for j in range(cols):
                E = np.zeros((rows, cols), dtype=complex)
                E[i, j] = 1.0
                coef[int(idx[k])] = E
                coef[int(idx[k + 1])] = 1j * E
                k += 2
        return Affine((rows, cols), None, coef)

    def scalar(self, i):
        return (0.0, {int(i): 1.0})

    def add_objective(self, lin):
        const, coef = lin
        self.offset += const
        for k, v in coef.items():
            self.objective[k] = self.objective.get(k, 0.0) + v

    def add_eq(self, lin, value, tag=None):
        const, coef = lin
        self.eq_rows.append((coef, value - const, tag))
        return len(self.eq_rows) - 1

    def add_ge(self, lin, value, tag=None):
        """lin >= value"""
        const, coef = lin
        self.ge_rows.append((coef, const - value, tag))
        return len(self.ge_rows) - 1

    def add_lmi(self, expr, tag=None):
        """Constrain a Hermitian Affine expression to be PSD."""
        if expr.shape[0] != expr.shape[1]:
            raise IllFormedProgram("LMI expression must be square")
        real = all(np.max(np.abs(v.imag), initial=0.0) == 0.0 for v in expr.coef.values()) and not np.any(
            expr.const.imag
        )
        emb = (lambda M: M.real) if real else embed_hermitian
        cols = np.array(sorted(expr.coef), dtype=int)
        mats = np.array([emb(expr.coef[k]) for k in cols]) if len(cols) else np.zeros((0,) + (emb(expr.const).shape))
        const = emb(expr.const)
        mats = (mats + mats.transpose(0, 2, 1)) / 2
        self.blocks.append(PsdBlock(cols, mats, (const + const.T) / 2))
        self.block_tags.append((tag, not real))
        return len(self.blocks) - 1

    def add_soc(self, t_lin, u_lins, tag=None):
        """||u|| <= t through the arrow matrix [[t I, u], [u^T, t]] >= 0."""
        k = len(u_lins)
        shape = (k + 1, k + 1)

        def place(lin, cells):
            const, coef = lin
            C = np.zeros(shape)
            coefs = {}
            for (i, j) in cells:
                C[i, j] += const
            for var, val in coef.items():
                M = np.zeros(shape)
                for (i, j) in cells:
                    M[i, j] += val
                coefs[var] = M
            return Affine(shape, C, coefs)

        expr = place(t_lin, [(i, i) for i in range(k + 1)])
        for i, u in enumerate(u_lins):
            expr = expr + place(u, [(i, k), (k, i)])
        return self.add_lmi(expr, tag)

    def build(self):
        n = self.nvar
        c = np.zeros(n)
        for k, v in self.objective.items():
            c[k] = v
        A = np.zeros((len(self.eq_rows), n))
        b = np.zeros(len(self.eq_rows))
        for i, (coef, val, _) in enumerate(self.eq_rows):
            for k, v in coef.items():
                A[i, k] += v
            b[i] = val
        Gl = np.zeros((len(self.ge_rows), n))
        g0 = np.zeros(len(self.ge_rows))
        for i, (coef, const, _) in enumerate(self.ge_rows):
            for k, v in coef.items():
                Gl[i, k] += v
            g0[i] = const
        return ConeProgram(c, A, b, Gl, g0, list(self.blocks), self.offset)

    def dual_block(self, sol, k):
        """Dual matrix of LMI ``k`` in the original (possibly complex) space.

        Returned so that the Lagrangian term reads Re Tr(Z expr).
        """
        S = sol.z_blocks[k]
        if self.block_tags[k][1]:
            return 2 * extract_hermitian(S)
        return S.astype(complex)
