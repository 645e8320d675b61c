"""Dense complex-Hermitian linear algebra and entropic functionals.

All entropies are returned in bits. Natural logarithms from numpy are
converted once via ``np.log2``; no other base conversions happen here.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NegativeEigenvalue, NonHermitianInput

SUPPORT_TOL = 1e-12
LOG_CLAMP = 1e-14
NEG_EIG_TOL = 1e-8


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.conj().T


def hermitian_defect(M):
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(M - M.conj().T)))


def check_hermitian(M, name="operator"):
    """Return ``M`` as a complex array after enforcing the Hermitian invariant."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonHermitianInput(f"{name} has non-finite entries")
    scale = 1.0 + float(np.max(np.abs(M)))
    if hermitian_defect(M) > 1e-12 * scale:
        raise NonHermitianInput(f"{name} is not Hermitian (defect {hermitian_defect(M):.3e})")
    return M


def check_density(rho, name="state", tol=1e-10):
    rho = check_hermitian(rho, name)
    if abs(np.trace(rho).real - 1.0) > tol:
        raise NegativeEigenvalue(f"{name} has trace {np.trace(rho).real:.12g}, expected 1")
    lmin = np.linalg.eigvalsh(rho)[0]
    if lmin < -tol:
        raise NegativeEigenvalue(f"{name} has eigenvalue {lmin:.3e}")
    return rho


def _jacobi_eig(M, tol=1e-13, max_sweeps=100):
    """Cyclic Jacobi for complex Hermitian matrices.

    Each rotation first removes the phase of the pivot so the 2x2 problem is
    real symmetric, then applies the classical Jacobi rotation.
    """
    A = np.array(M, dtype=complex)
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    norm = np.linalg.norm(A)
    if n == 1 or norm == 0.0:
        return np.real(np.diag(A)).copy(), V
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off < tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                b = A[p, q]
                ab = abs(b)
                if ab < 1e-300:
                    continue
                phase = b / ab
                zeta = (A[q, q].real - A[p, p].real) / (2.0 * ab)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # U = diag(1, conj(phase)) @ [[c, s], [-s, c]]
                u00, u01 = c, s
                u10, u11 = -s * np.conj(phase), c * np.conj(phase)
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = colp * u00 + colq * u10
                A[:, q] = colp * u01 + colq * u11
                rowp = A[p, :].copy()
                rowq = A[q, :].copy()
                A[p, :] = np.conj(u00) * rowp + np.conj(u10) * rowq
                A[q, :] = np.conj(u01) * rowp + np.conj(u11) * rowq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = vp * u00 + vq * u10
                V[:, q] = vp * u01 + vq * u11
    w = np.real(np.diag(A))
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def herm_eig(M, method="lapack"):
    """Full spectral decomposition with ascending eigenvalues.

    ``method="jacobi"`` runs the cyclic Jacobi solver; the default defers to
    LAPACK's Hermitian driver, which is much faster for repeated calls.
    """
    M = check_hermitian(M)
    if method == "jacobi":
        w, U = _jacobi_eig(M)
    elif method == "lapack":
        w, U = np.linalg.eigh(M)
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    return Spectrum(w, U)


def _eigh(M):
    return np.linalg.eigh((M + M.conj().T) / 2)


def matrix_log2_on_support(M, clamp=LOG_CLAMP):
    """log2 of a PSD matrix; eigenvalues at or below ``clamp`` map to log2(clamp)."""
    M = np.asarray(M, dtype=complex)
    w, U = _eigh(M)
    if w[0] < -NEG_EIG_TOL:
        raise NegativeEigenvalue(f"minimum eigenvalue {w[0]:.3e}")
    lw = np.log2(np.maximum(w, clamp))
    return (U * lw) @ U.conj().T


def kron(*ops):
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def partial_trace(M, dims, keep):
    """Trace out every factor of ``dims`` not listed in ``keep``."""
    M = np.asarray(M)
    dims = [int(d) for d in dims]
    n = len(dims)
    total = int(np.prod(dims))
    if M.shape != (total, total):
        raise DimensionMismatch(f"matrix shape {M.shape} does not match dims {dims}")
    keep = sorted({int(k) for k in np.atleast_1d(keep)})
    if any(k < 0 or k >= n for k in keep):
        raise DimensionMismatch(f"keep indices {keep} out of range for {n} factors")
    T = M.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * n > len(letters):
        raise DimensionMismatch("too many tensor factors")
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for j in range(n):
        if j not in keep:
            col[j] = row[j]
    out_idx = "".join(row[k] for k in keep) + "".join(col[k] for k in keep)
    R = np.einsum("".join(row) + "".join(col) + "->" + out_idx, T)
    dk = int(np.prod([dims[k] for k in keep])) if keep else 1
    return R.reshape(dk, dk)


def frob_inner(A, B):
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise DimensionMismatch(f"shapes {A.shape} and {B.shape} differ")
    return complex(np.vdot(A, B))


def shannon_entropy(p):
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > SUPPORT_TOL]
    return float(-np.sum(p * np.log2(p)))


def von_neumann_entropy(rho):
    w = np.linalg.eigvalsh((np.asarray(rho) + np.asarray(rho).conj().T) / 2)
    return shannon_entropy(w)


def relative_entropy(rho, sigma):
    """D(rho||sigma) in bits; ``inf`` when supp(rho) is not inside supp(sigma)."""
    wr, Ur = _eigh(np.asarray(rho, dtype=complex))
    ws, Us = _eigh(np.asarray(sigma, dtype=complex))
    if wr[0] < -NEG_EIG_TOL or ws[0] < -NEG_EIG_TOL:
        raise NegativeEigenvalue("relative entropy needs PSD arguments")
    supp = ws > SUPPORT_TOL
    kernel = Us[:, ~supp]
    if kernel.shape[1]:
        leak = kernel.conj().T @ rho @ kernel
        if np.max(np.linalg.eigvalsh((leak + leak.conj().T) / 2)) > SUPPORT_TOL:
            return float("inf")
    pos = wr > SUPPORT_TOL
    tr_rlogr = float(np.sum(wr[pos] * np.log2(wr[pos])))
    # Tr(rho log sigma) on the support of sigma
    diag = np.real(np.einsum("ij,ik,kj->j", Us.conj(), rho, Us))
    tr_rlogs = float(np.sum(diag[supp] * np.log2(ws[supp])))
    d = tr_rlogr - tr_rlogs
    # rounding can leave -1e-16 style residue when rho == sigma
    return 0.0 if -1e-12 < d < 0.0 else d


def conditional_entropy(rho_ab, dims):
    """H(A|B) = H(AB) - H(B) for the ordered pair ``dims = (d_A, d_B)``."""
    dims = [int(d) for d in dims]
    if len(dims) != 2 or dims[0] * dims[1] != np.asarray(rho_ab).shape[0]:
        raise DimensionMismatch(f"dims {dims} do not factor a {np.asarray(rho_ab).shape} matrix")
    rho_b = partial_trace(rho_ab, dims, [1])
    return von_neumann_entropy(rho_ab) - von_neumann_entropy(rho_b)


def purify(rho):
    """Vector on system ⊗ auxiliary whose auxiliary dimension is the numerical rank."""
    rho = np.asarray(rho, dtype=complex)
    w, U = _eigh(rho)
    keep = w > SUPPORT_TOL
    w = w[keep]
    U = U[:, keep]
    r = len(w)
    psi = np.zeros((rho.shape[0], r), dtype=complex)
    for k in range(r):
        psi[:, k] = np.sqrt(w[k]) * U[:, k]
    return psi.reshape(-1)


def random_density(dim, rank=None, rng=None):
    rng = np.random.default_rng(rng)
    rank = dim if rank is None else rank
    G = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim, rng=None):
    rng = np.random.default_rng(rng)
    G = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (G + G.conj().T) / 2


def sqrtm_psd(M):
    w, U = _eigh(np.asarray(M, dtype=complex))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.conj().T


def ket(index, dim):
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v
