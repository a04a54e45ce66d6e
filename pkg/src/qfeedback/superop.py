"""Superoperators as dense matrices acting on column-stacked operators.

Convention: vec() stacks columns, so the map rho -> A rho B has matrix
kron(B.T, A).  All superoperators in this package are plain complex
ndarrays of shape (d*d, d*d); operators are (d, d) ndarrays.
"""

import logging

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

# tolerance for treating a singular value as zero, relative to the largest
SINGULARITY_CUTOFF = 1e-12

# eigenvector-matrix condition number above which batched propagator
# evaluation falls back to scaling-and-squaring; reconstruction error is
# roughly machine epsilon times this number
EXPM_COND_LIMIT = 1e4


class SingularSuperoperatorError(ValueError):
    """Raised when a superoperator has no usable inverse."""


class NoFixedPointError(RuntimeError):
    """Raised when no eigenvalue lies close enough to 1."""


class DegenerateFixedPointError(RuntimeError):
    """Raised when several eigenvalues lie close to 1; selection is ambiguous."""


def vec(op):
    """Column-stack an operator into a vector."""
    op = np.asarray(op)
    return op.reshape(-1, order="F")


def unvec(v, dim=None):
    """Inverse of vec()."""
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise ValueError(f"vector of size {v.size} is not a stacked square matrix")
    return v.reshape((dim, dim), order="F")


def superop_dim(m):
    """Hilbert-space dimension d of a (d*d, d*d) superoperator matrix."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"superoperator must be square, got shape {m.shape}")
    d = int(round(np.sqrt(m.shape[0])))
    if d * d != m.shape[0]:
        raise ValueError(f"superoperator side {m.shape[0]} is not a perfect square")
    return d


def spre(a):
    """Matrix of rho -> a rho."""
    a = np.asarray(a)
    return np.kron(np.eye(a.shape[0]), a)


def spost(b):
    """Matrix of rho -> rho b."""
    b = np.asarray(b)
    return np.kron(b.T, np.eye(b.shape[0]))


def sandwich(a, b):
    """Matrix of rho -> a rho b."""
    return np.kron(np.asarray(b).T, np.asarray(a))


def conjugation(a):
    """Matrix of rho -> a rho a^dag."""
    a = np.asarray(a)
    return np.kron(a.conj(), a)


def hamiltonian_superop(h):
    """Matrix of rho -> -i [h, rho]."""
    return -1j * (spre(h) - spost(h))


def dissipator(l):
    """Matrix of rho -> l rho l^dag - (1/2){l^dag l, rho}."""
    l = np.asarray(l)
    ldl = l.conj().T @ l
    return conjugation(l) - 0.5 * (spre(ldl) + spost(ldl))


def liouvillian(h, collapse_ops=()):
    """Lindblad generator -i[h, .] + sum_k D[l_k]."""
    m = hamiltonian_superop(h)
    for l in collapse_ops:
        m = m + dissipator(l)
    return m


def superop_from_map(fn, dim):
    """Materialize a callable operator map into its matrix, column by column."""
    m = np.zeros((dim * dim, dim * dim), dtype=complex)
    for j in range(dim):
        for i in range(dim):
            basis = np.zeros((dim, dim), dtype=complex)
            basis[i, j] = 1.0
            m[:, i + j * dim] = vec(fn(basis))
    return m


def apply_superop(m, rho):
    """Apply a superoperator matrix to an operator."""
    rho = np.asarray(rho)
    return unvec(np.asarray(m) @ vec(rho), rho.shape[0])


def trace_vector(dim):
    """Row functional t with t @ vec(rho) = Tr rho."""
    return vec(np.eye(dim)).astype(complex)


def is_trace_preserving(m, tol=1e-10):
    t = trace_vector(superop_dim(m))
    return np.max(np.abs(t @ m - t)) <= tol


def choi_matrix(m):
    """Choi matrix sum_ij |i><j| (x) M(|i><j|) of a superoperator."""
    d = superop_dim(m)
    c = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            basis = np.zeros((d, d), dtype=complex)
            basis[i, j] = 1.0
            c += np.kron(basis, apply_superop(m, basis))
    return c


def is_completely_positive(m, tol=1e-9):
    c = choi_matrix(m)
    if np.max(np.abs(c - c.conj().T)) > max(tol, 1e-9):
        return False
    return np.min(np.linalg.eigvalsh(0.5 * (c + c.conj().T))) >= -tol


def expm(m, t=1.0):
    """exp(t*m) for a superoperator matrix (scaling-and-squaring Pade).

    Eigendecomposition shortcuts are avoided here: reconstruction error
    grows with the conditioning of the eigenvector basis, and commutator
    superoperators routinely have degenerate spectra with cond(V) > 1e7,
    which turns into ~1e-9 absolute error per call.
    """
    m = np.asarray(m, dtype=complex)
    return scipy.linalg.expm(t * m)


def inverse(m):
    """Inverse of a superoperator matrix, guarding against near-singularity."""
    m = np.asarray(m, dtype=complex)
    s = np.linalg.svd(m, compute_uv=False)
    if s[-1] <= SINGULARITY_CUTOFF * s[0]:
        raise SingularSuperoperatorError(
            f"superoperator is numerically singular: smallest singular value "
            f"{s[-1]:.3e} vs largest {s[0]:.3e}"
        )
    return np.linalg.inv(m)


def fixed_point_eigenvector(m, eig_tol=1e-6, residual_tol=1e-9,
                            eigenvalue=1.0):
    """Eigenvector of the target eigenvalue of a linear map, raw vector.

    Defaults to eigenvalue 1 (fixed point of a map); pass eigenvalue=0
    for the kernel of a generator.  Exactly one eigenvalue must lie
    within eig_tol of the target; ambiguity raises instead of silently
    picking a branch.  The returned vector has unit 2-norm and residual
    ||m v - eigenvalue v|| <= residual_tol.
    """
    m = np.asarray(m, dtype=complex)
    w, v = np.linalg.eig(m)
    close = np.flatnonzero(np.abs(w - eigenvalue) < eig_tol)
    if close.size == 0:
        nearest = w[np.argmin(np.abs(w - eigenvalue))]
        raise NoFixedPointError(
            f"no eigenvalue within {eig_tol:g} of {eigenvalue:g} "
            f"(nearest: {nearest:.6g})"
        )
    if close.size > 1:
        raise DegenerateFixedPointError(
            f"{close.size} eigenvalues within {eig_tol:g} of "
            f"{eigenvalue:g}: {w[close]}; the fixed point is not unique"
        )
    vec_ss = v[:, close[0]]
    vec_ss = vec_ss / np.linalg.norm(vec_ss)
    residual = np.linalg.norm(m @ vec_ss - eigenvalue * vec_ss)
    if residual > residual_tol:
        raise NoFixedPointError(
            f"candidate fixed point has residual {residual:.3e} > {residual_tol:g}"
        )
    return vec_ss


def ensure_density(rho, herm_tol=1e-10, eig_floor=-1e-10):
    """Validate and clean a density matrix.

    Hermitizes within herm_tol, clips eigenvalues in [eig_floor, 0) to zero
    with a logged warning, rejects anything more negative, and renormalizes
    the trace to 1.
    """
    rho = np.asarray(rho, dtype=complex)
    herm_defect = np.max(np.abs(rho - rho.conj().T))
    if herm_defect > herm_tol:
        raise ValueError(f"matrix is not Hermitian within {herm_tol:g} "
                         f"(defect {herm_defect:.3e})")
    rho = 0.5 * (rho + rho.conj().T)
    evals, evecs = np.linalg.eigh(rho)
    if evals[0] < eig_floor:
        raise ValueError(f"matrix has negative eigenvalue {evals[0]:.3e} "
                         f"below floor {eig_floor:g}")
    if evals[0] < 0.0:
        logger.warning("clipping tiny negative eigenvalue %.3e to zero", evals[0])
        evals = np.clip(evals, 0.0, None)
        rho = (evecs * evals) @ evecs.conj().T
    tr = np.trace(rho).real
    if tr <= 0.0:
        raise ValueError("matrix has non-positive trace")
    return rho / tr


def steady_density(m, eig_tol=1e-6, residual_tol=1e-9, kind="map"):
    """Stationary density matrix of a superoperator.

    kind="map" looks for the eigenvalue-1 eigenvector (channels,
    transfer-type maps); kind="generator" for the eigenvalue-0 kernel
    (Liouvillians).  Hermitizes and trace-normalizes the recovered
    eigenvector; degenerate or missing fixed points raise.
    """
    if kind not in ("map", "generator"):
        raise ValueError('kind must be "map" or "generator"')
    d = superop_dim(m)
    target = 1.0 if kind == "map" else 0.0
    v = fixed_point_eigenvector(m, eig_tol=eig_tol, residual_tol=residual_tol,
                                eigenvalue=target)
    rho = unvec(v, d)
    tr = np.trace(rho)
    if abs(tr) < 1e-12:
        raise NoFixedPointError("fixed-point eigenvector is traceless; "
                                "it cannot be a state")
    rho = rho / tr  # fixes the arbitrary eigenvector phase and the scale
    rho = 0.5 * (rho + rho.conj().T)
    return ensure_density(rho)
