"""Dense symmetric eigendecomposition and classical-MDS centering.

Backed by LAPACK through numpy.linalg.eigh (tridiagonalization + QR), with
the residual/orthonormality contract checked on every returned pair. Sign
convention: the largest-magnitude component of each eigenvector is positive.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ParameterError

DEFAULT_TOL = 1e-8


@dataclass
class EigenResult:
    values: np.ndarray   # [m], ascending
    vectors: np.ndarray  # [n, m], column j pairs with values[j]


def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs[None, :]


def sym_eigen(A, which, m, tol=DEFAULT_TOL):
    """The m extreme eigenpairs of a symmetric matrix by algebraic value.

    ``which`` is "smallest" or "largest"; values are returned ascending in
    both cases. A is symmetrized as (A + A^T)/2 before decomposition.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ParameterError(f"matrix must be square, got {A.shape}")
    if not 1 <= m <= n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={n}")
    if which not in ("smallest", "largest"):
        raise ParameterError(f"which must be 'smallest' or 'largest', got {which!r}")
    if np.abs(A - A.T).max(initial=0.0) > 1e-6 * max(1.0, np.abs(A).max(initial=0.0)):
        raise ParameterError("matrix is not symmetric within 1e-6")
    S = (A + A.T) / 2.0
    try:
        vals, vecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigendecomposition failed: {exc}") from exc
    if which == "smallest":
        vals, vecs = vals[:m], vecs[:, :m]
    else:
        vals, vecs = vals[n - m :], vecs[:, n - m :]
    vecs = _fix_signs(vecs)
    scale = np.linalg.norm(S)
    resid = np.abs(S @ vecs - vecs * vals[None, :]).max(axis=0)
    bound = max(tol * scale, 1e-300)
    if np.any(resid > bound):
        raise ConvergenceError(
            f"residual {resid.max():.3e} exceeds {bound:.3e}"
        )
    return EigenResult(vals, vecs)


def generalized_sym_eigen(A, Bdiag, which, m, tol=DEFAULT_TOL):
    """Smallest m eigenpairs of A v = lambda B v for diagonal positive B,
    solved via the congruence B^{-1/2} A B^{-1/2}.

    Returned vectors are B-orthonormal: v_i^T B v_j = delta_ij.
    """
    if which != "smallest":
        raise ParameterError("generalized solver supports which='smallest' only")
    Bdiag = np.asarray(Bdiag, dtype=np.float64)
    if np.any(Bdiag <= 0):
        bad = int(np.argmin(Bdiag))
        raise ParameterError(
            f"Bdiag must be strictly positive; entry {bad} is {Bdiag[bad]}"
        )
    binv_sqrt = 1.0 / np.sqrt(Bdiag)
    A = np.asarray(A, dtype=np.float64)
    At = A * binv_sqrt[:, None] * binv_sqrt[None, :]
    res = sym_eigen(At, "smallest", m, tol=tol)
    vecs = res.vectors * binv_sqrt[:, None]
    vecs = _fix_signs(vecs)
    resid = np.abs(A @ vecs - (Bdiag[:, None] * vecs) * res.values[None, :]).max(axis=0)
    bound = max(tol * np.linalg.norm(A), 1e-300)
    if np.any(resid > bound):
        raise ConvergenceError(
            f"generalized residual {resid.max():.3e} exceeds {bound:.3e}"
        )
    return EigenResult(res.values, vecs)


def double_center(D2):
    """Classical-MDS Gram matrix B = -1/2 J D2 J with J = I - (1/n) 11^T.

    D2 holds squared distances: symmetric with zero diagonal. B annihilates
    the constant vector by construction.
    """
    D2 = np.asarray(D2, dtype=np.float64)
    n = D2.shape[0]
    if D2.shape != (n, n):
        raise ParameterError(f"matrix must be square, got {D2.shape}")
    if np.any(np.diag(D2) != 0):
        raise ParameterError("squared-distance matrix must have zero diagonal")
    if np.abs(D2 - D2.T).max(initial=0.0) > 1e-9 * max(1.0, np.abs(D2).max(initial=0.0)):
        raise ParameterError("squared-distance matrix must be symmetric")
    row_mean = D2.mean(axis=1, keepdims=True)
    col_mean = D2.mean(axis=0, keepdims=True)
    grand = D2.mean()
    B = -0.5 * (D2 - row_mean - col_mean + grand)
    return (B + B.T) / 2.0
