"""Dense linear-algebra kernels: randomized SVD of matrix-free operators,
symmetric top-k eigendecomposition, and Frobenius-norm orthogonal splitting.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free linear map with an explicit transpose action.

    ``apply`` maps an ncols-vector to an nrows-vector, ``apply_transpose``
    the reverse.  The two must be adjoint-consistent:
    <apply(v), w> == <v, apply_transpose(w)>.
    """

    nrows: int
    ncols: int
    apply: Callable[[np.ndarray], np.ndarray]
    apply_transpose: Callable[[np.ndarray], np.ndarray]

    def apply_mat(self, X):
        """Apply to each column of X, returning an nrows x X.shape[1] array."""
        return np.column_stack([self.apply(X[:, j]) for j in range(X.shape[1])])

    def apply_transpose_mat(self, X):
        return np.column_stack(
            [self.apply_transpose(X[:, j]) for j in range(X.shape[1])]
        )

    def as_dense(self):
        return self.apply_mat(np.eye(self.ncols))


def dense_operator(A):
    """Wrap a dense matrix as a LinearOperator."""
    A = np.asarray(A, dtype=float)
    return LinearOperator(
        nrows=A.shape[0],
        ncols=A.shape[1],
        apply=lambda v: A @ v,
        apply_transpose=lambda w: A.T @ w,
    )


@dataclass
class CountingOperator:
    """LinearOperator wrapper that counts apply / apply_transpose calls."""

    op: LinearOperator
    n_apply: int = 0
    n_apply_transpose: int = 0

    @property
    def nrows(self):
        return self.op.nrows

    @property
    def ncols(self):
        return self.op.ncols

    def apply(self, v):
        self.n_apply += 1
        return self.op.apply(v)

    def apply_transpose(self, w):
        self.n_apply_transpose += 1
        return self.op.apply_transpose(w)

    apply_mat = LinearOperator.apply_mat
    apply_transpose_mat = LinearOperator.apply_transpose_mat


@dataclass(frozen=True)
class TruncatedJacobian:
    """Rank-r truncated SVD (U, sigma, V) of a d_Q x d_M map.

    U is d_Q x r and V is d_M x r with orthonormal columns; sigma is
    non-negative and sorted descending.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.sigma.shape[0]

    def as_dense(self):
        return (self.U * self.sigma) @ self.V.T

    def validate(self, tol=1e-10):
        r = self.rank
        if self.U.shape[1] != r or self.V.shape[1] != r:
            raise ValueError("inconsistent factor shapes")
        for Q in (self.U, self.V):
            gram_err = np.linalg.norm(Q.T @ Q - np.eye(r))
            if gram_err > tol * max(1.0, np.sqrt(r)):
                raise ValueError(f"non-orthonormal factor, |QtQ - I| = {gram_err:.3e}")
        if np.any(self.sigma < 0):
            raise ValueError("negative singular value")
        if np.any(np.diff(self.sigma) > 0):
            raise ValueError("singular values not descending")


def fix_signs(U, companion=None):
    """Flip column signs so each column's largest-magnitude entry is positive.

    If ``companion`` is given its columns are flipped jointly (preserving
    the product U @ diag(s) @ companion.T).  Returns new arrays.
    """
    U = np.array(U, dtype=float)
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U *= signs
    if companion is None:
        return U
    return U, np.asarray(companion, dtype=float) * signs


def _orthonormalize(Y):
    # Householder QR, re-orthogonalized once for robustness.
    Q, _ = np.linalg.qr(Y)
    Q, _ = np.linalg.qr(Q)
    return Q


def randomized_svd(op, rank, oversample=10, power_iters=1, seed=0):
    """Truncated SVD of a LinearOperator via the randomized range finder.

    Draws ``rank + oversample`` Gaussian probes, optionally runs
    ``power_iters`` rounds of subspace iteration, and truncates the small
    SVD back to ``rank``.
    """
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    if oversample < 0 or power_iters < 0:
        raise ValueError("oversample and power_iters must be non-negative")
    ell = rank + oversample
    if ell > min(op.nrows, op.ncols):
        raise ValueError(
            f"rank + oversample = {ell} exceeds min(shape) = "
            f"{min(op.nrows, op.ncols)}"
        )
    rng = np.random.default_rng(seed)
    Omega = rng.standard_normal((op.ncols, ell))
    Q = _orthonormalize(op.apply_mat(Omega))
    for _ in range(power_iters):
        Z = _orthonormalize(op.apply_transpose_mat(Q))
        Q = _orthonormalize(op.apply_mat(Z))
    # B = Q^T A, formed row-wise through the transpose action.
    B = op.apply_transpose_mat(Q).T
    Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    U = Q @ Ub[:, :rank]
    U, V = fix_signs(U, Vt[:rank].T)
    return TruncatedJacobian(U=U, sigma=s[:rank].copy(), V=V)


def frobenius_orthogonal_split(A, Q, side="right"):
    """Split ||A||_F^2 into the parts inside and outside range(Q).

    ``inside`` is ||A Q Q^T||_F^2 for side="right" (||Q Q^T A||_F^2 for
    "left"); ``outside`` is the complement.  inside + outside == ||A||_F^2.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    dim = A.shape[1] if side == "right" else A.shape[0]
    if Q.shape[0] != dim:
        raise ValueError(f"Q has {Q.shape[0]} rows, expected {dim}")
    gram_err = np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1]))
    if gram_err > 1e-8:
        raise ValueError(f"Q not orthonormal, |QtQ - I| = {gram_err:.3e}")
    if side == "right":
        proj = A @ Q
        residual = A - proj @ Q.T
    else:
        proj = Q.T @ A
        residual = A - Q @ proj
    inside = float(np.sum(proj**2))
    outside = float(np.sum(residual**2))
    return inside, outside


def symmetric_eig_topk(S, k):
    """Top-k eigenpairs of a symmetric matrix, descending, sign-fixed."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected square matrix, got shape {S.shape}")
    asym = np.linalg.norm(S - S.T)
    if asym > 1e-10 * max(1.0, np.linalg.norm(S)):
        raise ValueError(f"matrix not symmetric, |S - S^T| = {asym:.3e}")
    if not 1 <= k <= S.shape[0]:
        raise ValueError(f"k = {k} out of range for dim {S.shape[0]}")
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    order = np.argsort(vals)[::-1][:k]
    return vals[order].copy(), fix_signs(vecs[:, order])
