"""Numerical substrate: covariance, symmetric eigensolvers and a portable PRNG.

The eigensolvers are cyclic Jacobi on dense ``float64`` arrays; sizes in this
package stay below 64 so the O(n^3) sweep cost is irrelevant.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateInputError,
    InvalidDataError,
    InvalidParameterError,
    SingularMatrixError,
)

__all__ = [
    "EigenDecomposition",
    "Rng",
    "covariance",
    "jacobi_eigh",
    "generalized_eigh",
    "shrink",
    "SHRINKAGE",
]

#: Default shrinkage applied to every matrix entering :func:`generalized_eigh`.
SHRINKAGE = 1e-5

_SYM_TOL = 1e-12
_MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs sorted by descending eigenvalue.

    ``eigenvectors[:, i]`` belongs to ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_finite(x, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidDataError(f"{name} contains non-finite values")
    return x


def covariance(X, normalize_trace=False):
    """Sample covariance of a ``channels x samples`` matrix.

    Rows are mean-centred and the divisor is ``samples - 1``. With
    ``normalize_trace`` the result is scaled to unit trace.
    """
    X = _as_finite(X, "signal")
    if X.ndim != 2:
        raise InvalidParameterError(f"expected a 2-D channels x samples array, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 2:
        raise DegenerateInputError(f"need >= 1 channel and >= 2 samples, got shape {X.shape}")
    Xc = X - X.mean(axis=1, keepdims=True)
    C = Xc @ Xc.T / (X.shape[1] - 1)
    C = 0.5 * (C + C.T)
    if normalize_trace:
        tr = np.trace(C)
        if tr <= 0:
            raise DegenerateInputError("cannot trace-normalize a zero-energy signal")
        C = C / tr
    return C


def _check_symmetric(A):
    A = _as_finite(A, "matrix")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidParameterError(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > _SYM_TOL * max(scale, 1e-300):
        raise InvalidDataError("matrix is not symmetric within tolerance")
    return 0.5 * (A + A.T)


def jacobi_eigh(A, tol=1e-12, max_sweeps=_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run over every (p, q) pair in row order until the off-diagonal
    Frobenius norm drops below ``tol * ||A||_F``.

    Raises
    ------
    InvalidDataError
        If ``A`` is not symmetric or holds non-finite values.
    ConvergenceError
        If ``max_sweeps`` sweeps do not reach the tolerance.
    """
    A = _check_symmetric(A).copy()
    n = A.shape[0]
    V = np.eye(n)
    norm = np.linalg.norm(A)
    threshold = tol * norm

    def off(M):
        return np.linalg.norm(M - np.diag(np.diag(M)))

    converged = n < 2 or norm == 0.0 or off(A) <= threshold
    sweeps = 0
    while not converged and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
        sweeps += 1
        converged = off(A) <= threshold
    if not converged:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return EigenDecomposition(w[order], V[:, order])


def shrink(S, amount=SHRINKAGE):
    """Blend ``S`` with a scaled identity: ``(1-a) S + a (tr S / d) I``."""
    S = _check_symmetric(S)
    d = S.shape[0]
    return (1.0 - amount) * S + amount * (np.trace(S) / d) * np.eye(d)


def generalized_eigh(A, B, shrinkage=SHRINKAGE):
    """Solve ``A w = lambda B w`` for symmetric ``A`` and positive definite ``B``.

    Both matrices are first regularized with :func:`shrink`. ``B`` is whitened
    as ``W = L^{-1/2} U^T`` and the whitened ``W A W^T`` is diagonalized. The
    returned eigenvector columns are filters normalized so ``w^T B w = 1``
    against the regularized ``B``.
    """
    A = shrink(A, shrinkage) if shrinkage else _check_symmetric(A)
    B = shrink(B, shrinkage) if shrinkage else _check_symmetric(B)
    if A.shape != B.shape:
        raise InvalidParameterError(f"dimension mismatch: {A.shape} vs {B.shape}")
    eb = jacobi_eigh(B)
    lam = eb.eigenvalues
    if lam[-1] <= 1e-12 * max(lam[0], 0.0) or lam[0] <= 0.0:
        raise SingularMatrixError("B is numerically singular after shrinkage")
    W = eb.eigenvectors.T / np.sqrt(lam)[:, None]
    M = W @ A @ W.T
    em = jacobi_eigh(0.5 * (M + M.T))
    filters = em.eigenvectors.T @ W
    return EigenDecomposition(em.eigenvalues, filters.T)


def _stream_id(name):
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


class Rng:
    """Seeded random stream built on the Philox4x64-10 counter-based generator.

    The 128-bit Philox key is ``(stream << 64) | seed``, so distinct stream ids
    never share a key. Only raw 64-bit words are taken from numpy; uniforms,
    Box-Muller normals and Fisher-Yates shuffles are computed here so golden
    sequences do not depend on numpy's ``Generator`` internals.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = _stream_id(stream)
        self._bitgen = np.random.Philox(key=(self.stream_id << 64) | self.seed)

    def spawn(self, name):
        """Independent stream for ``name`` (a string or an integer id)."""
        return Rng(self.seed, (self.stream_id * 1_000_003 + _stream_id(name)) & 0xFFFFFFFFFFFFFFFF)

    def _raw(self, n):
        return self._bitgen.random_raw(n).astype(np.uint64)

    def uniform(self, size=None, low=0.0, high=1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform(pairs)  # (0, 1], keeps log finite
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        z = loc + scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, high, size=None):
        """Uniform integers in ``[0, high)``."""
        if high < 1:
            raise InvalidParameterError("high must be >= 1")
        u = self.uniform(size)
        out = np.minimum(np.floor(np.asarray(u) * high), high - 1).astype(np.int64)
        return int(out) if size is None else out

    def permutation(self, n):
        idx = np.arange(n)
        if n < 2:
            return idx
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def shuffle(self, seq):
        """Return a shuffled copy of ``seq`` as an array."""
        arr = np.asarray(seq)
        return arr[self.permutation(len(arr))]

    def choice(self, n, size):
        """``size`` indices drawn uniformly with replacement from ``range(n)``."""
        return self.integers(n, size)
