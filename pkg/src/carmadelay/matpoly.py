"""
Matrix polynomials with real ``n x n`` coefficients.

Coefficients are stored in ascending degree, ``coeffs[k]`` multiplying
``z**k``. Autoregressive polynomials are usually written the other way round,

    P(z) = I z^p + A_1 z^(p-1) + ... + A_p,

so :meth:`MatrixPoly.monic` takes ``A_1..A_p`` in that (descending) order and
does the reversal once.

Products always keep the left factor's coefficients on the left, which
matters because matrix coefficients do not commute.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class MatrixPoly:
    """Polynomial ``sum_k coeffs[k] z**k`` with ``n x n`` real coefficients."""

    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise ValueError("a matrix polynomial needs at least one coefficient")
        mats = []
        for c in self.coeffs:
            c = np.array(c, dtype=float, copy=True)
            if c.ndim == 0:
                c = c.reshape(1, 1)
            mats.append(c)
        n = mats[0].shape[0]
        for c in mats:
            if c.shape != (n, n):
                raise ValueError(f"coefficient of shape {c.shape}, expected {(n, n)}")
            if not np.all(np.isfinite(c)):
                raise ValueError("coefficients must be finite")
            c.setflags(write=False)
        object.__setattr__(self, "coeffs", tuple(mats))

    @classmethod
    def monic(cls, A: Sequence) -> "MatrixPoly":
        """``I z^p + A[0] z^(p-1) + ... + A[p-1]`` from descending-order blocks."""
        A = [np.atleast_2d(np.asarray(a, dtype=float)) for a in A]
        if not A:
            raise ValueError("need at least one coefficient block")
        n = A[0].shape[0]
        return cls(tuple(A[::-1]) + (np.eye(n),))

    @classmethod
    def identity(cls, n: int) -> "MatrixPoly":
        return cls((np.eye(n),))

    @property
    def n(self) -> int:
        return self.coeffs[0].shape[0]

    @property
    def deg(self) -> int:
        return len(self.coeffs) - 1

    def is_monic(self) -> bool:
        return bool(np.max(np.abs(self.coeffs[-1] - np.eye(self.n))) == 0.0)

    def coeff(self, k: int) -> np.ndarray:
        """Coefficient of ``z**k`` (zero outside ``0..deg``)."""
        if 0 <= k <= self.deg:
            return self.coeffs[k]
        return np.zeros((self.n, self.n))

    def __call__(self, z):
        return mp_eval(self, z)

    def __sub__(self, other: "MatrixPoly") -> "MatrixPoly":
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        d = max(self.deg, other.deg)
        return MatrixPoly(tuple(self.coeff(k) - other.coeff(k) for k in range(d + 1)))

    def __mul__(self, other: "MatrixPoly") -> "MatrixPoly":
        return mp_mul(self, other)


def scalar_poly(coeffs: Sequence[float]) -> MatrixPoly:
    """1x1 polynomial from ascending scalar coefficients."""
    return MatrixPoly(tuple(np.array([[c]], dtype=float) for c in coeffs))


def mp_eval(P: MatrixPoly, z) -> np.ndarray:
    """Evaluate ``P(z)`` by Horner's rule; returns a complex ``n x n`` matrix."""
    out = np.zeros((P.n, P.n), dtype=complex)
    for c in reversed(P.coeffs):
        out = out * z + c
    return out


def mp_eval_many(P: MatrixPoly, z: np.ndarray) -> np.ndarray:
    """Vectorised :func:`mp_eval` over an array of points, shape ``(len(z), n, n)``."""
    z = np.asarray(z, dtype=complex).reshape(-1, 1, 1)
    out = np.zeros((z.shape[0], P.n, P.n), dtype=complex)
    for c in reversed(P.coeffs):
        out = out * z + c
    return out


def mp_mul(P: MatrixPoly, Q: MatrixPoly) -> MatrixPoly:
    """Product ``P(z) Q(z)``; coefficient ``k`` is ``sum_{i+j=k} P_i @ Q_j``."""
    if P.n != Q.n:
        raise ValueError(f"dimension mismatch: {P.n} vs {Q.n}")
    out = [np.zeros((P.n, P.n)) for _ in range(P.deg + Q.deg + 1)]
    for i, a in enumerate(P.coeffs):
        for j, b in enumerate(Q.coeffs):
            out[i + j] = out[i + j] + a @ b
    return MatrixPoly(tuple(out))


def _check_carma_pair(P: MatrixPoly, Q: MatrixPoly, q: int) -> None:
    if P.n != Q.n:
        raise ValueError(f"dimension mismatch: {P.n} vs {Q.n}")
    if not P.is_monic():
        raise ValueError("P must be monic (leading block equal to the identity)")
    p = P.deg
    if not 0 <= q < p:
        raise ValueError(f"need 0 <= q < p, got q={q}, p={p}")
    if np.max(np.abs(Q.coeff(q) - np.eye(P.n))) != 0.0:
        raise ValueError(f"Q must have the identity as its degree-{q} coefficient")
    for j in range(q + 1, Q.deg + 1):
        if np.any(Q.coeff(j) != 0.0):
            raise ValueError(f"Q has a non-zero coefficient at degree {j} > q={q}")


def long_divide(P: MatrixPoly, Q: MatrixPoly, q: int):
    """Right quotient ``R`` and residue ``S = Q R - P`` of degree at most ``q-1``.

    ``R(z) = I z^(p-q) + C_(p-q-1) z^(p-q-1) + ... + C_0``. The leading block of
    ``Q`` is the identity, so the ``C_j`` follow by back-substitution from the
    top degree down, without any matrix inversion.

    Returns
    -------
    C : list of ndarray
        ``[C_0, ..., C_(p-q-1)]``.
    S : MatrixPoly
        Residue, stored with coefficients of degree ``0..max(q-1, 0)``.
    """
    _check_carma_pair(P, Q, q)
    p, n = P.deg, P.n
    m = p - q
    if q == 0:
        return [P.coeff(j).copy() for j in range(p)], MatrixPoly((np.zeros((n, n)),))

    C = [None] * m + [np.eye(n)]
    for d in range(p - 1, q - 1, -1):
        acc = P.coeff(d).copy()
        for i in range(max(0, d - m), q):
            acc -= Q.coeff(i) @ C[d - i]
        C[d - q] = acc
    C = C[:m]
    R = MatrixPoly(tuple(C) + (np.eye(n),))
    full = mp_mul(Q, R) - P
    S = MatrixPoly(tuple(full.coeff(k) for k in range(q)))
    return C, S


def _leading_match(M: MatrixPoly, N: MatrixPoly, r: int) -> list:
    """``G_1..G_r`` with ``deg(M(z) G(z) - N(z) z^r) <= r-1``, ``M`` monic of degree ``r``.

    ``G(z) = G_1 z^(r-1) + ... + G_r``; coefficients of degrees ``2r-1`` down to
    ``r`` are matched one at a time.
    """
    g = [None] * r  # ascending: g[k] multiplies z**k
    for d in range(2 * r - 1, r - 1, -1):
        acc = N.coeff(d - r).copy()
        for i in range(d - r + 1, r):
            acc -= M.coeff(i) @ g[d - i]
        g[d - r] = acc
    return [g[r - 1 - k] for k in range(r)]


def solve_E(P: MatrixPoly, Q: MatrixPoly) -> list:
    """Blocks ``E_1..E_p`` of the moving-average kernel's input vector."""
    if P.n != Q.n:
        raise ValueError(f"dimension mismatch: {P.n} vs {Q.n}")
    if not P.is_monic():
        raise ValueError("P must be monic")
    if any(np.any(Q.coeff(k)) for k in range(P.deg, Q.deg + 1)):
        raise ValueError("Q must have degree at most p-1")
    return _leading_match(P, Q, P.deg)


def solve_F(P: MatrixPoly, Q: MatrixPoly, S: MatrixPoly) -> list:
    """Blocks ``F_1..F_q`` of the delay kernel ``f(t) = (e_1 x I)^T e^(Bt) F``."""
    q = Q.deg
    while q > 0 and not np.any(Q.coeff(q)):
        q -= 1
    if q == 0:
        raise ValueError("q = 0: there is no delay kernel (f vanishes identically)")
    if np.max(np.abs(Q.coeff(q) - np.eye(Q.n))) != 0.0:
        raise ValueError(f"Q must have the identity as its degree-{q} coefficient")
    if S.n != Q.n or P.n != Q.n:
        raise ValueError("dimension mismatch")
    Qm = MatrixPoly(tuple(Q.coeff(k) for k in range(q + 1)))
    return _leading_match(Qm, S, q)


def companion(blocks: Sequence) -> np.ndarray:
    """Block companion matrix for ``I z^m + A_1 z^(m-1) + ... + A_m``.

    ``blocks`` is ``[A_1, ..., A_m]``. Identity blocks sit on the block
    super-diagonal and the last block row is ``(-A_m, ..., -A_1)``.
    """
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    if not blocks:
        raise ValueError("companion matrix of an empty coefficient list")
    m, n = len(blocks), blocks[0].shape[0]
    out = np.zeros((m * n, m * n))
    for k in range(m - 1):
        out[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = np.eye(n)
    for k in range(m):
        out[(m - 1) * n:, k * n:(k + 1) * n] = -blocks[m - 1 - k]
    return out


def companion_of(P: MatrixPoly) -> np.ndarray:
    """Companion matrix of a monic polynomial; ``det(zI - A) = det P(z)``."""
    if not P.is_monic():
        raise ValueError("P must be monic")
    if P.deg == 0:
        return np.zeros((0, 0))
    return companion([P.coeff(P.deg - i) for i in range(1, P.deg + 1)])
