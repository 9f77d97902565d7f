"""
Finite signed matrix measures on ``[0, inf)``: point masses plus a density.

A density is either given in closed matrix-exponential form,
``d(u) = L e^(M u) R`` (which covers every delay kernel arising from a CARMA
model), or as samples on a uniform grid. Both expose

* ``sample(u)`` -> array of shape ``(len(u), n, n)``
* ``laplace(z)`` -> ``int_0^inf e^(z u) d(u) du`` for an array of ``z``
* ``decay`` -> ``(Cd, lam)`` with ``|d(u)| <= Cd exp(-lam u)`` entrywise

Laplace transforms of sampled densities use the trapezoidal rule on the
sample grid; the closed form is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm


def _spectral_abscissa(M: np.ndarray) -> float:
    if M.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(M).real))


def expm_grid(M: np.ndarray, step: float, count: int) -> np.ndarray:
    """``exp(M * k * step)`` for ``k = 0..count-1`` by repeated multiplication."""
    k = M.shape[0]
    out = np.empty((count, k, k))
    if count == 0:
        return out
    out[0] = np.eye(k)
    if count > 1:
        E = expm(M * step)
        for j in range(1, count):
            out[j] = out[j - 1] @ E
    return out


class MatExpDensity:
    """Density ``u -> left @ expm(M u) @ right`` on ``u >= 0``."""

    def __init__(self, left, M, right):
        self.left = np.atleast_2d(np.asarray(left, dtype=float))
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.right = np.atleast_2d(np.asarray(right, dtype=float))
        k = self.M.shape[0]
        if self.M.shape != (k, k) or self.left.shape[1] != k or self.right.shape[0] != k:
            raise ValueError("inconsistent shapes for a matrix-exponential density")
        if self.left.shape[0] != self.right.shape[1]:
            raise ValueError("density must be square")
        self.abscissa = _spectral_abscissa(self.M)
        if not self.abscissa < 0:
            raise ValueError("matrix-exponential density does not decay (M not stable)")

    @property
    def n(self) -> int:
        return self.left.shape[0]

    @property
    def decay(self):
        lam = -0.9 * self.abscissa
        u = np.linspace(0.0, 20.0 / lam, 2001)
        vals = np.abs(self.sample(u)).max(axis=(1, 2)) * np.exp(lam * u)
        return float(vals.max()) * 1.5, lam

    def sample(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        w, V = np.linalg.eig(self.M)
        if np.linalg.cond(V) < 1e8:
            Vi = np.linalg.inv(V)
            lv = self.left @ V
            vr = Vi @ self.right
            out = np.einsum("ik,tk,kj->tij", lv, np.exp(np.outer(u, w)), vr).real
        else:
            out = np.array([self.left @ expm(self.M * t) @ self.right for t in u])
        out[u < 0] = 0.0
        return out

    def laplace(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if np.any(z.real >= -self.abscissa):
            raise ValueError("Laplace transform evaluated outside its convergence strip")
        k = self.M.shape[0]
        shifted = self.M[None, :, :] + z[:, None, None] * np.eye(k)[None]
        sol = np.linalg.solve(shifted, np.broadcast_to(self.right, (len(z),) + self.right.shape))
        return -np.einsum("ik,tkj->tij", self.left, sol)

    def strip(self) -> float:
        return -self.abscissa


class SampledDensity:
    """Density known at ``u_j = j * step``, ``j = 0..K-1``; zero beyond the grid."""

    def __init__(self, step: float, values, decay=None):
        if step <= 0:
            raise ValueError("step must be positive")
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None, None]
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise ValueError("values must have shape (K, n, n)")
        if not np.all(np.isfinite(v)):
            raise ValueError("density samples must be finite")
        self.step = float(step)
        self.values = v
        if decay is None:
            # compact support: any rate works with a large enough constant
            decay = (float(np.abs(v).max()) if v.size else 0.0, 0.0)
        self._decay = decay

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def decay(self):
        return self._decay

    def sample(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        grid = self.step * np.arange(self.values.shape[0])
        flat = self.values.reshape(len(grid), -1)
        out = np.stack([np.interp(u, grid, flat[:, c], left=0.0, right=0.0)
                        for c in range(flat.shape[1])], axis=-1)
        out[u < 0] = 0.0
        return out.reshape(len(u), self.n, self.n)

    def laplace(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        K = self.values.shape[0]
        u = self.step * np.arange(K)
        w = np.full(K, self.step)
        w[0] = w[-1] = self.step / 2
        phase = np.exp(np.outer(z, u)) * w
        return np.einsum("tk,kij->tij", phase, self.values)

    def strip(self) -> float:
        return np.inf


class EmbeddedDensity:
    """Block arrangement of smaller densities inside an ``N x N`` density."""

    def __init__(self, N: int, parts: Sequence):
        self.N = N
        self.parts = list(parts)  # (row offset, col offset, density)

    @property
    def n(self) -> int:
        return self.N

    @property
    def decay(self):
        cs, lams = zip(*(d.decay for _, _, d in self.parts))
        return float(max(cs)), float(min(lams))

    def sample(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.zeros((len(u), self.N, self.N))
        for r, c, d in self.parts:
            out[:, r:r + d.n, c:c + d.n] += d.sample(u)
        return out

    def laplace(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.zeros((len(z), self.N, self.N), dtype=complex)
        for r, c, d in self.parts:
            out[:, r:r + d.n, c:c + d.n] += d.laplace(z)
        return out

    def strip(self) -> float:
        return min(d.strip() for _, _, d in self.parts)


@dataclass(frozen=True)
class DelayMeasure:
    """``eta(du) = sum_a W_a delta_{t_a}(du) + density(u) du`` on ``[0, inf)``."""

    n: int
    atoms: tuple = ()
    density: object = None
    _atoms_clean: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        clean = []
        for t, w in self.atoms:
            t = float(t)
            w = np.atleast_2d(np.asarray(w, dtype=float))
            if t < 0:
                raise ValueError(f"atom at {t} < 0: the measure must live on [0, inf)")
            if w.shape != (self.n, self.n):
                raise ValueError(f"atom weight of shape {w.shape}, expected {(self.n, self.n)}")
            if not np.all(np.isfinite(w)):
                raise ValueError("atom weights must be finite")
            clean.append((t, w))
        if self.density is not None and self.density.n != self.n:
            raise ValueError("density dimension does not match the measure")
        object.__setattr__(self, "atoms", tuple(clean))

    @classmethod
    def point(cls, weight, at: float = 0.0) -> "DelayMeasure":
        w = np.atleast_2d(np.asarray(weight, dtype=float))
        return cls(w.shape[0], ((at, w),))

    def atom_at(self, t: float = 0.0) -> np.ndarray:
        """Total weight of the atoms located exactly at ``t``."""
        out = np.zeros((self.n, self.n))
        for s, w in self.atoms:
            if s == t:
                out += w
        return out

    def strip(self) -> float:
        """Supremum of ``Re z`` for which the Laplace transform converges."""
        return np.inf if self.density is None else self.density.strip()

    def laplace(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.zeros((len(z), self.n, self.n), dtype=complex)
        for t, w in self.atoms:
            out += np.exp(z * t)[:, None, None] * w
        if self.density is not None:
            out += self.density.laplace(z)
        return out

    def total_variation(self) -> float:
        tv = sum(float(np.abs(w).sum()) for _, w in self.atoms)
        if self.density is not None:
            Cd, lam = self.density.decay
            if isinstance(self.density, SampledDensity):
                tv += float(np.abs(self.density.values).sum() * self.density.step)
            elif lam > 0:
                tv += Cd * self.n * self.n / lam
        return tv

    def second_moment_finite(self) -> bool:
        if self.density is None or isinstance(self.density, SampledDensity):
            return True
        return self.density.decay[1] > 0
