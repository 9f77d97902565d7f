"""
First-order multivariate stochastic delay equations ``dX = eta * X dt + dZ``.

The characteristic function is ``h(z) = -z I - L[eta](z)`` and the solution
kernel ``g`` is the function whose Fourier transform is ``h(iy)^{-1}``, with
the transform convention ``F[g](y) = int e^(iyu) g(u) du``.

Higher-order systems ``dX^(m-1) = sum_j varpi_j * X^(j) dt + dZ`` are handled
by nesting them into an ``mn``-dimensional first-order system.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.signal import fftconvolve

from .measures import (DelayMeasure, EmbeddedDensity, MatExpDensity, SampledDensity,  # noqa: F401
                       expm_grid)

__all__ = [
    "DelayMeasure", "MatExpDensity", "SampledDensity", "HigherOrderSdde", "SampledKernel", "eval_h", "eval_h_many",
    "nest", "det_reduction_check", "kernel_fft", "kernel_measure_density",
    "kernel_measure_residual", "fourier_of_kernel", "write_kernel_csv",
]


@dataclass(frozen=True)
class HigherOrderSdde:
    """``m``-th order system with delay measures ``varpi[0..m-1]`` (each ``n x n``)."""

    varpi: tuple

    def __post_init__(self):
        if len(self.varpi) == 0:
            raise ValueError("need at least one delay measure (m >= 1)")
        n = self.varpi[0].n
        if any(v.n != n for v in self.varpi):
            raise ValueError("all delay measures must share the dimension n")
        object.__setattr__(self, "varpi", tuple(self.varpi))

    @property
    def n(self) -> int:
        return self.varpi[0].n

    @property
    def m(self) -> int:
        return len(self.varpi)


@dataclass
class SampledKernel:
    """Kernel samples ``values[j] = g(j * step)`` on ``[0, T]``.

    The value at ``t = 0`` is the right limit. ``atom_at_zero`` is the jump of
    ``g`` at the origin, i.e. the point mass of the Stieltjes measure
    ``g(du)`` at zero. ``causality_error`` is the largest entry found at
    negative times (zero for kernels known in closed form).
    """

    step: float
    values: np.ndarray
    atom_at_zero: np.ndarray
    causality_error: float = 0.0

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.values.shape[0])

    @property
    def horizon(self) -> float:
        return self.step * (self.values.shape[0] - 1)

    def __call__(self, t) -> np.ndarray:
        """Linear interpolation between samples; zero outside ``[0, T]``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        flat = self.values.reshape(self.values.shape[0], -1)
        out = np.stack([np.interp(t, self.times, flat[:, c], left=0.0, right=0.0)
                        for c in range(flat.shape[1])], axis=-1)
        return out.reshape(len(t), self.n, self.n)


def eval_h_many(eta: DelayMeasure, z) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.real >= eta.strip()):
        raise ValueError(f"z outside the convergence strip Re z < {eta.strip()}")
    return -z[:, None, None] * np.eye(eta.n)[None] - eta.laplace(z)


def eval_h(eta: DelayMeasure, z: complex) -> np.ndarray:
    """``h(z) = -z I - L[eta](z)``."""
    return eval_h_many(eta, [z])[0]


def nest(sys: HigherOrderSdde) -> DelayMeasure:
    """The ``mn``-dimensional first-order measure of an ``m``-th order system.

    Identity point masses at zero sit on the block super-diagonal and the
    last block row carries ``varpi_0, ..., varpi_(m-1)``.
    """
    n, m = sys.n, sys.m
    if m == 1:
        return sys.varpi[0]
    N = n * m
    weights = {}
    zero = weights.setdefault(0.0, np.zeros((N, N)))
    for k in range(m - 1):
        zero[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = np.eye(n)
    parts = []
    last = (m - 1) * n
    for j, v in enumerate(sys.varpi):
        for t, w in v.atoms:
            W = weights.setdefault(t, np.zeros((N, N)))
            W[last:, j * n:(j + 1) * n] += w
        if v.density is not None:
            parts.append((last, j * n, v.density))
    density = EmbeddedDensity(N, parts) if parts else None
    return DelayMeasure(N, tuple(sorted(weights.items(), key=lambda a: a[0])), density)


def det_reduction_check(sys: HigherOrderSdde, z: complex):
    """Both sides of the determinant identity for a nested system.

    ``lhs = det h(z)`` for the nested ``mn x mn`` measure and
    ``rhs = det((-z)^m I - sum_j L[varpi_j](z) (-z)^j)``.
    """
    lhs = np.linalg.det(eval_h(nest(sys), z))
    red = (-z) ** sys.m * np.eye(sys.n, dtype=complex)
    for j, v in enumerate(sys.varpi):
        red = red - v.laplace([z])[0] * (-z) ** j
    return complex(lhs), complex(np.linalg.det(red))


def _reference_generator(eta: DelayMeasure, window: float):
    """Stable ``M`` and shift ``s`` for the high-frequency reference of ``h(iy)^{-1}``.

    With ``M = W0 - s I`` (``W0`` the point mass at zero), ``h(iy)^{-1}`` agrees
    with ``a^{-1} + s a^{-2}``, ``a = -iy - M``, up to ``O(|y|^{-3})`` when
    ``eta`` has no other atoms. In time this is ``(I + s t) e^(Mt)`` on
    ``t >= 0``, which carries the unit jump of ``g`` at zero. ``s`` is only as
    large as needed for ``e^(Mt)`` to die out within ``window``.
    """
    W0 = eta.atom_at(0.0)
    ab = float(np.max(np.linalg.eigvals(W0).real))
    shift = max(0.0, ab + 40.0 / window)
    return W0 - shift * np.eye(eta.n), shift


def _delayed_atom_reference(M, w, t_a, step, count):
    """Time-domain form of ``a^{-1} w e^(iy t_a) a^{-1}``.

    This is ``1_{t >= t_a} int_0^(t - t_a) e^(M(t - t_a - u)) w e^(Mu) du``,
    the upper-right block of ``exp([[M, w], [0, M]] (t - t_a))``. It carries
    the kink of ``g`` at a delayed atom.
    """
    n = M.shape[0]
    out = np.zeros((count, n, n))
    first = int(np.ceil(t_a / step - 1e-9))
    if first >= count:
        return out
    blk = np.block([[M, w], [np.zeros((n, n)), M]])
    offset = expm(blk * (first * step - t_a))
    out[first:] = (expm_grid(blk, step, count - first) @ offset)[:, :n, n:]
    return out


def kernel_fft(eta: DelayMeasure, step: float = 2.0 ** -8, N: int = 2 ** 16,
               horizon: float | None = None, det_tol: float = 1e-12) -> SampledKernel:
    """Solution kernel ``g`` from ``F[g](y) = h(iy)^{-1}`` by inverse FFT.

    ``h(iy)^{-1}`` is sampled at ``y_k = 2 pi k / (N step)``. The jump of ``g``
    at zero is carried by an exactly known reference kernel, which is
    subtracted in the frequency domain and added back in the time domain,
    together with the kinks caused by delayed atoms of ``eta``; only the
    smoother remainder goes through the FFT. Values at negative
    times are dropped and their largest entry is kept as a causality check.
    """
    if N < 4 or N & (N - 1):
        raise ValueError("N must be a power of two >= 4")
    if eta.strip() <= 0:
        raise ValueError("the imaginary axis is outside the Laplace convergence strip")
    n = eta.n
    y = 2 * np.pi * np.fft.fftfreq(N, d=step)
    h = eval_h_many(eta, 1j * y)
    det = np.linalg.det(h)
    scale = max(1.0, eta.total_variation()) ** n
    if np.min(np.abs(det)) <= det_tol * scale:
        k = int(np.argmin(np.abs(det)))
        raise np.linalg.LinAlgError(f"h(iy) is singular near y = {y[k]:.6g}")
    H = np.linalg.inv(h)

    half = N // 2
    M, shift = _reference_generator(eta, half * step)
    a_inv = np.linalg.inv(-1j * y[:, None, None] * np.eye(n)[None] - M[None])
    Hr = a_inv + shift * a_inv @ a_inv
    delayed = [(t_a, w) for t_a, w in eta.atoms if t_a > 0 and t_a < half * step]
    for t_a, w in delayed:
        Hr = Hr + np.exp(1j * y * t_a)[:, None, None] * (a_inv @ w @ a_inv)
    resid = np.fft.fft(H - Hr, axis=0).real / (N * step)

    causal = resid[:half]
    t = step * np.arange(half)
    causal += (1.0 + shift * t)[:, None, None] * expm_grid(M, step, half)
    for t_a, w in delayed:
        causal += _delayed_atom_reference(M, w, t_a, step, half)
    negative = resid[half:]
    K = half if horizon is None else min(half, int(round(horizon / step)) + 1)
    return SampledKernel(step=step, values=causal[:K].copy(), atom_at_zero=np.eye(n),
                         causality_error=float(np.abs(negative).max()))


def fourier_of_kernel(g: SampledKernel, y) -> np.ndarray:
    """Trapezoidal ``int_0^T e^(iyu) g(u) du`` of a sampled kernel (no jump correction)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    t = g.times
    w = np.full(len(t), g.step)
    w[0] = w[-1] = g.step / 2
    phase = np.exp(1j * np.outer(y, t)) * w
    return np.einsum("yk,kij->yij", phase, g.values)


def _atom_index(t: float, step: float) -> int:
    k = int(round(t / step))
    if abs(k * step - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"atom at {t} is not aligned with the grid step {step}")
    return k


def kernel_measure_density(g: SampledKernel, eta: DelayMeasure) -> np.ndarray:
    """``(g * eta)(u) = int g(u - v) eta(dv)`` on the kernel grid.

    ``g`` is taken to vanish on negative times. The density part uses the
    trapezoidal rule on the same grid, so atoms must be grid-aligned.
    """
    K, n, step = g.values.shape[0], g.n, g.step
    out = np.zeros((K, n, n))
    for t, w in eta.atoms:
        k = _atom_index(t, step)
        if k < K:
            out[k:] += g.values[:K - k] @ w
    if eta.density is not None:
        d = eta.density.sample(step * np.arange(K))
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    conv = fftconvolve(g.values[:, a, c], d[:, c, b])[:K]
                    # trapezoid: halve both end points of each partial sum
                    conv -= 0.5 * g.values[:, a, c] * d[0, c, b]
                    conv -= 0.5 * g.values[0, a, c] * d[:, c, b]
                    out[:, a, b] += step * conv
    return out


def kernel_measure_residual(g: SampledKernel, eta: DelayMeasure):
    """Residuals of ``g(t) = 1_{t>=0} I + int_{-inf}^t g*eta`` and ``int g*eta = -I``.

    Returns ``(eq_residual, sum_residual)`` as max-abs entries over the grid.
    """
    ge = kernel_measure_density(g, eta)
    step = g.step
    cum = np.zeros_like(ge)
    cum[1:] = np.cumsum(0.5 * step * (ge[1:] + ge[:-1]), axis=0)
    eq = g.values - np.eye(g.n)[None] - cum
    total = cum[-1]
    return float(np.abs(eq).max()), float(np.abs(total + np.eye(g.n)).max())


def write_kernel_csv(path, g: SampledKernel, header_lines: Sequence[str] = (),
                     name: str = "g") -> None:
    """CSV with columns ``t,g_11,g_12,...,g_nn``; metadata as ``#`` comments."""
    n = g.n
    cols = ["t"] + [f"{name}_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
    with open(path, "w", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# step = {g.step!r}\n")
        fh.write("# atom_at_zero = " + " ".join(repr(float(x)) for x in g.atom_at_zero.ravel()) + "\n")
        fh.write(f"# causality_error = {g.causality_error!r}\n")
        fh.write(",".join(cols) + "\n")
        for t, v in zip(g.times, g.values.reshape(len(g.times), -1)):
            fh.write(",".join([f"{t:.10g}"] + [f"{x:.16e}" for x in v]) + "\n")
