"""
CARMA models and their closed-form kernels.

For ``P(z) = I z^p + A_1 z^(p-1) + ... + A_p`` and
``Q(z) = B_0 + B_1 z + ... + B_(q-1) z^(q-1) + I z^q`` the moving-average
kernel, the delay kernel and the prediction weights are all of the form
``(e_1 x I)^T expm(Mt) V`` for a block companion matrix ``M``:

* ``gtilde(t) = (e_1 x I)^T e^(At) E``
* ``f(t) = (e_1 x I)^T e^(Bt) F``
* ``gtilde_j(t) = (e_1 x I)^T e^(At) sum_{k=j}^{p-q} A^(k-j) E C_k``, ``C_(p-q) = I``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .matpoly import MatrixPoly, companion_of, long_divide, solve_E, solve_F
from .measures import DelayMeasure, MatExpDensity, expm_grid
from .msdde import HigherOrderSdde, SampledKernel
from .stability import HalfPlaneReport, halfplane_check


class HypothesisViolation(ValueError):
    """A model does not satisfy a causality or invertibility assumption."""


def matrix_exp(M) -> np.ndarray:
    """Matrix exponential (scaling and squaring with a Pade core, via SciPy)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix_exp needs finite entries")
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = expm(M)
        except FloatingPointError as exc:
            raise OverflowError("matrix exponential overflowed") from exc
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix exponential overflowed")
    return out


def _first_block(n: int, k: int) -> np.ndarray:
    """``(e_1^k x I_n)^T`` as an ``n x kn`` matrix."""
    out = np.zeros((n, k * n))
    out[:, :n] = np.eye(n)
    return out


@dataclass
class CarmaModel:
    """An ``n``-dimensional CARMA(p, q) model with all derived quantities.

    Parameters
    ----------
    A : sequence of ``n x n`` arrays
        ``A_1..A_p`` (coefficient of ``z^(p-i)`` in ``P``).
    B : sequence of ``n x n`` arrays
        ``B_0..B_(q-1)``; ``B_q = I`` is implied, so ``q = len(B)``.
    check : bool
        Raise :class:`HypothesisViolation` unless ``P`` and ``Q`` have all
        their roots in the open left half-plane.
    """

    A: Sequence
    B: Sequence = ()
    check: bool = True
    tol: float = 1e-9

    P: MatrixPoly = field(init=False)
    Q: MatrixPoly = field(init=False)
    C: list = field(init=False)
    S: MatrixPoly = field(init=False)
    E: list = field(init=False)
    F: list = field(init=False)
    Acomp: np.ndarray = field(init=False)
    Bcomp: np.ndarray | None = field(init=False)
    P_report: HalfPlaneReport = field(init=False)
    Q_report: HalfPlaneReport | None = field(init=False)
    decay: float = field(init=False)
    decay_constant: float = field(init=False)

    def __post_init__(self):
        A = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A]
        B = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.B]
        if not A:
            raise ValueError("need p >= 1")
        n = A[0].shape[0]
        if any(a.shape != (n, n) for a in A + B):
            raise ValueError(f"all coefficient blocks must be {n}x{n}")
        if len(B) >= len(A):
            raise ValueError("need q < p")
        self.A, self.B = A, B
        p, q = len(A), len(B)
        self.P = MatrixPoly.monic(A)
        self.Q = MatrixPoly(tuple(B) + (np.eye(n),))

        self.P_report = halfplane_check(self.P, self.tol)
        self.Q_report = halfplane_check(self.Q, self.tol) if q else None
        if self.check:
            if not self.P_report.passed:
                raise HypothesisViolation(f"causality fails: det P has a root with Re >= 0 "
                                          f"({self.P_report})")
            if q and not self.Q_report.passed:
                raise HypothesisViolation(f"invertibility fails: det Q has a root with Re >= 0 "
                                          f"({self.Q_report})")

        self.C, self.S = long_divide(self.P, self.Q, q)
        self.E = solve_E(self.P, self.Q)
        self.F = solve_F(self.P, self.Q, self.S) if q else []
        self.Acomp = companion_of(self.P)
        self.Bcomp = companion_of(self.Q) if q else None

        rates = [-self.P_report.max_real_part]
        if q:
            rates.append(-self.Q_report.max_real_part)
        self.decay = 0.9 * min(rates) if min(rates) > 0 else 0.0
        self.decay_constant = self._estimate_decay_constant()

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def p(self) -> int:
        return len(self.A)

    @property
    def q(self) -> int:
        return len(self.B)

    @property
    def m(self) -> int:
        """Order ``p - q`` of the equivalent delay equation."""
        return self.p - self.q

    @property
    def Estack(self) -> np.ndarray:
        return np.vstack(self.E)

    @property
    def Fstack(self) -> np.ndarray | None:
        return np.vstack(self.F) if self.q else None

    def R(self) -> MatrixPoly:
        return MatrixPoly(tuple(self.C) + (np.eye(self.n),))

    def _estimate_decay_constant(self) -> float:
        if self.decay <= 0:
            return np.inf
        t = np.linspace(0.0, 4.0 / self.decay, 801)
        vals = np.abs(gtilde_many(self, t)).max(axis=(1, 2))
        if self.q:
            vals = np.maximum(vals, np.abs(f_kernel_many(self, t)).max(axis=(1, 2)))
        return float(np.max(vals * np.exp(self.decay * t)))

    def delay_system(self) -> HigherOrderSdde:
        """The order-``p-q`` delay system solved by this CARMA process.

        ``varpi_0 = -C_0 delta_0 + f(u) du`` and ``varpi_j = -C_j delta_0``.
        """
        n = self.n
        varpi = []
        for j, Cj in enumerate(self.C):
            density = None
            if j == 0 and self.q:
                density = MatExpDensity(_first_block(n, self.q), self.Bcomp, self.Fstack)
            varpi.append(DelayMeasure(n, ((0.0, -Cj),), density))
        return HigherOrderSdde(tuple(varpi))

    def summary(self) -> str:
        fmt = lambda M: np.array2string(np.asarray(M), precision=10, separator=", ")
        lines = [f"n = {self.n}, p = {self.p}, q = {self.q}, order p-q = {self.m}"]
        lines += [f"A_{i + 1} = {fmt(a)}" for i, a in enumerate(self.A)]
        lines += [f"B_{i} = {fmt(b)}" for i, b in enumerate(self.B)]
        lines += [f"C_{j} = {fmt(c)}" for j, c in enumerate(self.C)]
        lines += [f"E_{j + 1} = {fmt(e)}" for j, e in enumerate(self.E)]
        lines += [f"F_{j + 1} = {fmt(f)}" for j, f in enumerate(self.F)]
        lines.append(f"P check: {self.P_report}")
        lines.append("P eigenvalues: " + ", ".join(f"{z:.6g}" for z in self.P_report.eigenvalues))
        if self.q:
            lines.append(f"Q check: {self.Q_report}")
            lines.append("Q eigenvalues: " + ", ".join(f"{z:.6g}" for z in self.Q_report.eigenvalues))
        else:
            lines.append("Q check: not applicable (q = 0)")
        lines.append(f"decay rate = {self.decay:.6g}, decay constant = {self.decay_constant:.6g}")
        return "\n".join(lines)


def _exp_kernel_many(M: np.ndarray, left: np.ndarray, right: np.ndarray, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((len(t), left.shape[0], right.shape[1]))
    for i, ti in enumerate(t):
        if ti >= 0:
            out[i] = left @ matrix_exp(M * ti) @ right
    return out


def gtilde_many(model: CarmaModel, t) -> np.ndarray:
    return _exp_kernel_many(model.Acomp, _first_block(model.n, model.p), model.Estack, t)


def gtilde(model: CarmaModel, t: float) -> np.ndarray:
    """Moving-average kernel ``1_{t>=0} (e_1 x I)^T e^(At) E``."""
    return gtilde_many(model, [t])[0]


def f_kernel_many(model: CarmaModel, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if model.q == 0:
        return np.zeros((len(t), model.n, model.n))
    return _exp_kernel_many(model.Bcomp, _first_block(model.n, model.q), model.Fstack, t)


def f_kernel(model: CarmaModel, t: float) -> np.ndarray:
    """Delay kernel ``1_{t>=0} (e_1 x I)^T e^(Bt) F``; identically zero when ``q = 0``."""
    return f_kernel_many(model, [t])[0]


def prediction_vector(model: CarmaModel, j: int) -> np.ndarray:
    """``sum_{k=j}^{p-q} A^(k-j) E C_k`` with ``C_(p-q) = I``."""
    m = model.m
    if not 1 <= j <= m:
        raise ValueError(f"j must be in 1..{m}, got {j}")
    Cs = list(model.C) + [np.eye(model.n)]
    E = model.Estack
    out = np.zeros_like(E)
    Apow = np.eye(E.shape[0])
    for k in range(j, m + 1):
        out += Apow @ E @ Cs[k]
        Apow = Apow @ model.Acomp
    return out


def gtilde_j_many(model: CarmaModel, j: int, t) -> np.ndarray:
    return _exp_kernel_many(model.Acomp, _first_block(model.n, model.p),
                            prediction_vector(model, j), t)


def gtilde_j(model: CarmaModel, j: int, t: float) -> np.ndarray:
    """Weight of ``X_s^(j-1)`` in the conditional mean ``t`` time units ahead."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return gtilde_j_many(model, j, [t])[0]


def sample_gtilde(model: CarmaModel, step: float, horizon: float) -> SampledKernel:
    """``gtilde`` on ``0, step, ..., horizon``; the jump at zero is ``E_1``."""
    K = int(math.floor(horizon / step + 1e-9)) + 1
    left = _first_block(model.n, model.p)
    vals = np.einsum("ik,tkl,lj->tij", left, expm_grid(model.Acomp, step, K), model.Estack)
    return SampledKernel(step, vals, atom_at_zero=model.E[0].copy())


def sample_f(model: CarmaModel, step: float, horizon: float) -> SampledKernel | None:
    """``f`` on ``0, step, ..., horizon``, or ``None`` when ``q = 0``."""
    if model.q == 0:
        return None
    K = int(math.floor(horizon / step + 1e-9)) + 1
    left = _first_block(model.n, model.q)
    vals = np.einsum("ik,tkl,lj->tij", left, expm_grid(model.Bcomp, step, K), model.Fstack)
    return SampledKernel(step, vals, atom_at_zero=vals[0].copy())


def truncation_horizon(model: CarmaModel, tol: float = 1e-8, step: float = 2.0 ** -8) -> float:
    """Smallest multiple ``T`` of ``step`` beyond which ``|gtilde|`` and ``|f|`` stay below ``tol``.

    Starts from ``log(C / tol) / eps`` (decay rate ``eps`` and constant ``C``
    of the model) and doubles the search window until the tail is clear.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.isfinite(model.decay_constant) or model.decay <= 0:
        raise HypothesisViolation("kernels do not decay: the model is not causal/invertible")
    T0 = max(step, math.log(max(model.decay_constant, tol) / tol) / model.decay)
    window = T0
    while True:
        g = sample_gtilde(model, step, window).values
        mag = np.abs(g).max(axis=(1, 2))
        fs = sample_f(model, step, window)
        if fs is not None:
            mag = np.maximum(mag, np.abs(fs.values).max(axis=(1, 2)))
        above = np.nonzero(mag >= tol)[0]
        last = above[-1] if above.size else -1
        # the last quarter of the window must already be clear
        if last < 0.75 * (len(mag) - 1):
            return float(step * (last + 1))
        window *= 2.0
