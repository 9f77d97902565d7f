"""
Simulation, noise recovery and conditional-mean prediction.

Discretisation rules, fixed so that outputs are reproducible:

* moving averages: midpoint Riemann-Stieltjes sums, the kernel at the
  midpoint of a step being the mean of its two neighbouring grid samples;
* integrals of paths against kernels: trapezoidal rule on the path grid;
* path derivatives, when not supplied: second-order central differences
  inside, second-order one-sided differences at the ends.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.signal import fftconvolve

from .drivers import DriverPath, psd_sqrt, stream
from .kernels import (CarmaModel, _first_block, prediction_vector, sample_f,
                      truncation_horizon)
from .measures import DelayMeasure, expm_grid
from .msdde import SampledKernel, _atom_index, kernel_measure_density


@dataclass
class SampledPath:
    """``values[k] = X(t0 + k dt)``; ``derivs[j-1]`` holds ``X^(j)`` on the same grid."""

    t0: float
    dt: float
    values: np.ndarray
    derivs: list = field(default_factory=list)
    states: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        self.values = v
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[0])

    def window(self, start: int, stop: int | None = None) -> "SampledPath":
        sl = slice(start, stop)
        return SampledPath(self.t0 + start * self.dt, self.dt, self.values[sl],
                           [d[sl] for d in self.derivs],
                           None if self.states is None else self.states[sl])


@dataclass
class PredictionResult:
    """Conditional mean at ``s + lead`` split into its three contributions.

    ``state_term`` uses the present value (and derivatives) at ``s``,
    ``memory_term`` the observed past before ``s``, ``noise_term`` the
    predicted noise after ``s``.
    """

    s: float
    lead: np.ndarray
    mean: np.ndarray
    state_term: np.ndarray
    memory_term: np.ndarray
    noise_term: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.s + self.lead


def _midpoint_kernel(kernel: SampledKernel) -> np.ndarray:
    v = kernel.values
    return 0.5 * (v[:-1] + v[1:])


def simulate_ma(kernel: SampledKernel, driver: DriverPath, burn_in: float) -> SampledPath:
    """``X(t) = int g(t-u) dZ_u`` as a midpoint sum over the driver steps.

    The first output time is ``driver.t0 + burn_in``; the kernel is cut at its
    own horizon, which ``burn_in`` must cover.
    """
    dt = driver.dt
    if not math.isclose(kernel.step, dt, rel_tol=1e-12):
        raise ValueError(f"kernel step {kernel.step} differs from driver step {dt}")
    if burn_in < kernel.horizon - 1e-9:
        raise ValueError(f"burn_in {burn_in} is shorter than the kernel horizon {kernel.horizon}")
    k0 = int(round(burn_in / dt))
    K = driver.steps
    if k0 > K:
        raise ValueError("insufficient driver history: burn_in exceeds the driver length")
    if driver.n != kernel.n:
        raise ValueError("driver and kernel dimensions differ")
    gm = _midpoint_kernel(kernel)
    n = kernel.n
    X = np.zeros((K + 1, n))
    for a in range(n):
        for b in range(n):
            conv = fftconvolve(driver.increments[:, b], gm[:, a, b])[:K]
            X[1:, a] += conv
    return SampledPath(driver.t0 + k0 * dt, dt, X[k0:])


def _augmented_exp(top_left, top_right, bottom_right, t):
    """Upper-right block of ``expm([[TL, TR], [0, BR]] t)``."""
    k, l = top_left.shape[0], bottom_right.shape[0]
    M = np.zeros((k + l, k + l))
    M[:k, :k] = top_left
    M[:k, k:] = top_right
    M[k:, k:] = bottom_right
    return expm(M * t)[:k, k:]


def statespace_transition(model: CarmaModel, dt: float, cov: np.ndarray):
    """Exact one-step quantities of ``ds = A s dt + E dZ`` for Brownian ``Z``.

    Returns ``(Phi, gain, resid_sqrt)``: given the step increment ``dZ``,
    the state noise is ``gain @ dZ + resid_sqrt @ N(0, I)``, which reproduces
    the exact joint law of the state noise and the increment. The covariance
    integrals come from augmented matrix exponentials.
    """
    A, E = model.Acomp, model.Estack
    k = A.shape[0]
    Phi = expm(A * dt)
    Gam = _augmented_exp(A, np.eye(k), np.zeros((k, k)), dt)      # int_0^dt e^(Av) dv
    G = E @ cov @ E.T
    F = expm(np.block([[-A, G], [np.zeros((k, k)), A.T]]) * dt)
    Qd = F[k:, k:].T @ F[:k, k:]                                  # int_0^dt e^(Av) G e^(A^T v) dv
    Qd = 0.5 * (Qd + Qd.T)
    var_dz = cov * dt
    gain = Gam @ E @ cov @ np.linalg.pinv(var_dz)
    resid = Qd - gain @ var_dz @ gain.T
    return Phi, gain, psd_sqrt(0.5 * (resid + resid.T))


def simulate_statespace(model: CarmaModel, driver: DriverPath, burn_in: float,
                        seed: int | None = None, state0=None) -> SampledPath:
    """Exact state-space recursion driven by the given Brownian increments.

    The within-step part of the noise that the coarse increments do not
    determine is drawn from its exact conditional law with a separate stream.
    Derivatives ``X^(1)..X^(p-q-1)`` and the state vectors are attached.
    """
    spec = driver.spec
    if spec is None or spec.kind != "brownian":
        raise ValueError("simulate_statespace needs a Brownian driver")
    dt, K = driver.dt, driver.steps
    k0 = int(round(burn_in / dt))
    if k0 > K:
        raise ValueError("insufficient driver history: burn_in exceeds the driver length")
    Phi, gain, rsq = statespace_transition(model, dt, spec.covariance)
    seed = driver.seed if seed is None else seed
    rng = stream(0 if seed is None else seed, 2 ** 20 + 1)
    inputs = driver.increments @ gain.T + rng.standard_normal((K, rsq.shape[1])) @ rsq.T
    states = np.empty((K + 1, Phi.shape[0]))
    states[0] = 0.0 if state0 is None else np.asarray(state0, dtype=float)
    s = states[0].copy()
    PhiT = Phi.T.copy()
    for k in range(K):
        s = s @ PhiT + inputs[k]
        states[k + 1] = s
    states = states[k0:]
    C = _first_block(model.n, model.p)
    values = states @ C.T
    derivs = []
    CA = C
    for _ in range(1, model.m):
        CA = CA @ model.Acomp
        derivs.append(states @ CA.T)
    return SampledPath(driver.t0 + k0 * dt, dt, values, derivs, states)


def derivative_stack(path: SampledPath, order: int, max_amplification: float = 1e6) -> list:
    """``[X, X', ..., X^(order)]``, using supplied derivatives where available."""
    stack = [path.values]
    if order == 0:
        return stack
    if len(path.derivs) >= order:
        return stack + list(path.derivs[:order])
    amp = path.dt ** (-order)
    if amp > max_amplification:
        raise ValueError(f"finite-difference derivatives of order {order} amplify noise by "
                         f"{amp:.3g} > {max_amplification:.3g}; supply derivatives instead")
    if order >= 2:
        warnings.warn(f"estimating {order} derivatives by finite differences amplifies noise "
                      f"by about {amp:.3g}", RuntimeWarning, stacklevel=3)
    cur = path.values
    for j in range(order):
        if j < len(path.derivs):
            cur = path.derivs[j]
        else:
            cur = np.gradient(cur, path.dt, axis=0, edge_order=2)
        stack.append(cur)
    return stack


def _trapezoid_weights(L: int, dt: float) -> np.ndarray:
    w = np.full(L, dt)
    w[0] = w[-1] = dt / 2
    return w


def _delay_memory(fs: SampledKernel, X: np.ndarray) -> np.ndarray:
    """``D[k] = int_0^T f(u) X[k - u/dt] du`` by the trapezoidal rule (valid for k >= L-1)."""
    L = fs.values.shape[0]
    w = _trapezoid_weights(L, fs.step)[:, None, None] * fs.values
    K, n = X.shape
    out = np.zeros((K, n))
    for a in range(n):
        for b in range(n):
            out[:, a] += fftconvolve(X[:, b], w[:, a, b])[:K]
    return out


def recover_noise(model: CarmaModel, path: SampledPath, T_f: float | None = None,
                  tol: float = 1e-8, max_amplification: float = 1e6) -> DriverPath:
    """Driver increments implied by an observed path.

    Per step, ``dZ = dX^(m-1) + sum_j C_j X^(j) dt - (int_0^T f(u) X_(t-u) du) dt``
    with left-point evaluation. Steps whose delay integral would reach before
    the start of the path are flagged invalid and set to NaN.
    """
    dt = path.dt
    m = model.m
    if path.n != model.n:
        raise ValueError("path and model dimensions differ")
    Y = derivative_stack(path, m - 1, max_amplification)
    K = path.values.shape[0]
    if K < 2:
        raise ValueError("path too short")
    inc = Y[m - 1][1:] - Y[m - 1][:-1]
    for j, Cj in enumerate(model.C):
        inc = inc + dt * Y[j][:-1] @ Cj.T
    valid = np.ones(K - 1, dtype=bool)
    if model.q:
        if T_f is None:
            T_f = truncation_horizon(model, tol, step=dt)
        fs = sample_f(model, dt, T_f)
        L = fs.values.shape[0]
        if L > K - 1:
            raise ValueError(f"path too short: {K} samples for a delay horizon of {L} steps")
        inc = inc - dt * _delay_memory(fs, path.values)[:-1]
        valid[:L - 1] = False
    inc[~valid] = np.nan
    return DriverPath(path.t0, dt, inc, None, None, valid)


def _tail_derivatives(history: SampledPath, count: int) -> list:
    """``[X_s, X'_s, ..., X^(count-1)_s]`` at the right end of the history."""
    out = [history.values[-1]]
    if count <= 1:
        return out
    if len(history.derivs) >= count - 1:
        return out + [d[-1] for d in history.derivs[:count - 1]]
    width = min(history.values.shape[0], 4 * count + 4)
    if width < 3:
        raise ValueError("missing derivatives: history too short to difference")
    tail = history.window(history.values.shape[0] - width)
    stack = derivative_stack(tail, count - 1)
    return [x[-1] for x in stack]


def predict(model: CarmaModel, history: SampledPath, lead, mean_rate=None, zhat=None,
            T_f: float | None = None, tol: float = 1e-8) -> PredictionResult:
    """Conditional mean of a CARMA process given its path up to the last sample ``s``.

    ``mean = sum_j gtilde_j(t-s) X_s^(j-1)
             + int_{-inf}^s int_s^t gtilde(t-u) f(u-v) du X_v dv
             + gtilde * {Zhat 1_(s,inf)}(t)``.

    The inner ``u``-integral is done exactly (augmented matrix exponential),
    the ``v``-integral by the trapezoidal rule over the last ``T_f`` of
    history. The noise prediction is either Levy, ``Zhat_v = (v-s) mean_rate``,
    or user samples ``zhat`` on the ``lead`` grid (which must then be uniform
    and start at zero).
    """
    lead = np.atleast_1d(np.asarray(lead, dtype=float))
    if np.any(lead < 0):
        raise ValueError("lead times must be non-negative")
    n, p, m = model.n, model.p, model.m
    A, E = model.Acomp, model.Estack
    C = _first_block(n, p)
    s = float(history.times[-1])
    dt = history.dt

    # state term
    Xs = _tail_derivatives(history, m)
    V = [prediction_vector(model, j) for j in range(1, m + 1)]
    eA = np.array([expm(A * tau) for tau in lead])
    drive = sum(Vj @ x for Vj, x in zip(V, Xs))
    state_term = np.einsum("ik,tkl,l->ti", C, eA, drive)

    # memory term
    memory_term = np.zeros((len(lead), n))
    if model.q:
        if T_f is None:
            T_f = truncation_horizon(model, tol, step=dt)
        L = int(round(T_f / dt)) + 1
        if history.values.shape[0] < L:
            raise ValueError(f"insufficient history: need {T_f} time units before s")
        B, Fst = model.Bcomp, model.Fstack
        kern = expm_grid(B, dt, L) @ Fst                      # e^(Bu) F
        past = history.values[::-1][:L]                       # X_(s-u)
        xi = np.einsum("u,ukl,ul->k", _trapezoid_weights(L, dt), kern, past)
        CB = _first_block(n, model.q)
        W = np.array([_augmented_exp(A, E @ CB, B, tau) for tau in lead])
        memory_term = np.einsum("ik,tkl,l->ti", C, W, xi)

    # noise term
    if zhat is None:
        mu = np.zeros(n) if mean_rate is None else np.asarray(mean_rate, dtype=float)
        k = A.shape[0]
        Gam = np.array([_augmented_exp(A, np.eye(k), np.zeros((k, k)), tau) for tau in lead])
        noise_term = np.einsum("ik,tkl,l->ti", C, Gam, E @ mu)
    else:
        noise_term = _noise_term_samples(model, lead, np.asarray(zhat, dtype=float))

    mean = state_term + memory_term + noise_term
    return PredictionResult(s, lead, mean, state_term, memory_term, noise_term)


def _noise_term_samples(model: CarmaModel, lead: np.ndarray, zhat: np.ndarray) -> np.ndarray:
    """``1_{p=q+1} Zhat_t + C A int_s^t e^(A(t-v)) E Zhat_v dv`` on a uniform lead grid."""
    if zhat.ndim == 1:
        zhat = zhat[:, None]
    if zhat.shape != (len(lead), model.n):
        raise ValueError("zhat must have one row per lead time")
    if lead[0] != 0 or len(lead) > 1 and not np.allclose(np.diff(lead), lead[1] - lead[0]):
        raise ValueError("zhat samples need a uniform lead grid starting at 0")
    A, E = model.Acomp, model.Estack
    C = _first_block(model.n, model.p)
    h = lead[1] - lead[0] if len(lead) > 1 else 0.0
    Ph = expm(A * h)
    Ez = zhat @ E.T
    J = np.zeros((len(lead), A.shape[0]))
    for i in range(1, len(lead)):
        J[i] = Ph @ (J[i - 1] + 0.5 * h * Ez[i - 1]) + 0.5 * h * Ez[i]
    out = J @ (C @ A).T
    if model.m == 1:
        out = out + zhat
    return out


def predict_msdde(eta: DelayMeasure, g: SampledKernel, history: SampledPath, lead,
                  zhat=None, mean_rate=None) -> PredictionResult:
    """Conditional mean for a first-order delay equation with sampled kernel ``g``.

    ``mean = g(t-s) X_s + int_s^t g(t-u) [eta * 1_(-inf,s] X](u) du
             + int_[0,t-s) g(dv) Zhat_(t-v)``

    with ``g(dv) = I delta_0 + (g * eta)(v) dv``. ``lead`` must be the uniform
    grid ``0, dt, 2 dt, ...`` with the kernel's step. Atoms of ``eta`` must sit
    on the grid; the density is truncated at the length of the history.
    """
    dt = history.dt
    if not math.isclose(g.step, dt, rel_tol=1e-12):
        raise ValueError("kernel and history steps differ")
    lead = np.atleast_1d(np.asarray(lead, dtype=float))
    H = len(lead)
    if not np.allclose(lead, dt * np.arange(H)):
        raise ValueError("lead must be 0, dt, 2 dt, ... with the kernel step")
    if H > g.values.shape[0]:
        raise ValueError("lead grid longer than the sampled kernel")
    n = eta.n
    if history.n != n:
        raise ValueError("history and measure dimensions differ")
    s = float(history.times[-1])
    X = history.values
    Kh = X.shape[0]
    gv = g.values[:H]

    state_term = gv @ X[-1]

    # eta * {1_(-inf,s] X}(s + i dt) for i = 0..H-1
    mem = np.zeros((H, n))
    for t_a, w in eta.atoms:
        ka = _atom_index(t_a, dt)
        if ka == 0:
            continue                      # right limit at u = s excludes the atom at zero
        if ka >= Kh:
            raise ValueError("insufficient history for a delayed atom")
        for i in range(min(H, ka + 1)):
            factor = 0.5 if i == ka else 1.0  # jump of the memory at u = s + t_a
            mem[i] += factor * (w @ X[-1 - (ka - i)])
    if eta.density is not None:
        L = Kh
        d = eta.density.sample(dt * np.arange(H + L))
        past = X[::-1] * _trapezoid_weights(L, dt)[:, None]
        for i in range(H):
            mem[i] += np.einsum("rab,rb->a", d[i:i + L], past)
    memory_term = np.zeros((H, n))
    for k in range(1, H):
        w = _trapezoid_weights(k + 1, dt)
        memory_term[k] = np.einsum("i,iab,ib->a", w, gv[k::-1], mem[:k + 1])

    # noise term
    if zhat is None:
        mu = np.zeros(n) if mean_rate is None else np.asarray(mean_rate, dtype=float)
        zhat = lead[:, None] * mu[None, :]
    zhat = np.asarray(zhat, dtype=float).reshape(H, n)
    ge = kernel_measure_density(SampledKernel(dt, gv.copy(), g.atom_at_zero), eta)
    noise_term = zhat @ g.atom_at_zero.T
    for k in range(1, H):
        w = _trapezoid_weights(k + 1, dt)
        noise_term[k] += np.einsum("v,vab,vb->a", w, ge[:k + 1], zhat[k::-1])

    mean = state_term + memory_term + noise_term
    return PredictionResult(s, lead, mean, state_term, memory_term, noise_term)


def simulate_continuations(model: CarmaModel, state, lead, paths: int, seed: int,
                           cov=None, mean_rate=None) -> np.ndarray:
    """Independent continuations of the CARMA state from ``state`` under Brownian noise.

    Returns ``X`` at ``s + lead`` with shape ``(paths, len(lead), n)``; each step
    between lead points uses the exact Gaussian transition.
    """
    lead = np.atleast_1d(np.asarray(lead, dtype=float))
    if np.any(np.diff(lead) < 0) or lead[0] < 0:
        raise ValueError("lead must be non-negative and increasing")
    n = model.n
    cov = np.eye(n) if cov is None else np.atleast_2d(np.asarray(cov, dtype=float))
    mu = np.zeros(n) if mean_rate is None else np.asarray(mean_rate, dtype=float)
    A, E = model.Acomp, model.Estack
    k = A.shape[0]
    C = _first_block(n, model.p)
    rng = stream(seed, 0)
    S = np.tile(np.asarray(state, dtype=float), (paths, 1))
    out = np.empty((paths, len(lead), n))
    prev = 0.0
    for i, tau in enumerate(lead):
        h = tau - prev
        if h > 0:
            Phi, gain, rsq = statespace_transition(model, h, cov)
            drift = _augmented_exp(A, np.eye(k), np.zeros((k, k)), h) @ E @ mu
            # the increment and the residual are independent Gaussians
            dz = rng.standard_normal((paths, n)) @ psd_sqrt(cov * h).T
            S = S @ Phi.T + drift + dz @ gain.T + rng.standard_normal((paths, k)) @ rsq.T
        out[:, i] = S @ C.T
        prev = tau
    return out


def _fmt_row(t, row) -> str:
    return ",".join([f"{t:.17g}"] + [f"{x:.16e}" for x in row])


def _write_csv(path, header_lines, columns, times, table):
    with open(path, "w", newline="\n") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for t, row in zip(times, table):
            fh.write(_fmt_row(t, row) + "\n")


def write_path_csv(path, sp: SampledPath, header_lines: Sequence[str] = ()) -> None:
    """Columns ``t,X_1..X_n`` followed by ``D<j>_<i>`` for attached derivatives."""
    n = sp.n
    cols = ["t"] + [f"X_{i + 1}" for i in range(n)]
    blocks = [sp.values]
    for j, d in enumerate(sp.derivs, start=1):
        cols += [f"D{j}_{i + 1}" for i in range(n)]
        blocks.append(d)
    _write_csv(path, list(header_lines) + [f"dt = {sp.dt!r}"], cols, sp.times, np.hstack(blocks))


def read_path_csv(path) -> SampledPath:
    """Inverse of :func:`write_path_csv` (header comments are skipped)."""
    with open(path) as fh:
        raw = fh.readlines()
    header_dt = None
    for ln in raw:
        if ln.startswith("# dt = "):
            header_dt = float(ln.split("=", 1)[1])
    lines = [ln for ln in raw if not ln.startswith("#") and ln.strip()]
    cols = lines[0].strip().split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two samples")
    t = data[:, 0]
    steps = np.diff(t)
    dt = header_dt if header_dt is not None else float(np.mean(steps))
    if not np.allclose(steps, dt, rtol=1e-4, atol=0):
        raise ValueError(f"{path}: sampling grid is not uniform")
    xcols = [i for i, c in enumerate(cols) if c.startswith("X_")]
    derivs = []
    j = 1
    while True:
        dcols = [i for i, c in enumerate(cols) if c.startswith(f"D{j}_")]
        if not dcols:
            break
        derivs.append(data[:, dcols])
        j += 1
    return SampledPath(float(t[0]), dt, data[:, xcols], derivs)


def write_driver_csv(path, dp: DriverPath, header_lines: Sequence[str] = ()) -> None:
    """Columns ``t,dZ_1..dZ_n,valid``; ``t`` is the left end of each step."""
    n = dp.n
    cols = ["t"] + [f"dZ_{i + 1}" for i in range(n)] + ["valid"]
    with open(path, "w", newline="\n") as fh:
        for line in list(header_lines) + [f"dt = {dp.dt!r}", f"seed = {dp.seed!r}"]:
            fh.write(f"# {line}\n")
        fh.write(",".join(cols) + "\n")
        for t, row, ok in zip(dp.times, dp.increments, dp.valid):
            fh.write(_fmt_row(t, row) + f",{int(ok)}\n")


def write_prediction_csv(path, res: PredictionResult, header_lines: Sequence[str] = ()) -> None:
    """Columns ``t,pred_*,term1_*,term2_*,term3_*`` (state, memory, noise terms)."""
    n = res.mean.shape[1]
    cols = ["t"]
    for name in ("pred", "term1", "term2", "term3"):
        cols += [f"{name}_{i + 1}" for i in range(n)]
    table = np.hstack([res.mean, res.state_term, res.memory_term, res.noise_term])
    _write_csv(path, list(header_lines) + [f"s = {res.s!r}"], cols, res.times, table)
