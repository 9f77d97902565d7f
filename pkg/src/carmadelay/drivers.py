"""
Driving noise with stationary increments on a uniform grid.

Levy drivers are drawn step by step from their exact step-``dt`` law.
Fractional drivers are Riemann-Liouville moving averages of a Brownian base,

    Z_t = 1/Gamma(1+beta) int [(t-u)_+^beta - (-u)_+^beta] dL_u,

with the infinite history truncated at ``t0 - history``.

Every path owns one random stream, derived from ``(seed, path_index)``
through :class:`numpy.random.SeedSequence`, so replicate paths never share
a stream and a path is reproducible from its spec, grid and seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gamma

KINDS = ("brownian", "compound_poisson", "gamma_difference", "fractional")


@dataclass
class DriverSpec:
    """Law of an ``n``-dimensional driver.

    brownian
        ``mu`` (drift per unit time), ``sigma`` (per-coordinate volatility),
        ``corr`` (correlation matrix).
    compound_poisson
        ``rate`` jumps per unit time in each coordinate, jump sizes
        ``N(jump_mu, jump_sigma^2)``.
    gamma_difference
        difference of two independent gamma processes with ``shape`` per unit
        time and ``scale`` (mean zero).
    fractional
        ``base`` (a mean-zero Brownian spec) and ``beta`` per coordinate in
        ``(0, 1/2)``; ``history`` is the truncation length, ``None`` for the
        default of 64 times the simulated span.
    """

    kind: str
    n: int = 1
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    corr: np.ndarray | None = None
    rate: np.ndarray | None = None
    jump_mu: np.ndarray | None = None
    jump_sigma: np.ndarray | None = None
    shape: np.ndarray | None = None
    scale: np.ndarray | None = None
    base: "DriverSpec | None" = None
    beta: np.ndarray | None = None
    history: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown driver kind {self.kind!r}; expected one of {KINDS}")
        vec = lambda v, default: np.broadcast_to(
            np.asarray(default if v is None else v, dtype=float), (self.n,)).copy()
        if self.kind == "brownian":
            self.mu = vec(self.mu, 0.0)
            self.sigma = vec(self.sigma, 1.0)
            self.corr = np.eye(self.n) if self.corr is None else np.atleast_2d(
                np.asarray(self.corr, dtype=float))
            if np.any(self.sigma < 0):
                raise ValueError("sigma must be non-negative")
            if self.corr.shape != (self.n, self.n) or not np.allclose(self.corr, self.corr.T):
                raise ValueError("corr must be a symmetric n x n matrix")
            if np.min(np.linalg.eigvalsh(self.corr)) < -1e-12:
                raise ValueError("corr must be positive semi-definite")
        elif self.kind == "compound_poisson":
            self.rate = vec(self.rate, 1.0)
            self.jump_mu = vec(self.jump_mu, 0.0)
            self.jump_sigma = vec(self.jump_sigma, 1.0)
            if np.any(self.rate < 0) or np.any(self.jump_sigma < 0):
                raise ValueError("rate and jump_sigma must be non-negative")
        elif self.kind == "gamma_difference":
            self.shape = vec(self.shape, 1.0)
            self.scale = vec(self.scale, 1.0)
            if np.any(self.shape <= 0) or np.any(self.scale <= 0):
                raise ValueError("shape and scale must be positive")
        else:
            if self.base is None:
                self.base = DriverSpec("brownian", n=self.n)
            if self.base.kind != "brownian":
                raise ValueError("fractional drivers need a Brownian base")
            if self.base.n != self.n:
                raise ValueError("base dimension does not match")
            if np.any(self.base.mu != 0):
                raise ValueError("fractional drivers need a mean-zero base")
            self.beta = vec(self.beta, 0.25)
            if np.any(self.beta <= 0) or np.any(self.beta >= 0.5):
                raise ValueError("beta must lie in (0, 1/2)")

    @property
    def covariance(self) -> np.ndarray:
        """Covariance of ``Z_1 - Z_0`` (Levy kinds only)."""
        if self.kind == "brownian":
            return self.sigma[:, None] * self.corr * self.sigma[None, :]
        if self.kind == "compound_poisson":
            return np.diag(self.rate * (self.jump_mu ** 2 + self.jump_sigma ** 2))
        if self.kind == "gamma_difference":
            return np.diag(2 * self.shape * self.scale ** 2)
        raise ValueError("fractional drivers have no linear-in-time covariance")

    @property
    def mean(self) -> np.ndarray:
        """``E[Z_1]``."""
        if self.kind == "brownian":
            return self.mu.copy()
        if self.kind == "compound_poisson":
            return self.rate * self.jump_mu
        return np.zeros(self.n)


@dataclass
class DriverPath:
    """Increments ``increments[k] = Z(t0 + (k+1) dt) - Z(t0 + k dt)``."""

    t0: float
    dt: float
    increments: np.ndarray
    seed: int | None = None
    spec: DriverSpec | None = None
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        self.increments = inc
        if self.valid is None:
            self.valid = np.ones(inc.shape[0], dtype=bool)

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n(self) -> int:
        return self.increments.shape[1]

    @property
    def times(self) -> np.ndarray:
        """Left end points of the steps."""
        return self.t0 + self.dt * np.arange(self.steps)

    def cumulative(self) -> np.ndarray:
        """``Z - Z(t0)`` at ``t0, t0 + dt, ..., t0 + K dt``."""
        out = np.zeros((self.steps + 1, self.n))
        out[1:] = np.cumsum(np.where(self.valid[:, None], self.increments, 0.0), axis=0)
        return out

    def coarsen(self, factor: int) -> "DriverPath":
        """Sum blocks of ``factor`` consecutive increments."""
        K = (self.steps // factor) * factor
        inc = self.increments[:K].reshape(-1, factor, self.n).sum(axis=1)
        val = self.valid[:K].reshape(-1, factor).all(axis=1)
        return DriverPath(self.t0, self.dt * factor, inc, self.seed, self.spec, val)


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == S`` for a symmetric positive semi-definite ``S``."""
    S = np.atleast_2d(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for replicate ``index`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _levy_increments(spec: DriverSpec, dt: float, K: int, rng: np.random.Generator) -> np.ndarray:
    n = spec.n
    if spec.kind == "brownian":
        w = rng.standard_normal((K, n)) @ psd_sqrt(spec.corr).T
        return spec.mu * dt + math.sqrt(dt) * spec.sigma * w
    if spec.kind == "compound_poisson":
        counts = rng.poisson(spec.rate * dt, size=(K, n))
        # a sum of N iid normals is normal with mean N mu and variance N sigma^2
        z = rng.standard_normal((K, n))
        return counts * spec.jump_mu + np.sqrt(counts) * spec.jump_sigma * z
    if spec.kind == "gamma_difference":
        up = rng.gamma(spec.shape * dt, spec.scale, size=(K, n))
        down = rng.gamma(spec.shape * dt, spec.scale, size=(K, n))
        return up - down
    raise ValueError(f"{spec.kind} is not a Levy driver")


def gen_levy(spec: DriverSpec, t0: float, dt: float, K: int, seed: int,
             path_index: int = 0) -> DriverPath:
    """Levy increments on ``K`` steps of length ``dt`` starting at ``t0``."""
    if spec.kind == "fractional":
        raise ValueError("use gen_fractional for fractional drivers")
    if dt <= 0 or K < 0:
        raise ValueError("need dt > 0 and K >= 0")
    inc = _levy_increments(spec, dt, K, stream(seed, path_index))
    return DriverPath(t0, dt, inc, seed, spec)


def frac_integrate(values, beta: float, dt: float) -> np.ndarray:
    """Right-sided Riemann-Liouville integral of a piecewise-constant function.

    ``values[j]`` is the value on the cell ``(t_j, t_(j+1)]``, ``t_j = j dt``,
    and the function vanishes past the last cell. Returns the integral at
    ``t_0, ..., t_(K-1)``: the power kernel is integrated exactly over each
    cell, with weight ``((k+1)^beta - k^beta) dt^beta / Gamma(beta+1)`` for the
    cell ``k`` steps ahead.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    v = np.asarray(values, dtype=float)
    K = v.shape[0]
    k = np.arange(K, dtype=float)
    w = ((k + 1) ** beta - k ** beta) * dt ** beta / gamma(beta + 1)
    if v.ndim == 1:
        return fftconvolve(v[::-1], w)[:K][::-1]
    out = np.empty_like(v)
    for c in range(v.shape[1]):
        out[:, c] = fftconvolve(v[::-1, c], w)[:K][::-1]
    return out


def fractional_step_weights(beta: float, dt: float, count: int) -> np.ndarray:
    """Weights ``w_d`` of base increment ``d`` steps back in one fractional increment.

    ``w_d`` is the cell average of ``[(t_(k+1)-u)_+^beta - (t_k-u)_+^beta] /
    Gamma(1+beta)`` over the base cell ``d`` steps before ``t_k``, i.e. the
    right-sided fractional integral of the step's indicator averaged over the
    cell. The power is integrated in closed form.
    """
    d = np.arange(count, dtype=float)
    phi = lambda x: np.clip(x, 0.0, None) ** (beta + 1)
    return dt ** beta * (phi(d + 1) - 2 * phi(d) + phi(d - 1)) / gamma(beta + 2)


def gen_fractional(spec: DriverSpec, t0: float, dt: float, K: int, seed: int,
                   path_index: int = 0) -> DriverPath:
    """Fractional increments from a truncated Riemann-Liouville moving average.

    Base increments are simulated on ``[t0 - history, t0 + K dt]`` and each
    fractional increment is the weighted sum of all base increments up to its
    own step. The truncation drops the base noise before ``t0 - history``.
    """
    if spec.kind != "fractional":
        raise ValueError("gen_fractional needs a fractional spec")
    if dt <= 0 or K < 1:
        raise ValueError("need dt > 0 and K >= 1")
    history = spec.history if spec.history is not None else 64.0 * K * dt
    H = int(math.ceil(history / dt))
    base = _levy_increments(spec.base, dt, H + K, stream(seed, path_index))
    out = np.empty((K, spec.n))
    for c in range(spec.n):
        w = fractional_step_weights(spec.beta[c], dt, H + K)
        out[:, c] = fftconvolve(base[:, c], w)[H:H + K]
    return DriverPath(t0, dt, out, seed, spec)


def gen_driver(spec: DriverSpec, t0: float, dt: float, K: int, seed: int,
               path_index: int = 0) -> DriverPath:
    if spec.kind == "fractional":
        return gen_fractional(spec, t0, dt, K, seed, path_index)
    return gen_levy(spec, t0, dt, K, seed, path_index)


def fractional_variance(beta: float, t: float, sigma: float = 1.0) -> float:
    """``Var(Z_t - Z_0)`` of the untruncated fractional Brownian driver."""
    # int [(t-u)_+^b - (-u)_+^b]^2 du = t^(2b+1) [1/(2b+1) + int_0^inf ((1+x)^b - x^b)^2 dx]
    from scipy.integrate import quad

    tail, _ = quad(lambda x: ((1 + x) ** beta - x ** beta) ** 2, 0, np.inf, limit=400)
    return sigma ** 2 * t ** (2 * beta + 1) * (1 / (2 * beta + 1) + tail) / gamma(1 + beta) ** 2
