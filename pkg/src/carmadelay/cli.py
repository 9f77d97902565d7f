"""
Command-line front end.

    carmadelay COMMAND CONFIG [--set section.key=value ...]

Commands: check, kernel, simulate, recover, predict, selftest. The config is an
INI file with sections ``[model]``, ``[driver]``, ``[grid]`` and ``[task]``;
unknown sections or keys are rejected. Matrices are written row-major as
whitespace- or comma-separated numbers.

Exit codes: 0 ok, 2 config error, 3 hypothesis violation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
import traceback

import numpy as np

from . import engine, kernels
from .drivers import DriverPath, DriverSpec, gen_driver
from .kernels import CarmaModel, HypothesisViolation
from .msdde import SampledKernel, kernel_fft, nest, write_kernel_csv
from .stability import msdde_char_scan

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 2, 3, 4
DEFAULT_SEED = 20240611

COMMANDS = ("check", "kernel", "simulate", "recover", "predict", "selftest")

# key -> default (None means required when the command needs the section)
GRID_KEYS = {"t0": "0.0", "dt": "0.00390625", "K": "25600", "burn_in": "auto"}
TASK_KEYS = {"seed": str(DEFAULT_SEED), "tol": "1e-8", "output": None, "input": None,
             "truth": None, "horizon": "2.0", "lead_step": "auto", "mean_rate": "auto",
             "method": "auto", "kernel_horizon": "auto", "fft_check": "yes",
             "full": "no", "write_driver": None}
DRIVER_KEYS = {"kind": "brownian", "mu": None, "sigma": None, "corr": None, "rate": None,
               "jump_mu": None, "jump_sigma": None, "shape": None, "scale": None,
               "beta": None, "history": None}


class ConfigError(ValueError):
    pass


def _numbers(text: str, key: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.replace(",", " ").split()], dtype=float)
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from None


def _matrix(text: str, key: str, n: int) -> np.ndarray:
    v = _numbers(text, key)
    if v.size != n * n:
        raise ConfigError(f"{key}: expected {n * n} entries for an {n}x{n} matrix, got {v.size}")
    return v.reshape(n, n)


def _vector(text: str, key: str, n: int) -> np.ndarray:
    v = _numbers(text, key)
    if v.size == 1 and n > 1:
        v = np.full(n, v[0])
    if v.size != n:
        raise ConfigError(f"{key}: expected {n} entries, got {v.size}")
    return v


class RunConfig:
    """Parsed and validated configuration; ``lines()`` renders the resolved form."""

    def __init__(self, parser: configparser.ConfigParser):
        known = {"model", "driver", "grid", "task"}
        for sec in parser.sections():
            if sec not in known:
                raise ConfigError(f"unknown section [{sec}]")
        self.raw = {s: dict(parser[s]) if parser.has_section(s) else {} for s in known}
        self._parse_model()
        self._parse_driver()
        self._parse_grid()
        self._parse_task()
        if self.raw["driver"]:
            self.driver_spec()

    # model
    def _parse_model(self):
        sec = self.raw["model"]
        if not sec:
            self.model_given = False
            return
        self.model_given = True
        for key in ("n", "p", "q"):
            if key not in sec:
                raise ConfigError(f"model.{key}: missing")
        try:
            n, p, q = int(sec["n"]), int(sec["p"]), int(sec["q"])
        except ValueError:
            raise ConfigError("model.n, model.p, model.q must be integers") from None
        if n < 1 or p < 1 or not 0 <= q < p:
            raise ConfigError("model: need n >= 1, p >= 1 and 0 <= q < p")
        allowed = {"n", "p", "q"} | {f"a{i}" for i in range(1, p + 1)} | {f"b{j}" for j in range(q)}
        for key in sec:
            if key not in allowed:
                raise ConfigError(f"model.{key}: unknown key for p = {p}, q = {q}")
        for key in sorted(allowed - {"n", "p", "q"}):
            if key not in sec:
                raise ConfigError(f"model.{key.upper()}: missing")
        self.n, self.p, self.q = n, p, q
        self.A = [_matrix(sec[f"a{i}"], f"model.A{i}", n) for i in range(1, p + 1)]
        self.B = [_matrix(sec[f"b{j}"], f"model.B{j}", n) for j in range(q)]

    def model(self, check: bool = True) -> CarmaModel:
        if not self.model_given:
            raise ConfigError("[model] section is required for this command")
        return CarmaModel(self.A, self.B, check=check)

    # driver
    def _parse_driver(self):
        sec = self.raw["driver"]
        for key in sec:
            if key not in DRIVER_KEYS:
                raise ConfigError(f"driver.{key}: unknown key")
        self.driver_raw = {k: sec.get(k, v) for k, v in DRIVER_KEYS.items()}

    def driver_spec(self) -> DriverSpec:
        n = self.n if self.model_given else 1
        r = self.driver_raw
        kind = r["kind"]
        vec = {k: _vector(r[k], f"driver.{k}", n) for k in
               ("mu", "sigma", "rate", "jump_mu", "jump_sigma", "shape", "scale", "beta")
               if r[k] is not None}
        corr = _matrix(r["corr"], "driver.corr", n) if r["corr"] is not None else None
        try:
            if kind == "fractional":
                if "mu" in vec and np.any(vec["mu"] != 0):
                    raise ConfigError("driver.mu: fractional drivers need a mean-zero base")
                base = DriverSpec("brownian", n, sigma=vec.get("sigma"), corr=corr)
                hist = float(r["history"]) if r["history"] is not None else None
                return DriverSpec("fractional", n, base=base, beta=vec.get("beta"), history=hist)
            extra = set(vec) - {"brownian": {"mu", "sigma"},
                                "compound_poisson": {"rate", "jump_mu", "jump_sigma"},
                                "gamma_difference": {"shape", "scale"}}.get(kind, set())
            if extra:
                raise ConfigError(f"driver.{sorted(extra)[0]}: not a parameter of kind {kind!r}")
            return DriverSpec(kind, n, corr=corr, **vec)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"driver: {exc}") from None

    # grid
    def _parse_grid(self):
        sec = self.raw["grid"]
        lower = {k.lower(): k for k in GRID_KEYS}
        for key in sec:
            if key not in lower:
                raise ConfigError(f"grid.{key}: unknown key")
        vals = {k: sec.get(k.lower(), v) for k, v in GRID_KEYS.items()}
        try:
            self.t0 = float(vals["t0"])
            self.dt = float(vals["dt"])
            self.K = int(vals["K"])
            self.burn_in = None if vals["burn_in"] == "auto" else float(vals["burn_in"])
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None
        if self.dt <= 0 or self.K < 1:
            raise ConfigError("grid: need dt > 0 and K >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigError("grid.burn_in: must be non-negative")

    # task
    def _parse_task(self):
        sec = self.raw["task"]
        for key in sec:
            if key not in TASK_KEYS:
                raise ConfigError(f"task.{key}: unknown key")
        t = {k: sec.get(k, v) for k, v in TASK_KEYS.items()}
        try:
            self.seed = int(t["seed"])
            self.tol = float(t["tol"])
            self.horizon = float(t["horizon"])
            self.lead_step = None if t["lead_step"] == "auto" else float(t["lead_step"])
            self.kernel_horizon = None if t["kernel_horizon"] == "auto" else float(t["kernel_horizon"])
        except ValueError as exc:
            raise ConfigError(f"task: {exc}") from None
        if self.tol <= 0 or self.horizon < 0:
            raise ConfigError("task: need tol > 0 and horizon >= 0")
        if t["method"] not in ("auto", "statespace", "ma"):
            raise ConfigError("task.method: expected auto, statespace or ma")
        for flag in ("fft_check", "full"):
            if t[flag] not in ("yes", "no"):
                raise ConfigError(f"task.{flag}: expected yes or no")
        self.method = t["method"]
        self.fft_check = t["fft_check"] == "yes"
        self.full = t["full"] == "yes"
        self.mean_rate_raw = t["mean_rate"]
        self.output, self.input, self.truth = t["output"], t["input"], t["truth"]
        self.write_driver = t["write_driver"]

    def mean_rate(self) -> np.ndarray:
        if self.mean_rate_raw == "auto":
            try:
                return self.driver_spec().mean
            except ValueError:
                return np.zeros(self.n)
        return _vector(self.mean_rate_raw, "task.mean_rate", self.n)

    def lines(self) -> list:
        """Resolved configuration as ``[section]`` / ``key = value`` lines."""
        out = []
        if self.model_given:
            out += ["[model]", f"n = {self.n}", f"p = {self.p}", f"q = {self.q}"]
            fmt = lambda M: " ".join(repr(float(x)) for x in np.ravel(M))
            out += [f"A{i + 1} = {fmt(a)}" for i, a in enumerate(self.A)]
            out += [f"B{j} = {fmt(b)}" for j, b in enumerate(self.B)]
        out.append("[driver]")
        out += [f"{k} = {v}" for k, v in self.driver_raw.items() if v is not None]
        out += ["[grid]", f"t0 = {self.t0!r}", f"dt = {self.dt!r}", f"K = {self.K}",
                f"burn_in = {'auto' if self.burn_in is None else repr(self.burn_in)}"]
        out += ["[task]", f"seed = {self.seed}", f"tol = {self.tol!r}", f"horizon = {self.horizon!r}",
                f"lead_step = {'auto' if self.lead_step is None else repr(self.lead_step)}",
                f"mean_rate = {self.mean_rate_raw}", f"method = {self.method}",
                f"kernel_horizon = {'auto' if self.kernel_horizon is None else repr(self.kernel_horizon)}"]
        for key in ("input", "output", "truth", "write_driver"):
            val = getattr(self, key)
            if val is not None:
                out.append(f"{key} = {val}")
        return out


def load_config(path: str, overrides=()) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str.lower
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        left, value = item.split("=", 1)
        section, key = left.strip().split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][key.lower()] = value.strip()
    return RunConfig(parser)


def _need(value, key):
    if value is None:
        raise ConfigError(f"task.{key}: required for this command")
    return value


def _target(value, key):
    """Output path from ``task.<key>``, creating its directory."""
    path = _need(value, key)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _header(cfg: RunConfig, command: str, extra=()) -> list:
    return [f"command = {command}"] + cfg.lines() + list(extra)


def _burn_in(cfg: RunConfig, model: CarmaModel) -> float:
    if cfg.burn_in is not None:
        return cfg.burn_in
    T = kernels.truncation_horizon(model, cfg.tol, step=cfg.dt)
    return cfg.dt * int(np.ceil(T / cfg.dt))


# commands

def cmd_check(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    model = cfg.model(check=False)
    ok = model.P_report.passed
    print(f"causality (det P(z) != 0 for Re z >= 0): {model.P_report}", file=out)
    if model.q:
        print(f"invertibility (det Q(z) != 0 for Re z >= 0): {model.Q_report}", file=out)
        ok = ok and model.Q_report.passed
    else:
        print("invertibility: not applicable (q = 0)", file=out)
    for j, Cj in enumerate(model.C):
        print(f"C_{j} = {_fmt(Cj)}", file=out)
    for j, Ej in enumerate(model.E):
        print(f"E_{j + 1} = {_fmt(Ej)}", file=out)
    for j, Fj in enumerate(model.F):
        print(f"F_{j + 1} = {_fmt(Fj)}", file=out)
    if ok:
        eta = nest(model.delay_system())
        dmin, ymin = msdde_char_scan(eta)
        print(f"min |det h(iy)| on scan grid = {dmin:.6g} at y = {ymin:.6g}", file=out)
        print(f"decay rate = {model.decay:.6g}, decay constant = {model.decay_constant:.6g}", file=out)
        print("all hypotheses hold", file=out)
        return EXIT_OK
    failed = []
    if not model.P_report.passed:
        failed.append("causality of P")
    if model.q and not model.Q_report.passed:
        failed.append("invertibility of Q")
    print("hypothesis violated: " + ", ".join(failed), file=out)
    return EXIT_HYPOTHESIS


def _fmt(M) -> str:
    return " ".join(f"{float(x):.12g}" for x in np.ravel(M))


def cmd_kernel(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    model = cfg.model()
    outdir = _need(cfg.output, "output")
    os.makedirs(outdir, exist_ok=True)
    T = cfg.kernel_horizon or kernels.truncation_horizon(model, cfg.tol, step=cfg.dt)
    head = _header(cfg, "kernel", [f"truncation T = {T!r}"])
    g = kernels.sample_gtilde(model, cfg.dt, T)
    write_kernel_csv(os.path.join(outdir, "gtilde.csv"), g, head, name="gtilde")
    written = ["gtilde.csv"]
    f = kernels.sample_f(model, cfg.dt, T)
    if f is not None:
        write_kernel_csv(os.path.join(outdir, "f.csv"), f, head, name="f")
        written.append("f.csv")
    for j in range(1, model.m + 1):
        vals = kernels.gtilde_j_many(model, j, g.times)
        gj = SampledKernel(cfg.dt, vals, vals[0].copy())
        write_kernel_csv(os.path.join(outdir, f"gtilde_{j}.csv"), gj, head, name=f"gtilde{j}")
        written.append(f"gtilde_{j}.csv")
    if cfg.fft_check:
        gf = kernel_fft(nest(model.delay_system()), step=cfg.dt)
        L = min(g.values.shape[0], gf.values.shape[0])
        n = model.n
        err = float(np.abs(gf.values[:L, :n, (model.m - 1) * n:] - g.values[:L]).max())
        print(f"max |closed form - FFT| = {err:.3e}", file=out)
    print(f"wrote {', '.join(written)} to {outdir} (T = {T:.6g})", file=out)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    model = cfg.model()
    spec = cfg.driver_spec()
    burn = _burn_in(cfg, model)
    kb = int(round(burn / cfg.dt))
    driver = gen_driver(spec, cfg.t0 - kb * cfg.dt, cfg.dt, cfg.K + kb - 1, cfg.seed)
    method = cfg.method
    if method == "auto":
        method = "statespace" if spec.kind == "brownian" else "ma"
    if method == "statespace":
        path = engine.simulate_statespace(model, driver, kb * cfg.dt)
    else:
        T = cfg.kernel_horizon or kernels.truncation_horizon(model, cfg.tol, step=cfg.dt)
        T = min(T, kb * cfg.dt)
        g = kernels.sample_gtilde(model, cfg.dt, T)
        path = engine.simulate_ma(g, driver, kb * cfg.dt)
    path.states = None
    head = _header(cfg, "simulate", [f"method = {method}", f"burn_in used = {kb * cfg.dt!r}"])
    engine.write_path_csv(_target(cfg.output, "output"), path, head)
    if cfg.write_driver:
        engine.write_driver_csv(_target(cfg.write_driver, "write_driver"), _driver_tail(driver, kb), head)
    print(f"wrote {path.values.shape[0]} samples to {cfg.output} ({method})", file=out)
    return EXIT_OK


def _driver_tail(driver: DriverPath, start: int) -> DriverPath:
    return DriverPath(driver.t0 + start * driver.dt, driver.dt, driver.increments[start:],
                      driver.seed, driver.spec, driver.valid[start:])


def _read_driver_csv(path):
    with open(path) as fh:
        rows = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    data = np.array([[float(x) for x in ln.split(",")] for ln in rows[1:]])
    return data[:, 0], data[:, 1:-1], data[:, -1].astype(bool)


def cmd_recover(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    model = cfg.model()
    path = engine.read_path_csv(_need(cfg.input, "input"))
    T = cfg.kernel_horizon or (kernels.truncation_horizon(model, cfg.tol, step=path.dt) if model.q else None)
    z = engine.recover_noise(model, path, T_f=T, tol=cfg.tol)
    head = _header(cfg, "recover", [f"truncation T_f = {T!r}", f"invalid warm-up steps = {int((~z.valid).sum())}"])
    engine.write_driver_csv(_target(cfg.output, "output"), z, head)
    print(f"recovered {z.steps} increments ({int(z.valid.sum())} valid) to {cfg.output}", file=out)
    if cfg.truth:
        t, inc, _ = _read_driver_csv(cfg.truth)
        idx = np.round((z.times - t[0]) / z.dt).astype(int)
        ok = z.valid & (idx >= 0) & (idx < len(t))
        est, true = z.increments[ok], inc[idx[ok]]
        nrmse = float(np.sqrt(np.mean((est - true) ** 2)) / true.std())
        corr = float(np.corrcoef(est.ravel(), true.ravel())[0, 1])
        print(f"normalized RMSE = {nrmse:.6g}, correlation = {corr:.6g}", file=out)
    return EXIT_OK


def cmd_predict(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    model = cfg.model()
    hist = engine.read_path_csv(_need(cfg.input, "input"))
    step = cfg.lead_step or hist.dt
    lead = step * np.arange(int(round(cfg.horizon / step)) + 1)
    T = cfg.kernel_horizon or (kernels.truncation_horizon(model, cfg.tol, step=hist.dt) if model.q else None)
    res = engine.predict(model, hist, lead, mean_rate=cfg.mean_rate(), T_f=T, tol=cfg.tol)
    head = _header(cfg, "predict", [f"truncation T_f = {T!r}"])
    engine.write_prediction_csv(_target(cfg.output, "output"), res, head)
    print(f"predicted {len(lead)} lead times from s = {res.s:.6g} to {cfg.output}", file=out)
    return EXIT_OK


def cmd_selftest(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    from .acceptance import run_all

    results = run_all(fast=not cfg.full)
    for r in results:
        print(r.line(), file=out)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed", file=out)
    return EXIT_OK if not failed else EXIT_NUMERICAL


HANDLERS = {"check": cmd_check, "kernel": cmd_kernel, "simulate": cmd_simulate,
            "recover": cmd_recover, "predict": cmd_predict, "selftest": cmd_selftest}


def _origin(exc: BaseException) -> str:
    tb = exc.__traceback__
    name = "carmadelay"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("carmadelay.") and mod != __name__:
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="carmadelay", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", nargs="?", help="INI configuration file (optional for selftest)")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a configuration entry")
    ap.add_argument("--traceback", action="store_true", help="show tracebacks on failure")
    args = ap.parse_args(argv)
    try:
        if args.config is None:
            if args.command != "selftest":
                raise ConfigError("a config file is required")
            parser = configparser.ConfigParser(interpolation=None)
            for item in args.set:
                left, value = item.split("=", 1)
                section, key = left.split(".", 1)
                if not parser.has_section(section):
                    parser.add_section(section)
                parser[section][key.lower()] = value
            cfg = RunConfig(parser)
        else:
            cfg = load_config(args.config, args.set)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisViolation as exc:
        print(f"hypothesis violation ({_origin(exc)}): {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        if args.traceback:
            traceback.print_exc()
        print(f"numerical failure ({_origin(exc)}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
