"""Command-line front end.

    reflected-ldp <command> [--config cfg.json] [--out DIR|FILE] [--seed S] [--threads n]

Commands: simulate, fluid, equilibria, separatrix, rate, check-assumptions,
verify {lln, ldp-lower, ldp-upper, poisson-tail}.

Every run writes its outputs plus ``manifest.json`` (version, resolved
configuration, seed, timestamps, file inventory with sha256).  Exit status
is 0 on success, 1 when a verdict fails and 2 on usage or configuration
errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import typing
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__

SEED_ENV = "LDP_SEED"

SIV_SPLIT_MU = 0.02  # mu used when only mu+gamma and mu+theta are given


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending key path."""


# --------------------------------------------------------------------------
# schema

@dataclass(frozen=True)
class Tolerances:
    integrator: float = 1e-10
    feasibility: float = 1e-9


@dataclass(frozen=True)
class SimulateSection:
    N: int = 1000
    T: float = 5.0
    start: Optional[tuple[float, ...]] = None
    reflected: bool = True
    replicates: int = 1


@dataclass(frozen=True)
class FluidSection:
    start: tuple[float, ...] = (0.3, 0.3)
    T: float = 50.0
    n_out: int = 1001
    backward: bool = False


@dataclass(frozen=True)
class SeparatrixSection:
    offset: float = 1e-6
    t_max: float = 2000.0
    n_vertices: int = 1000


@dataclass(frozen=True)
class DomainSection:
    z0: Optional[tuple[float, ...]] = None
    grid_step: float = 0.01


@dataclass(frozen=True)
class RateSection:
    path: Optional[str] = None
    rel_change: float = 1e-6
    max_refinements: int = 8


@dataclass(frozen=True)
class AssumptionsSection:
    curve: Optional[str] = None
    lyapunov_N: int = 200
    grid_step: float = 0.01
    a_grid: tuple[float, ...] = (1e-8, 1e-7, 1e-6)
    sector_samples: int = 200
    basin_points: int = 50


@dataclass(frozen=True)
class ExperimentSection:
    """Monte Carlo settings; model, seed, threads and nu come from the top level.

    K also comes from the top level unless set here."""
    N_schedule: tuple[int, ...] = (100, 1000, 10000)
    replicates: int = 200
    T: float = 5.0
    delta: float = 0.1
    eps: float = 0.25
    eps_grid: tuple[float, ...] = ()
    a: Optional[float] = None
    start: Optional[tuple[float, ...]] = None
    start_shift: float = 0.0
    target: dict = field(default_factory=dict)
    reflected: bool = True
    threshold: float = 0.05
    s: float = 0.5
    eta: float = 0.25
    N_fixed: Optional[int] = None
    fixed_replicates: int = 2000
    ref_points: int = 4001
    K: Optional[float] = None


@dataclass(frozen=True)
class PoissonTailSection:
    sigma: Optional[float] = None
    eps_grid: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    N_grid: tuple[int, ...] = (100, 1000)
    s: float = 1.0


EXPERIMENT_DEFAULTS = {
    "lln": dict(N_schedule=(100, 1000, 10000), replicates=200, T=5.0, threshold=0.05,
                reflected=False),
    "ldp_lower": dict(N_schedule=(50, 100, 200), replicates=100_000, T=0.5, delta=0.045,
                      target={"kind": "backward_fluid", "point": [0.14, 0.76]}),
    # a = h(g(eps)) with K = 0.02 keeps the shifted start well inside the domain
    "ldp_upper": dict(N_schedule=(10, 15, 20, 25, 30), replicates=1_000_000, T=0.5, eps=0.25,
                      eps_grid=(0.25, 0.05, 0.01), N_fixed=2000, fixed_replicates=2000,
                      s=0.5, eta=0.25, K=0.02),
}


@dataclass(frozen=True)
class VerifySection:
    lln: ExperimentSection = field(default_factory=lambda: ExperimentSection(**EXPERIMENT_DEFAULTS["lln"]))
    ldp_lower: ExperimentSection = field(
        default_factory=lambda: ExperimentSection(**EXPERIMENT_DEFAULTS["ldp_lower"]))
    ldp_upper: ExperimentSection = field(
        default_factory=lambda: ExperimentSection(**EXPERIMENT_DEFAULTS["ldp_upper"]))
    poisson_tail: PoissonTailSection = field(default_factory=PoissonTailSection)


@dataclass(frozen=True)
class Config:
    model: str = "s0is1"
    params: dict = field(default_factory=dict)
    seed: int = 2024
    threads: Optional[int] = None
    K: float = 1.0
    nu: float = 0.25
    tolerances: Tolerances = field(default_factory=Tolerances)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    fluid: FluidSection = field(default_factory=FluidSection)
    separatrix: SeparatrixSection = field(default_factory=SeparatrixSection)
    domain: DomainSection = field(default_factory=DomainSection)
    rate: RateSection = field(default_factory=RateSection)
    assumptions: AssumptionsSection = field(default_factory=AssumptionsSection)
    verify: VerifySection = field(default_factory=VerifySection)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def model_params(self):
        from .model_core import S0is1Params, SivParams
        cls = SivParams if self.model == "siv" else S0is1Params
        return cls(**self.params)

    def network(self):
        from .model_core import build_model
        return build_model(self.model, self.model_params())

    def experiment(self, kind: str):
        from .ldp_verify import ExperimentConfig
        sec = getattr(self.verify, kind)
        kw = dataclasses.asdict(sec)
        K = kw.pop("K")
        return ExperimentConfig(model=self.model, params=dict(self.params), master_seed=self.seed,
                                threads=self.threads or 1, K=self.K if K is None else K,
                                nu=self.nu, **kw)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


# --------------------------------------------------------------------------
# parsing

def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if value is None:
            return None
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {value!r}")
        return dict(value)
    raise ConfigError(f"{path}: unsupported field type {tp!r}")


def _build(cls, data, path: str, defaults: Optional[dict] = None):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"{where}: unknown key (allowed: {', '.join(sorted(names))})")
    kw = dict(defaults or {})
    for key, value in data.items():
        kw[key] = _coerce(hints[key], value, f"{path}.{key}" if path else key)
    return cls(**kw)


_POSITIVE = {
    "simulate": ("N", "T", "replicates"), "fluid": ("T", "n_out"),
    "separatrix": ("offset", "t_max", "n_vertices"), "domain": ("grid_step",),
    "rate": ("rel_change",), "assumptions": ("lyapunov_N", "grid_step", "sector_samples", "basin_points"),
    "tolerances": ("integrator", "feasibility"),
}


def _resolve_params(model: str, raw: dict) -> dict:
    from .model_core import S0is1Params, SivParams
    if not isinstance(raw, dict):
        raise ConfigError("params: expected a mapping")
    for key, v in raw.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"params.{key}: expected a finite number, got {v!r}")
        if v < 0:
            raise ConfigError(f"params.{key}: rates must be nonnegative, got {v!r}")
    if model == "s0is1":
        allowed = {f.name for f in dataclasses.fields(S0is1Params)}
        base = S0is1Params.fitted().to_dict()
    else:
        allowed = {f.name for f in dataclasses.fields(SivParams)} | {"mu_gamma", "mu_theta"}
        base = SivParams.fitted().to_dict()
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"params.{key}: unknown parameter for model {model!r} "
                              f"(allowed: {', '.join(sorted(allowed))})")
    out = dict(base)
    out.update({k: float(v) for k, v in raw.items() if k not in ("mu_gamma", "mu_theta")})
    if model == "siv":
        if "mu" not in raw and ("mu_gamma" in raw or "mu_theta" in raw):
            out["mu"] = SIV_SPLIT_MU
        for agg, part in (("mu_gamma", "gamma"), ("mu_theta", "theta")):
            if agg in raw:
                if part in raw:
                    raise ConfigError(f"params.{agg}: give either {agg} or {part}, not both")
                # decimal subtraction, so 0.05 - 0.02 is 0.03 and the sum restores 0.05
                val = float(Fraction(repr(float(raw[agg]))) - Fraction(repr(out["mu"])))
                if val < 0:
                    raise ConfigError(f"params.{agg}: must be at least mu = {out['mu']}")
                out[part] = val
        if out["chi"] > 1:
            raise ConfigError("params.chi: must lie in [0, 1]")
    return out


def parse_config(text: str) -> Config:
    """JSON text to a validated Config with every default filled in."""
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: malformed JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    data = dict(data)
    model = data.get("model", "s0is1")
    if model not in ("siv", "s0is1"):
        raise ConfigError(f"model: unknown model {model!r} (allowed: s0is1, siv)")
    data["params"] = _resolve_params(model, data.get("params", {}))
    verify = data.pop("verify", {})
    cfg = _build(Config, data, "")
    if not isinstance(verify, dict):
        raise ConfigError("verify: expected a mapping")
    vnames = {f.name for f in dataclasses.fields(VerifySection)}
    sections = {}
    for key, sub in verify.items():
        if key not in vnames:
            raise ConfigError(f"verify.{key}: unknown key (allowed: {', '.join(sorted(vnames))})")
        if key == "poisson_tail":
            sections[key] = _build(PoissonTailSection, sub, f"verify.{key}")
        else:
            sections[key] = _build(ExperimentSection, sub, f"verify.{key}", EXPERIMENT_DEFAULTS[key])
    cfg = dataclasses.replace(cfg, verify=VerifySection(**sections))
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads: must be >= 1")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    if cfg.K <= 0:
        raise ConfigError("K: must be positive")
    if not 0 < cfg.nu < 0.5:
        raise ConfigError("nu: must lie in (0, 1/2)")
    for sec, keys in _POSITIVE.items():
        obj = getattr(cfg, sec)
        for k in keys:
            if getattr(obj, k) <= 0:
                raise ConfigError(f"{sec}.{k}: must be positive")
    for name in ("lln", "ldp_lower", "ldp_upper"):
        sec: ExperimentSection = getattr(cfg.verify, name)
        p = f"verify.{name}"
        if not sec.N_schedule or any(n < 1 for n in sec.N_schedule):
            raise ConfigError(f"{p}.N_schedule: needs positive integers")
        for k in ("replicates", "T", "delta", "eps", "ref_points"):
            if getattr(sec, k) <= 0:
                raise ConfigError(f"{p}.{k}: must be positive")
        if sec.K is not None and sec.K <= 0:
            raise ConfigError(f"{p}.K: must be positive")
        if not 0 < sec.eps < 1 or any(not 0 < e < 1 for e in sec.eps_grid):
            raise ConfigError(f"{p}.eps: must lie in (0, 1)")
    pt = cfg.verify.poisson_tail
    if pt.sigma is not None and pt.sigma <= 0:
        raise ConfigError("verify.poisson_tail.sigma: must be positive")
    if any(not 0 < e < 1 for e in pt.eps_grid):
        raise ConfigError("verify.poisson_tail.eps_grid: entries must lie in (0, 1)")
    if any(n < 1 for n in pt.N_grid):
        raise ConfigError("verify.poisson_tail.N_grid: entries must be positive")


# --------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class RunManifest:
    version: str
    command: list
    config: dict
    seed: int
    started: str
    finished: str
    files: dict  # relative name -> sha256

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


MANIFEST_KEYS = {"version", "command", "config", "files"}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class _Outputs:
    """Resolves ``--out`` (a directory, or a file whose parent is the directory)
    and records every file written."""

    def __init__(self, out: Optional[str], default_name: str):
        p = Path(out) if out else Path(".")
        if p.suffix in (".json", ".csv"):
            self.dir, self.main = p.parent, p.name
        else:
            self.dir, self.main = p, default_name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def write(self, name: Optional[str], text: str) -> Path:
        path = self.dir / (name or self.main)
        path.write_text(text)
        self.written.append(path)
        return path

    def sibling(self, suffix: str) -> str:
        return Path(self.main).stem + suffix


def _dump(obj) -> str:
    return json.dumps(_plain_json(obj), indent=2, sort_keys=True) + "\n"


def _plain_json(obj):
    if isinstance(obj, dict):
        return {str(k): _plain_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain_json(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return obj


# --------------------------------------------------------------------------
# commands

def _domain(cfg: Config, eq=None):
    from .boundary import build_domain, compute_separatrix
    from .fluid import equilibria
    net = cfg.network()
    eq = eq or equilibria(cfg.model, cfg.model_params())
    if eq.endemic_unstable is None:
        raise ConfigError("params: the model has no saddle equilibrium, no separatrix to compute")
    sp = cfg.separatrix
    curve = compute_separatrix(net, eq.endemic_unstable, offset=sp.offset, t_max=sp.t_max,
                               n_vertices=sp.n_vertices, tol=cfg.tolerances.integrator)
    dom = build_domain(curve, cfg.model, cfg.model_params(), z0=cfg.domain.z0,
                       grid_step=cfg.domain.grid_step)
    return curve, dom


def cmd_equilibria(cfg: Config, out: _Outputs) -> int:
    from .fluid import equilibria, jacobian
    net = cfg.network()
    eq = equilibria(cfg.model, cfg.model_params())
    lin = {}
    for name in ("dfe", "endemic_stable", "endemic_unstable"):
        z = getattr(eq, name)
        if z is not None:
            L = jacobian(net, z, step=None)
            lin[name] = {"eigenvalues_real": L.eigenvalues.real, "eigenvalues_imag": L.eigenvalues.imag,
                         "kind": L.kind}
    out.write(None, _dump({"model": cfg.model, "params": cfg.params, **eq.to_dict(), "linearization": lin}))
    return 0


def cmd_fluid(cfg: Config, out: _Outputs) -> int:
    from .fluid import integrate, integrate_backward
    net = cfg.network()
    f = cfg.fluid
    run = integrate_backward if f.backward else integrate
    sol = run(net, f.start, f.T, tol=cfg.tolerances.integrator)
    t = np.linspace(0.0, f.T, f.n_out)
    z = sol(t)
    lines = ["t," + ",".join(f"z{i + 1}" for i in range(net.d))]
    lines += [",".join(repr(float(v)) for v in (ti, *zi)) for ti, zi in zip(t, z)]
    out.write(None, "\n".join(lines) + "\n")
    return 0


def cmd_simulate(cfg: Config, out: _Outputs) -> int:
    from .fluid import equilibria
    from .simulate import diagnostics, simulate_free, simulate_reflected
    net = cfg.network()
    s = cfg.simulate
    eq = equilibria(cfg.model, cfg.model_params())
    start = s.start if s.start is not None else eq.endemic_stable
    dom = _domain(cfg, eq)[1] if s.reflected else None
    report = []
    for r in range(s.replicates):
        if s.reflected:
            path = simulate_reflected(net, dom, s.N, start, s.T, cfg.seed, replicate=r)
        else:
            path = simulate_free(net, s.N, start, s.T, cfg.seed, replicate=r)
        name = out.main if s.replicates == 1 else out.sibling(f"_{r:04d}.csv")
        out.write(name, path.to_csv())
        report.append({"replicate": r, "file": name, "n_events": path.n_events,
                       "suppressed": int((~path.applied).sum()),
                       **diagnostics(path, net, dom).to_dict()})
    out.write(out.sibling("_diagnostics.json"), _dump({"replicates": report}))
    return 0


def cmd_separatrix(cfg: Config, out: _Outputs) -> int:
    curve, dom = _domain(cfg)
    out.write(None, curve.to_csv())
    out.write(out.sibling("_domain.json"), dom.to_json() + "\n")
    return 0


def cmd_rate(cfg: Config, out: _Outputs, path_file: Optional[str]) -> int:
    from .rate import PiecewisePath, path_rate
    src = path_file or cfg.rate.path
    if not src:
        raise ConfigError("rate.path: an input path CSV (t,z1,...,zd) is required")
    rows = np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
    net = cfg.network()
    if rows.shape[1] != net.d + 1:
        raise ConfigError(f"rate.path: expected columns t,z1..z{net.d}, got {rows.shape[1]}")
    phi = PiecewisePath(rows[:, 0], rows[:, 1:])
    rep = path_rate(net, phi, rel_change=cfg.rate.rel_change, max_refinements=cfg.rate.max_refinements)
    out.write(None, _dump(rep.to_dict()))
    return 0


def cmd_check_assumptions(cfg: Config, out: _Outputs, curve_file: Optional[str]) -> int:
    from .boundary import (BoundaryCurve, build_domain, check_ca_bound, check_lyapunov,
                           check_rate_monotonicity, check_sector_condition, check_star_shape,
                           separatrix_basin_test)
    from .fluid import equilibria
    net = cfg.network()
    eq = equilibria(cfg.model, cfg.model_params())
    a = cfg.assumptions
    src = curve_file or a.curve
    if src:
        curve = BoundaryCurve.from_csv(src, tag=cfg.model)
        dom = build_domain(curve, cfg.model, cfg.model_params(), z0=cfg.domain.z0,
                           grid_step=cfg.domain.grid_step)
    else:
        curve, dom = _domain(cfg, eq)
    star = check_star_shape(dom)
    c2 = star["shift_constants"]["c2"]
    reports = {
        "star_shape": star.to_dict(),
        "rate_monotonicity": check_rate_monotonicity(net, dom, grid_step=a.grid_step).to_dict(),
        "ca_bound": check_ca_bound(net, dom, cfg.nu, a.a_grid, c2).to_dict(),
        "lyapunov": check_lyapunov(None, net, dom, a.lyapunov_N, grid_step=a.grid_step).to_dict(),
        "basin": separatrix_basin_test(net, curve, dom, eq.endemic_stable, eq.dfe, n_points=a.basin_points),
    }
    if cfg.model == "s0is1":
        reports["sector"] = check_sector_condition(net, curve, n_samples=a.sector_samples).to_dict()
    passed = all(r["passed"] for r in reports.values())
    out.write(None, _dump({"passed": passed, "z0": dom.z0, "reports": reports}))
    return 0 if passed else 1


VERIFY_KINDS = {"lln": "lln", "ldp-lower": "ldp_lower", "ldp-upper": "ldp_upper",
                "poisson-tail": "poisson_tail"}


def cmd_verify(cfg: Config, out: _Outputs, kind: str) -> int:
    from . import ldp_verify as lv
    key = VERIFY_KINDS[kind]
    if key == "poisson_tail":
        pt = cfg.verify.poisson_tail
        sigma = pt.sigma if pt.sigma is not None else cfg.network().sigma
        res = lv.poisson_tail_check(sigma, pt.eps_grid, pt.N_grid, s=pt.s, K=cfg.K)
    else:
        exp = cfg.experiment(key)
        run = {"lln": lv.verify_lln, "ldp_lower": lv.estimate_tube_probability,
               "ldp_upper": lv.verify_upper_machinery}[key]
        res = run(exp)
    out.write(None, res.to_json() + "\n")
    out.write(out.sibling(".csv"), res.to_csv())
    return 0 if res.passed else 1


# --------------------------------------------------------------------------
# dispatch

COMMANDS = ("simulate", "fluid", "equilibria", "separatrix", "rate", "check-assumptions", "verify")
DEFAULT_NAMES = {"simulate": "path.csv", "fluid": "fluid.csv", "equilibria": "equilibria.json",
                 "separatrix": "curve.csv", "rate": "rate.json", "check-assumptions": "assumptions.json",
                 "verify": "result.json"}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file, or the manifest.json of a run to replay")
    common.add_argument("--out", help="output directory, or output file inside it")
    common.add_argument("--seed", type=int, help="master seed (overrides config and $LDP_SEED)")
    common.add_argument("--threads", type=int, help="worker threads (default: available cores)")
    common.add_argument("--model", choices=("s0is1", "siv"), help="model (overrides config)")
    p = argparse.ArgumentParser(prog="reflected-ldp", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "rate":
            sp.add_argument("--path", help="input path CSV with header t,z1,...,zd")
        if name == "check-assumptions":
            sp.add_argument("--curve", help="boundary CSV (u,z1,z2) instead of recomputing")
        if name == "verify":
            sp.add_argument("kind", choices=tuple(VERIFY_KINDS))
    return p


def _load(args) -> Config:
    text = Path(args.config).read_text() if args.config else "{}"
    data = json.loads(text) if text.strip() else {}
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    if MANIFEST_KEYS <= data.keys():
        # a manifest of an earlier run: replay its resolved configuration
        data = dict(data["config"])
    if args.model and args.model != data.get("model", args.model):
        data = {k: v for k, v in data.items() if k != "params"}
    if args.model:
        data["model"] = args.model
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            data["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"${SEED_ENV}: expected an integer, got {env!r}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    data["threads"] = args.threads if args.threads is not None else data.get("threads") or os.cpu_count() or 1
    return parse_config(json.dumps(data))


def dispatch(argv: Optional[list] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    started = _now()
    try:
        cfg = _load(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = _Outputs(args.out, DEFAULT_NAMES[args.command])
    try:
        if args.command == "equilibria":
            code = cmd_equilibria(cfg, out)
        elif args.command == "fluid":
            code = cmd_fluid(cfg, out)
        elif args.command == "simulate":
            code = cmd_simulate(cfg, out)
        elif args.command == "separatrix":
            code = cmd_separatrix(cfg, out)
        elif args.command == "rate":
            code = cmd_rate(cfg, out, args.path)
        elif args.command == "check-assumptions":
            code = cmd_check_assumptions(cfg, out, args.curve)
        else:
            code = cmd_verify(cfg, out, args.kind)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = RunManifest(version=__version__, command=argv, config=cfg.to_dict(), seed=cfg.seed,
                           started=started, finished=_now(),
                           files={p.name: _sha256(p) for p in out.written})
    (out.dir / "manifest.json").write_text(manifest.to_json() + "\n")
    return code


def main(argv: Optional[list] = None) -> int:
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
