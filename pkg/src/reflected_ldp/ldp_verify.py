"""Monte Carlo harnesses: law of large numbers, tube probabilities against
the rate function, the upper-bound surrogate events, and Poisson tails.

All estimates carry 95% Wilson intervals and verdicts are decided on the
interval endpoints.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import binomtest

from .boundary import DomainSpec, build_domain, compute_separatrix
from .fluid import equilibria, integrate, integrate_backward
from .model_core import ReactionNetwork, S0is1Params, SivParams, build_model
from .rate import (PiecewisePath, batch_control_rate, cramer_rate_poisson, g_eps, h_eps,
                   path_rate, slice_grid)
from .simulate import simulate_batch

CSV_HEADER = ["N", "p_hat", "ci_lo", "ci_hi", "emp_rate", "I_T"]
CHUNK = 20000
SHIFT_SLACK = 1e-3


def wilson(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(int(successes), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _neg_log_rate(p: float, N: int) -> float:
    return -math.log(p) / N if p > 0 else math.inf


def _fin(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "s0is1"
    params: dict = field(default_factory=dict)
    N_schedule: tuple = (100, 1000, 10000)
    replicates: int = 200
    T: float = 5.0
    delta: float = 0.1
    eps: float = 0.25
    eps_grid: tuple = ()
    a: Optional[float] = None
    master_seed: int = 2024
    start: Optional[tuple] = None
    start_shift: float = 0.0
    target: dict = field(default_factory=dict)
    reflected: bool = True
    threshold: float = 0.05
    s: float = 0.5
    eta: float = 0.25
    K: float = 1.0
    nu: float = 0.25
    N_fixed: Optional[int] = None
    fixed_replicates: int = 2000
    ref_points: int = 4001
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if any(int(n) != n or n < 1 for n in self.N_schedule):
            raise ValueError("N_schedule must contain positive integers")

    def network(self) -> ReactionNetwork:
        return build_model(self.model, self.model_params())

    def model_params(self):
        cls = S0is1Params if self.model == "s0is1" else SivParams
        base = cls.fitted().to_dict()
        base.update(self.params)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    kind: str
    rows: list
    verdicts: dict
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())

    def to_dict(self) -> dict:
        return {"kind": self.kind, "passed": self.passed, "verdicts": self.verdicts,
                "rows": [{k: _fin(v) for k, v in r.items()} for r in self.rows],
                "extra": _jsonable(self.extra)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.get("N", ""), *[repr(float(r[c])) if c in r and r[c] is not None else ""
                                          for c in CSV_HEADER[1:]]])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _fin(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# setup helpers

def _setup(cfg: ExperimentConfig):
    net = cfg.network()
    params = cfg.model_params()
    eq = equilibria(cfg.model, params)
    domain = None
    if cfg.reflected:
        curve = compute_separatrix(net, eq.endemic_unstable)
        domain = build_domain(curve, cfg.model, params)
    return net, params, eq, domain


def _start_point(cfg, eq, domain) -> np.ndarray:
    if cfg.start is not None:
        return np.asarray(cfg.start, dtype=float)
    base = eq.endemic_stable
    if cfg.start_shift and domain is not None:
        zt = eq.endemic_unstable
        direction = (domain.z0 - zt) / np.linalg.norm(domain.z0 - zt)
        return zt + cfg.start_shift * direction
    return np.asarray(base, dtype=float)


def _median_ci(x: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    """Distribution-free interval for the median from binomial order statistics."""
    from scipy.stats import binom
    n = x.size
    xs = np.sort(x)
    alpha = 1 - level
    lo = int(binom.ppf(alpha / 2, n, 0.5))
    hi = int(binom.isf(alpha / 2, n, 0.5))
    lo = max(lo - 1, 0)
    hi = min(hi, n - 1)
    return float(xs[lo]), float(xs[hi])


def _chunks(n: int, size: int = CHUNK):
    for lo in range(0, n, size):
        yield range(lo, min(n, lo + size))


# --------------------------------------------------------------------------
# law of large numbers

def verify_lln(cfg: ExperimentConfig) -> ExperimentResult:
    net, params, eq, domain = _setup(cfg)
    z = _start_point(cfg, eq, domain)
    sol = integrate(net, z, cfg.T)
    rt = np.linspace(0.0, cfg.T, cfg.ref_points)
    ref = (rt, sol(rt))
    rows = []
    medians = []
    for N in cfg.N_schedule:
        B = simulate_batch(net, int(N), z, cfg.T, cfg.master_seed + int(N), range(cfg.replicates),
                           domain=domain, reflected=cfg.reflected, reference=ref, threads=cfg.threads)
        d = B.sup_dist
        med = float(np.median(d))
        lo, hi = _median_ci(d)
        succ = int((d < cfg.threshold).sum())
        plo, phi = wilson(succ, d.size)
        rows.append({"N": int(N), "p_hat": succ / d.size, "ci_lo": plo, "ci_hi": phi,
                     "emp_rate": None, "I_T": 0.0, "median": med, "median_ci": [lo, hi],
                     "q05": float(np.quantile(d, 0.05)), "q95": float(np.quantile(d, 0.95)),
                     "occupation_median": float(np.median(B.occupation))})
        medians.append((lo, med, hi))
    decreasing = all(medians[i + 1][2] < medians[i][0] for i in range(len(medians) - 1))
    below = medians[-1][2] < cfg.threshold
    return ExperimentResult("lln", rows, {"median_decreasing": decreasing, "below_threshold": below},
                            {"start": z, "T": cfg.T, "threshold": cfg.threshold})


# --------------------------------------------------------------------------
# tube probabilities (lower bound)

def backward_fluid_path(net: ReactionNetwork, start, duration: float, n: int = 401) -> PiecewisePath:
    """phi' = -b(phi), phi(0) = start: a path climbing against the flow."""
    sol = integrate_backward(net, start, duration)
    t = np.linspace(0.0, duration, n)
    return PiecewisePath(t, sol(t))


def fluid_path(net: ReactionNetwork, start, duration: float, n: int = 401) -> PiecewisePath:
    sol = integrate(net, start, duration)
    t = np.linspace(0.0, duration, n)
    return PiecewisePath(t, sol(t))


def target_path(cfg: ExperimentConfig, net, eq) -> PiecewisePath:
    tgt = dict(cfg.target)
    kind = tgt.get("kind", "fluid")
    point = np.asarray(tgt.get("point", eq.endemic_stable), dtype=float)
    n = int(tgt.get("n", 401))
    if kind == "fluid":
        return fluid_path(net, point, cfg.T, n)
    if kind == "backward_fluid":
        return backward_fluid_path(net, point, cfg.T, n)
    raise ValueError(f"unknown target kind {kind!r}")


def estimate_tube_probability(cfg: ExperimentConfig, phi: Optional[PiecewisePath] = None,
                              I_T: Optional[float] = None) -> ExperimentResult:
    """Fraction of replicates with sup_t |Z(t) - phi(t)| < delta, and the
    empirical rate -(1/N) log p_hat against I_T(phi)."""
    net, params, eq, domain = _setup(cfg)
    if phi is None:
        phi = target_path(cfg, net, eq)
    if abs(phi.T - cfg.T) > 1e-12:
        raise ValueError("target path horizon differs from T")
    if I_T is None:
        I_T = path_rate(net, phi).value
    start = phi.values[0]
    ref = (phi.breakpoints, phi.values)
    rows = []
    for N in cfg.N_schedule:
        succ = 0
        n = 0
        for reps in _chunks(cfg.replicates):
            B = simulate_batch(net, int(N), start, cfg.T, cfg.master_seed + int(N), reps,
                               domain=domain, reflected=cfg.reflected, reference=ref,
                               threshold=cfg.delta, threads=cfg.threads)
            succ += int((~B.exited & (B.sup_dist < cfg.delta)).sum())
            n += len(reps)
        p = succ / n
        lo, hi = wilson(succ, n)
        rows.append({"N": int(N), "p_hat": p, "ci_lo": lo, "ci_hi": hi,
                     "emp_rate": _neg_log_rate(p, N), "I_T": I_T, "successes": succ, "n": n,
                     "rate_ci": [_neg_log_rate(hi, N), _neg_log_rate(lo, N)],
                     "rate_is_lower_bound": succ == 0, "underpowered": succ < 5})
    verdicts = {}
    if I_T > 0 and math.isfinite(I_T):
        last = rows[-1]
        rlo, rhi = last["rate_ci"]
        verdicts["within_30pct_at_largest_N"] = bool(rlo >= 0.7 * I_T and rhi <= 1.3 * I_T)
        gaps = []
        for r in rows:
            rlo, rhi = r["rate_ci"]
            gap = abs(r["emp_rate"] - I_T)
            noise = 0.5 * (rhi - rlo) if math.isfinite(rhi) else math.inf
            gaps.append((gap, noise))
        verdicts["gap_nonincreasing"] = all(
            gaps[i + 1][0] <= gaps[i][0] + gaps[i][1] + gaps[i + 1][1] for i in range(len(gaps) - 1))
    else:
        verdicts["high_probability"] = bool(rows[-1]["ci_lo"] > 0.5)
    return ExperimentResult("ldp_lower", rows, verdicts,
                            {"delta": cfg.delta, "start": start, "T": cfg.T, "I_T": I_T})


# --------------------------------------------------------------------------
# upper-bound machinery

def _fit_slope(N: np.ndarray, y: np.ndarray) -> float:
    A = np.column_stack([N, np.ones_like(N)])
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


def upper_events(cfg: ExperimentConfig, net, domain, z, N: int, eps: float, a: float):
    """Per-replicate I_T(Upsilon|mu), B_eps indicator, suppression flags and the
    smallest distance of the Upsilon grid values to the boundary."""
    n_slices = slice_grid(cfg.T, eps)
    g = g_eps(eps, cfg.K)
    z0 = domain.z0 if domain is not None else np.zeros(net.d)
    I, inB, flagged, mind = [], [], [], []
    for reps in _chunks(cfg.replicates):
        B = simulate_batch(net, N, z, cfg.T, cfg.master_seed + N, reps, domain=domain,
                           reflected=cfg.reflected, n_slices=n_slices, threads=cfg.threads)
        grid = B.grid_counts / N
        I.append(batch_control_rate(net, grid, B.slice_counts, N, cfg.T / n_slices, a, z0))
        inB.append((B.slice_osc <= g).all(axis=(1, 2)))
        flagged.append(B.slice_suppressed.any(axis=1))
        if domain is not None and a > 0:
            ups = ((1 - a) * grid + a * z0).reshape(-1, net.d)
            uniq = np.unique(ups, axis=0)
            mind.append(float(domain.distance(uniq).min()))
    return (np.concatenate(I), np.concatenate(inB), np.concatenate(flagged),
            min(mind) if mind else math.nan)


def verify_upper_machinery(cfg: ExperimentConfig) -> ExperimentResult:
    """Frequencies of {I_T(Upsilon|mu) > s}, of its intersection with B_eps,
    and of the complement of B_eps, with a decay-slope fit in N."""
    net, params, eq, domain = _setup(cfg)
    z = _start_point(cfg, eq, domain)
    eps = cfg.eps
    a = cfg.a if cfg.a is not None else h_eps(eps, cfg.nu, cfg.K)
    rows = []
    c2 = None
    if domain is not None:
        from .boundary import check_star_shape
        c2 = check_star_shape(domain)["shift_constants"]["c2"]
    min_ratio = math.inf
    for N in cfg.N_schedule:
        I, inB, flagged, mind = upper_events(cfg, net, domain, z, int(N), eps, a)
        n = I.size
        exc = int((I > cfg.s).sum())
        exc_B = int(((I > cfg.s) & inB).sum())
        Bc = int((~inB).sum())
        lo, hi = wilson(exc, n)
        rows.append({"N": int(N), "p_hat": exc / n, "ci_lo": lo, "ci_hi": hi,
                     "emp_rate": _neg_log_rate(exc / n, N), "I_T": cfg.s,
                     "exceed": exc, "exceed_and_B": exc_B, "exceed_and_B_ci": list(wilson(exc_B, n)),
                     "B_complement": Bc, "B_complement_ci": list(wilson(Bc, n)),
                     "flagged_replicates": int(flagged.sum()), "n": n,
                     "I_median": float(np.median(I)), "I_q99": float(np.quantile(I, 0.99))})
        if a > 0 and math.isfinite(mind):
            min_ratio = min(min_ratio, mind / a)
    Ns = np.array([r["N"] for r in rows], dtype=float)
    ok = np.array([r["exceed"] > 0 for r in rows])
    verdicts = {}
    extra = {"a": a, "g": g_eps(eps, cfg.K), "eps": eps, "start": z, "c2": c2,
             "min_distance_over_a": min_ratio}
    if ok.sum() >= 2:
        y = np.array([-math.log(r["p_hat"]) for r in rows])[ok]
        slope = _fit_slope(Ns[ok], y)
        # unfavourable endpoints: upper CI at the largest N, lower CI at the smallest
        idx = np.flatnonzero(ok)
        y_cons = np.array([-math.log(rows[i]["ci_hi"]) if i == idx[-1] else
                           (-math.log(rows[i]["ci_lo"]) if i == idx[0] else -math.log(rows[i]["p_hat"]))
                           for i in idx])
        slope_cons = _fit_slope(Ns[ok], y_cons)
        extra.update(slope=slope, slope_conservative=slope_cons, fitted_on=Ns[ok].tolist())
        verdicts["decay_slope"] = bool(slope_cons >= cfg.s - cfg.eta)
    else:
        extra.update(slope=None, slope_conservative=None)
        verdicts["decay_slope"] = False
    if c2 is not None and a > 0:
        # c2 is an infimum over sampled boundary points; allow the o(1) slack
        verdicts["shift_distance"] = bool(min_ratio >= c2 * (1 - SHIFT_SLACK))
    # B_eps complement versus eps at fixed N
    if cfg.eps_grid:
        Nf = int(cfg.N_fixed or cfg.N_schedule[-1])
        bc_rows = []
        for e in sorted(cfg.eps_grid, reverse=True):
            ae = cfg.a if cfg.a is not None else h_eps(e, cfg.nu, cfg.K)
            sub = replace(cfg, replicates=cfg.fixed_replicates)
            _, inB, _, _ = upper_events(sub, net, domain, z, Nf, e, ae)
            bc = int((~inB).sum())
            lo, hi = wilson(bc, inB.size)
            bc_rows.append({"eps": e, "g": g_eps(e, cfg.K), "p_hat": bc / inB.size, "ci_lo": lo, "ci_hi": hi})
        extra["B_complement_vs_eps"] = {"N": Nf, "rows": bc_rows}
        verdicts["B_complement_decreasing_in_eps"] = all(
            bc_rows[i + 1]["ci_hi"] < bc_rows[i]["ci_lo"] or bc_rows[i]["p_hat"] == 0
            for i in range(len(bc_rows) - 1))
    return ExperimentResult("ldp_upper", rows, verdicts, extra)


# --------------------------------------------------------------------------
# Poisson tails

def poisson_log_tail(n_min: int, mean: float) -> float:
    """log P(X >= n_min) for X ~ Poisson(mean), exact up to round-off.

    Above the mean the terms p_i are summed upward from i = n_min with the
    ratio recursion p_{i+1}/p_i = mean/(i+1) (compensated by math.fsum); below
    it the complement is summed downward."""
    if mean <= 0:
        return 0.0 if n_min <= 0 else -math.inf
    if n_min <= 0:
        return 0.0
    log_p = lambda i: i * math.log(mean) - mean - float(gammaln(i + 1))
    if n_min > mean:
        terms = [1.0]
        r = 1.0
        i = n_min
        while True:
            r *= mean / (i + 1)
            i += 1
            if r < 1e-18 * math.fsum(terms) or r == 0.0:
                break
            terms.append(r)
        return log_p(n_min) + math.log(math.fsum(terms))
    # P(X >= n) = 1 - P(X <= n-1), sum from the top of the head downward
    top = n_min - 1
    terms = [1.0]
    r = 1.0
    for i in range(top, 0, -1):
        r *= i / mean
        if r < 1e-18 * math.fsum(terms):
            break
        terms.append(r)
    head = log_p(top) + math.log(math.fsum(terms))
    return math.log1p(-math.exp(head)) if head < 0 else -math.inf


def poisson_tail_check(sigma: float, eps_grid: Sequence[float], N_grid: Sequence[int],
                       s: float = 1.0, K: float = 1.0) -> ExperimentResult:
    """P(Ybar > g(eps)) with N Ybar ~ Poisson(N sigma eps), against exp(-N Lambda*)
    and exp(-s N).  The comparison is made on exact log-tails."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rows = []
    chernoff_ok = True
    below_s = {}
    for eps in sorted(eps_grid, reverse=True):
        g = g_eps(eps, K)
        m1 = sigma * eps
        for N in N_grid:
            mean = N * m1
            n_min = math.floor(N * g) + 1
            lt = poisson_log_tail(n_min, mean)
            binding = g > m1
            lam = float(cramer_rate_poisson(g, m1)) if binding else 0.0
            ok_chernoff = lt <= -N * lam if binding else True
            ok_s = lt < -s * N
            chernoff_ok &= ok_chernoff
            below_s.setdefault(eps, True)
            below_s[eps] &= ok_s
            rows.append({"N": int(N), "eps": eps, "g": g, "log_tail": lt, "p_hat": math.exp(lt),
                         "ci_lo": math.exp(lt), "ci_hi": math.exp(lt),
                         "emp_rate": -lt / N, "I_T": lam, "chernoff_holds": ok_chernoff,
                         "below_exp_minus_sN": ok_s, "binding": binding})
    # eps0: largest grid eps such that every grid eps <= it satisfies the s-bound
    eps0 = None
    for eps in sorted(below_s):
        if below_s[eps]:
            eps0 = eps
        else:
            break
    return ExperimentResult("poisson_tail", rows,
                            {"chernoff_everywhere": bool(chernoff_ok), "eps0_found": eps0 is not None},
                            {"eps0": eps0, "sigma": sigma, "s": s, "K": K})
