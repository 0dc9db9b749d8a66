"""Rate function of the jump process and the quantities of the upper-bound
construction (polygonal approximation, empirical controls, scale functions).

Slice problem: minimise sum_j f(mu_j, beta_j) over mu >= 0 with H mu = v.
Its Legendre dual is the smooth concave problem

    sup_theta  theta . v - sum_j beta_j (exp(theta . h_j) - 1)

whose maximiser gives mu_j = beta_j exp(theta . h_j).  Newton on the dual is
used whenever v is in the interior of the cone of active directions; a
linear program identifies forced-zero coordinates otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from .model_core import ReactionNetwork

FEAS_TOL = 1e-9
INF = math.inf


def local_rate(nu, omega):
    """f(nu, omega) = nu log(nu/omega) - nu + omega, with f(0, w) = w and
    f(nu, 0) = inf for nu > 0.  Vectorised."""
    nu = np.asarray(nu, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(nu < 0) or np.any(omega < 0):
        raise ValueError("local_rate needs nonnegative arguments")
    with np.errstate(divide="ignore", invalid="ignore"):
        # difference of logs: nu / omega can underflow for subnormal nu
        out = nu * (np.log(nu) - np.log(omega)) - nu + omega
    out = np.where(nu == 0, omega, out)
    out = np.where((nu > 0) & (omega == 0), np.inf, out)
    return out if out.ndim else float(out)


def cramer_rate_poisson(x, mean):
    """Lambda*(x) = x log(x/m) - x + m for the Poisson(m) law; Lambda*(0) = m."""
    if np.any(np.asarray(mean) <= 0):
        raise ValueError("mean must be positive")
    return local_rate(x, mean)


def g_eps(eps: float, K: float = 1.0) -> float:
    """g(eps) = K / sqrt(log(1/eps))."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if K <= 0:
        raise ValueError("K must be positive")
    return K / math.sqrt(math.log(1.0 / eps))


def h_eps(eps: float, nu: float = 0.25, K: float = 1.0) -> float:
    """Shift a = h(eps) = (-log sqrt(g(eps)))^(-1/nu); needs g(eps) < 1."""
    if not 0 < nu < 0.5:
        raise ValueError("nu must lie in (0, 1/2)")
    g = g_eps(eps, K)
    if g >= 1:
        raise ValueError(f"g(eps) = {g} >= 1; decrease eps or K")
    return (-math.log(math.sqrt(g))) ** (-1.0 / nu)


def h_from_g(g: float, nu: float) -> float:
    if not 0 < g < 1:
        raise ValueError("g must lie in (0, 1)")
    return (-0.5 * math.log(g)) ** (-1.0 / nu)


# --------------------------------------------------------------------------
# slice problem

def _dual_newton(Hs: np.ndarray, beta: np.ndarray, v: np.ndarray, max_iter: int = 100,
                 tol: float = 1e-13):
    """Newton ascent on the dual in a reduced basis.  Hs: (m, k') reduced
    directions (full row rank).  Returns (mu, converged)."""
    m = Hs.shape[0]
    w = np.zeros(m)
    scale = max(1.0, float(np.abs(v).max()), float(beta.max()))

    def dual(w):
        e = beta * np.exp(np.clip(Hs.T @ w, -700, 700))
        return w @ v - (e - beta).sum(), e

    val, mu = dual(w)
    for _ in range(max_iter):
        grad = v - Hs @ mu
        if np.abs(grad).max() <= tol * scale:
            return mu, True
        hess = (Hs * mu) @ Hs.T
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return mu, False
        dec = grad @ step
        t = 1.0
        while True:
            nv, nmu = dual(w + t * step)
            slack = 1e-14 * (1.0 + abs(val) + float(beta.sum()))
            if nv >= val + 0.25 * t * dec - slack or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12:
            return mu, False
        w = w + t * step
        val, mu = nv, nmu
        if np.abs(w).max() > 200:
            return mu, False
    return mu, bool(np.abs(v - Hs @ mu).max() <= 1e-10 * scale)


def _basis(H: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of span of the columns of H."""
    if H.shape[1] == 0:
        return np.zeros((0, H.shape[0]))
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    r = int((s > 1e-12 * max(1.0, s.max())).sum())
    return U[:, :r].T


def _feasible_point(H: np.ndarray, v: np.ndarray):
    """min |H mu - v|_1 over mu >= 0; returns (residual, mu)."""
    d, k = H.shape
    c = np.concatenate([np.zeros(k), np.ones(2 * d)])
    A = np.hstack([H, np.eye(d), -np.eye(d)])
    res = linprog(c, A_eq=A, b_eq=v, bounds=[(0, None)] * (k + 2 * d), method="highs")
    if res.status != 0:
        return INF, None
    return float(res.fun), res.x[:k]


def _free_coordinates(H: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Which coordinates can be positive in some mu >= 0 with H mu = v."""
    d, k = H.shape
    free = np.zeros(k, dtype=bool)
    for j in range(k):
        c = np.zeros(k)
        c[j] = -1.0
        bounds = [(0, None)] * k
        bounds[j] = (0, 1.0)
        res = linprog(c, A_eq=H, b_eq=v, bounds=bounds, method="highs")
        free[j] = res.status == 0 and -res.fun > 1e-10
    return free


def _solve_on(H, beta, v):
    """Solve on a set of directions that admits a strictly positive feasible
    point; returns mu (or None)."""
    if H.shape[1] == 0:
        return np.zeros(0) if np.abs(v).max(initial=0.0) <= FEAS_TOL else None
    Ub = _basis(H)
    Hs = Ub @ H
    vs = Ub @ v
    mu, ok = _dual_newton(Hs, beta, vs)
    return mu if ok else None


def slice_rate(net: ReactionNetwork, z, v, tol: float = FEAS_TOL):
    """min sum_j f(mu_j, beta_j(z)) over mu >= 0 with sum_j mu_j h_j = v.

    Returns (value, mu) with mu = None when the value is infinite."""
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    if z.shape != (net.d,) or v.shape != (net.d,):
        raise ValueError(f"expected vectors of dimension {net.d}")
    beta = net.rates(z)
    return slice_rate_from_rates(net.jumps.T.astype(float), beta, v, tol)


def slice_rate_from_rates(H: np.ndarray, beta: np.ndarray, v: np.ndarray, tol: float = FEAS_TOL):
    k = beta.shape[0]
    act = beta > 0
    Ha, ba = H[:, act], beta[act]
    mu = np.zeros(k)
    # fast path: v interior to the cone of active directions
    Ub = _basis(Ha)
    in_span = np.abs(v - Ub.T @ (Ub @ v)).max(initial=0.0) <= tol
    if in_span and Ha.shape[1]:
        m, ok = _dual_newton(Ub @ Ha, ba, Ub @ v)
        if ok:
            mu[act] = m
            return float(local_rate(mu, beta).sum()), mu
    # feasibility and faces by linear programming
    resid, mu_feas = _feasible_point(Ha, v)
    if resid > tol or mu_feas is None:
        return INF, None
    v_eff = Ha @ mu_feas
    free = _free_coordinates(Ha, v_eff)
    sub = _solve_on(Ha[:, free], ba[free], v_eff)
    if sub is None:
        return INF, None
    ma = np.zeros(ba.shape[0])
    ma[free] = sub
    mu[act] = ma
    return float(local_rate(mu, beta).sum()), mu


# --------------------------------------------------------------------------
# paths and controls

@dataclass(frozen=True, eq=False)
class PiecewisePath:
    """Piecewise-linear path through (breakpoints[i], values[i]).

    ``source`` is the function the breakpoints were sampled from, if any;
    bisection then resamples it instead of interpolating."""

    breakpoints: np.ndarray
    values: np.ndarray
    source: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float)
        x = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or x.ndim != 2 or x.shape[0] != t.size:
            raise ValueError("breakpoints (n,) and values (n, d) expected")
        if t.size < 2 or np.any(np.diff(t) <= 0) or t[0] != 0.0:
            raise ValueError("breakpoints must start at 0 and increase strictly")
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", x)

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.values, axis=0) / self.durations[:, None]

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.values[1:] + self.values[:-1])

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.breakpoints, self.values[:, i])
                         for i in range(self.values.shape[1])], axis=-1)

    def bisect(self) -> "PiecewisePath":
        tm = 0.5 * (self.breakpoints[1:] + self.breakpoints[:-1])
        t = np.empty(2 * tm.size + 1)
        t[0::2] = self.breakpoints
        t[1::2] = tm
        x = np.empty((t.size, self.values.shape[1]))
        x[0::2] = self.values
        x[1::2] = self.midpoints if self.source is None else np.asarray(self.source(tm))
        return PiecewisePath(t, x, self.source)

    @classmethod
    def from_function(cls, f, T: float, n: int) -> "PiecewisePath":
        t = np.linspace(0.0, T, n)
        return cls(t, np.asarray(f(t)), f)


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Slice-wise constant controls mu[l, j] on [breakpoints[l], breakpoints[l+1])."""

    breakpoints: np.ndarray
    mu: np.ndarray
    flagged: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.mu < 0):
            raise ValueError("controls must be nonnegative")
        if self.mu.shape[0] != self.breakpoints.size - 1:
            raise ValueError("one control vector per slice expected")

    def velocities(self, net: ReactionNetwork) -> np.ndarray:
        return self.mu @ net.jumps.astype(float)


@dataclass(frozen=True)
class RateReport:
    value: float
    slice_costs: np.ndarray
    breakpoints: np.ndarray
    minimizer: Optional[ControlTrajectory]
    refinements: int = 0

    def to_dict(self) -> dict:
        fin = lambda x: float(x) if math.isfinite(x) else "inf"
        return {
            "value": fin(self.value),
            "refinements": self.refinements,
            "breakpoints": self.breakpoints.tolist(),
            "slice_costs": [fin(c) for c in self.slice_costs],
            "controls": None if self.minimizer is None else self.minimizer.mu.tolist(),
        }


def _path_rate_once(net, phi: PiecewisePath):
    dt = phi.durations
    vel = phi.velocities
    mids = phi.midpoints
    costs = np.empty(dt.size)
    mus = np.zeros((dt.size, net.k))
    finite = True
    for i in range(dt.size):
        val, mu = slice_rate(net, mids[i], vel[i])
        costs[i] = dt[i] * val if math.isfinite(val) else INF
        if mu is None:
            finite = False
        else:
            mus[i] = mu
    total = float(costs.sum()) if finite else INF
    return total, costs, (mus if finite else None)


def path_rate(net: ReactionNetwork, phi: PiecewisePath, rel_change: float = 1e-6,
              max_refinements: int = 8) -> RateReport:
    """I_T(phi) by midpoint quadrature of the slice problem, bisecting all
    slices until the value changes by less than ``rel_change``."""
    value, costs, mus = _path_rate_once(net, phi)
    cur = phi
    n = 0
    while math.isfinite(value) and n < max_refinements:
        finer = cur.bisect()
        v2, c2, m2 = _path_rate_once(net, finer)
        n += 1
        done = math.isfinite(v2) and abs(v2 - value) < rel_change
        cur, value, costs, mus = finer, v2, c2, m2
        if done or not math.isfinite(v2):
            break
    ctrl = None if mus is None else ControlTrajectory(cur.breakpoints, mus)
    return RateReport(value, costs, cur.breakpoints, ctrl, n)


def path_rate_given_control(net: ReactionNetwork, phi: PiecewisePath, mu: ControlTrajectory,
                            check: bool = True, tol: float = FEAS_TOL) -> float:
    """I_T(phi | mu) = sum_l dt_l sum_j f(mu_lj, beta_j(phi at slice midpoint))."""
    if mu.mu.shape[0] != phi.durations.size:
        raise ValueError("control and path have different slice counts")
    if check:
        resid = np.abs(mu.velocities(net) - phi.velocities).max()
        scale = max(1.0, float(np.abs(phi.velocities).max()))
        if resid > tol * scale:
            raise ValueError(f"control is infeasible for the path (residual {resid:.3e})")
    beta = net.rates(phi.midpoints)
    cost = local_rate(mu.mu, beta).sum(axis=1)
    return float((phi.durations * cost).sum())


def slice_grid(T: float, eps: float) -> int:
    n = int(round(T / eps))
    if n < 1 or abs(n * eps - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T/eps = {T / eps} is not an integer")
    return n


def polygonal_approx(path, domain, eps: float, a: float, z0=None) -> PiecewisePath:
    """Linear interpolation of (1 - a) Z(l eps) + a z0 over the grid l eps."""
    if not 0 <= a < 1:
        raise ValueError("a must lie in [0, 1)")
    n = slice_grid(path.T, eps)
    if z0 is None:
        z0 = domain.z0 if domain is not None else np.zeros(path.d)
    t = np.arange(n + 1) * (path.T / n)
    pts = (1 - a) * path.state_at(t) + a * np.asarray(z0, dtype=float)
    return PiecewisePath(t, pts)


def empirical_control(path, eps: float, a: float, k: Optional[int] = None) -> ControlTrajectory:
    """mu[l, j] = (1 - a) * (# stream-j events in slice l) / (N eps), applied or
    suppressed; slices containing a suppression are flagged."""
    if not 0 <= a < 1:
        raise ValueError("a must lie in [0, 1)")
    n = slice_grid(path.T, eps)
    width = path.T / n
    if k is None:
        k = int(path.transitions.max()) + 1 if path.n_events else 1
    sl = np.minimum((path.times / width).astype(np.int64), n - 1)
    counts = np.zeros((n, k), dtype=np.int64)
    np.add.at(counts, (sl, path.transitions), 1)
    flagged = np.zeros(n, dtype=bool)
    np.logical_or.at(flagged, sl[~path.applied], True)
    mu = (1 - a) * counts / (path.N * width)
    return ControlTrajectory(np.arange(n + 1) * width, mu, flagged)


def batch_control_rate(net: ReactionNetwork, grid_states: np.ndarray, counts: np.ndarray,
                       N: int, eps: float, a: float, z0) -> np.ndarray:
    """I_T(Upsilon | mu) for many replicates at once from slice-boundary states
    (R, L+1, d) and stream counts (R, L, k)."""
    ups = (1 - a) * grid_states + a * np.asarray(z0, dtype=float)
    mids = 0.5 * (ups[:, 1:] + ups[:, :-1])
    beta = net.rates(mids)
    mu = (1 - a) * counts / (N * eps)
    return eps * local_rate(mu, beta).sum(axis=(1, 2))
