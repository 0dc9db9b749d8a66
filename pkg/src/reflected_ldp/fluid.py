"""Fluid limit dY/dt = b(Y): integration, equilibria, thresholds, stability."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import bisect, minimize_scalar

from .model_core import (
    ReactionNetwork,
    S0is1Params,
    SivParams,
    build_s0is1,
    build_siv,
    in_simplex,
    project_to_simplex,
)

DEFAULT_TOL = 1e-10
EQUILIBRIUM_TOL = 1e-8


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class OdeSolution:
    times: np.ndarray
    states: np.ndarray
    dense: Callable = field(repr=False)

    def __call__(self, t):
        """Dense evaluation (interpolant of the integrator), projected onto A."""
        t = np.asarray(t, dtype=float)
        y = np.asarray(self.dense(t), dtype=float)
        return project_to_simplex(np.moveaxis(y, 0, -1))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _clean_states(y: np.ndarray) -> np.ndarray:
    # round-off excursions outside A are projected back, anything larger is kept visible
    proj = project_to_simplex(y)
    small = np.abs(proj - y).max(axis=-1) < 1e-12
    out = y.copy()
    out[small] = proj[small]
    return out


def _solve(rhs, span, y0, tol, t_eval=None):
    sol = solve_ivp(rhs, span, y0, method="DOP853", rtol=tol, atol=tol,
                    dense_output=True, t_eval=t_eval)
    if sol.status != 0:
        raise IntegrationError(sol.message)
    return sol


def integrate(net: ReactionNetwork, z0, T: float, tol: float = DEFAULT_TOL,
              n_out: Optional[int] = None) -> OdeSolution:
    """Adaptive 8th-order Runge-Kutta solution of the fluid ODE on [0, T]."""
    z0 = np.asarray(z0, dtype=float)
    if not in_simplex(z0):
        raise ValueError(f"initial point {z0} is outside A")
    if T < 0:
        raise ValueError("T must be nonnegative")
    if T == 0:
        states = z0[None, :]
        return OdeSolution(np.array([0.0]), states, lambda t: np.multiply.outer(z0, np.ones_like(t)))
    t_eval = None if n_out is None else np.linspace(0.0, T, n_out)
    sol = _solve(lambda t, y: net.drift_field(y), (0.0, T), z0, tol, t_eval)
    return OdeSolution(sol.t, _clean_states(sol.y.T), sol.sol)


def integrate_rescaled(net: ReactionNetwork, y0, u_end: float,
                       tol: float = DEFAULT_TOL) -> OdeSolution:
    """Solve dy/du = b(y) / (1 - u)^2, the fluid ODE in the time u = t/(1+t)."""
    if u_end >= 1:
        raise ValueError("u_end must be < 1")
    if u_end < 0:
        raise ValueError("u_end must be >= 0")
    y0 = np.asarray(y0, dtype=float)
    if not in_simplex(y0):
        raise ValueError(f"initial point {y0} is outside A")
    if u_end == 0:
        return OdeSolution(np.array([0.0]), y0[None, :],
                           lambda u: np.multiply.outer(y0, np.ones_like(u)))
    sol = _solve(lambda u, y: net.drift_field(y) / (1.0 - u) ** 2, (0.0, u_end), y0, tol)
    return OdeSolution(sol.t, _clean_states(sol.y.T), sol.sol)


# --------------------------------------------------------------------------
# equilibria

@dataclass(frozen=True)
class EquilibriumSet:
    dfe: np.ndarray
    endemic_stable: Optional[np.ndarray]
    endemic_unstable: Optional[np.ndarray]
    thresholds: dict
    regime: str  # "none", "one" or "two" endemic equilibria

    def all(self) -> list[np.ndarray]:
        return [z for z in (self.dfe, self.endemic_stable, self.endemic_unstable) if z is not None]

    def to_dict(self) -> dict:
        conv = lambda z: None if z is None else [float(x) for x in z]
        return {
            "dfe": conv(self.dfe),
            "endemic_stable": conv(self.endemic_stable),
            "endemic_unstable": conv(self.endemic_unstable),
            "thresholds": self.thresholds,
            "regime": self.regime,
        }


def siv_quadratic(p: SivParams) -> tuple[float, float, float]:
    """Coefficients (D1, D2, D3) whose roots are endemic first coordinates."""
    if p.beta == 0:
        raise ValueError("beta must be positive for the endemic quadratic")
    mg, mt = p.mu + p.gamma, p.mu + p.theta
    D1 = -p.beta * p.chi
    D2 = p.chi * (p.beta - mg) - (mt + p.chi * p.eta)
    D3 = (mt + p.eta) * (1.0 - mg / p.beta) - (1.0 - p.chi) * p.eta
    return D1, D2, D3


def siv_thresholds(p: SivParams, sup_rate: Optional[float] = None) -> dict:
    """beta_0, beta_1 and the two-equilibria condition.

    The published beta_1 formula carries a symbol that is read here as chi
    (default); ``beta1_sup_rate_reading`` substitutes the rate supremum instead.
    """
    mg, mt = p.mu + p.gamma, p.mu + p.theta
    beta0 = mg * (mt + p.eta) / (mt + p.chi * p.eta)

    def beta1(sym):
        if sym <= 0:
            return float("nan")
        return mg - (mt + p.chi * p.eta) / sym + (2.0 / p.chi) * math.sqrt(mg * sym * (1 - p.chi) * p.eta) \
            if p.chi > 0 else float("nan")

    if sup_rate is None:
        sup_rate = build_siv(p).sigma
    lhs = (mt + p.chi * p.eta) ** 2
    rhs = mg * p.chi * (1 - p.chi) * p.eta
    b1 = beta1(p.chi)
    return {
        "beta0": beta0,
        "beta1": b1,
        "beta1_sup_rate_reading": beta1(sup_rate),
        "condition_lhs": lhs,
        "condition_rhs": rhs,
        "two_equilibria_condition": bool(lhs < rhs and b1 < p.beta < beta0),
    }


def equilibria_siv(p: SivParams) -> EquilibriumSet:
    D1, D2, D3 = siv_quadratic(p)
    mt = p.mu + p.theta
    dec = lambda x: Fraction(repr(float(x)))
    # exact in the decimal inputs, rounded once: eta = 0.3, mu + theta = 0.05 gives 6/7
    den = dec(p.mu) + dec(p.theta) + dec(p.eta)
    dfe = np.array([0.0, float(dec(p.eta) / den) if den > 0 else 0.0])
    roots: list[float] = []
    if D1 == 0:
        if D2 != 0:
            roots = [-D3 / D2]
    else:
        disc = D2 * D2 - 4 * D1 * D3
        if disc >= 0:
            sq = math.sqrt(disc)
            # numerically stable pair
            q = -0.5 * (D2 + math.copysign(sq, D2))
            cand = [q / D1, D3 / q] if q != 0 else [-D2 / (2 * D1)]
            roots = sorted(set(cand))
    pts = []
    for x in roots:
        if 0 < x < 1:
            z2 = p.eta * (1 - x) / (mt + p.eta + p.beta * p.chi * x)
            z = np.array([x, z2])
            if in_simplex(z, tol=0.0):
                pts.append(z)
    pts.sort(key=lambda z: z[0])
    thresholds = siv_thresholds(p)
    if len(pts) >= 2:
        return EquilibriumSet(dfe, pts[-1], pts[0], thresholds, "two")
    if len(pts) == 1:
        return EquilibriumSet(dfe, pts[0], None, thresholds, "one")
    return EquilibriumSet(dfe, None, None, thresholds, "none")


def s0is1_thresholds(p: S0is1Params) -> dict:
    if p.alpha + p.mu == 0:
        raise ValueError("alpha + mu must be positive")
    R0 = p.beta / (p.alpha + p.mu)
    r_min = 1.0 + (p.mu / p.alpha if p.alpha > 0 else math.inf)
    R0_star = None
    if p.r > r_min and p.r > 0:
        beta_star = (math.sqrt(p.mu * (p.r - 1)) + math.sqrt(p.alpha)) ** 2 / p.r
        R0_star = beta_star / (p.alpha + p.mu)
    return {
        "R0": R0,
        "R0_star": R0_star,
        "r_min": r_min,
        "two_equilibria_condition": bool(R0_star is not None and R0_star < R0 < 1 and p.r > r_min),
    }


def _s0is1_second(p: S0is1Params, z1: float) -> float:
    return p.alpha * z1 / (p.mu + p.r * p.beta * z1)


def equilibria_s0is1(p: S0is1Params) -> EquilibriumSet:
    th = s0is1_thresholds(p)
    dfe = np.array([0.0, 0.0])
    R0 = th["R0"]
    if R0 == 0 or p.r == 0:
        return EquilibriumSet(dfe, None, None, th, "none")
    A = 1 - 1 / (p.r * R0) - p.mu / ((p.alpha + p.mu) * R0)
    disc = A * A + 4 * p.mu * (1 - 1 / R0) / ((p.alpha + p.mu) * p.r * R0)
    if disc < 0:
        return EquilibriumSet(dfe, None, None, th, "none")
    plus = 0.5 * (A + math.sqrt(disc))
    minus = 0.5 * (A - math.sqrt(disc))
    mk = lambda x: np.array([x, _s0is1_second(p, x)])
    if th["two_equilibria_condition"]:
        return EquilibriumSet(dfe, mk(plus), mk(minus), th, "two")
    if R0 > 1 and 0 < plus < 1:
        return EquilibriumSet(dfe, mk(plus), None, th, "one")
    return EquilibriumSet(dfe, None, None, th, "none")


def s0is1_equilibria_bisection(p: S0is1Params, xtol: float = 1e-14) -> list[float]:
    """Endemic first coordinates from bisection on the reduced scalar equation
    F(x) = beta (1 - x) - (mu + alpha) + beta (r - 1) z2(x), z2(x) = alpha x/(mu + r beta x)."""
    F = lambda x: p.beta * (1 - x) - (p.mu + p.alpha) + p.beta * (p.r - 1) * _s0is1_second(p, x)
    lo = 1e-14
    peak = minimize_scalar(lambda x: -F(x), bounds=(lo, 1.0), method="bounded",
                           options={"xatol": 1e-14}).x
    roots = []
    if F(lo) * F(peak) < 0:
        roots.append(bisect(F, lo, peak, xtol=xtol))
    if F(peak) * F(1.0) < 0:
        roots.append(bisect(F, peak, 1.0, xtol=xtol))
    return roots


def equilibria(model: str, params) -> EquilibriumSet:
    if model == "siv":
        return equilibria_siv(params)
    if model == "s0is1":
        return equilibria_s0is1(params)
    raise ValueError(f"unknown model {model!r}")


# --------------------------------------------------------------------------
# linearisation

@dataclass(frozen=True)
class Linearization:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kind: str  # "stable", "saddle" or "unstable"


def jacobian(net: ReactionNetwork, z, step: Optional[float] = 1e-6) -> Linearization:
    """Jacobian of the drift and its eigen-structure.

    By default a central finite difference with the given step, which needs
    z at least ``step`` inside A.  ``step=None`` uses the exact derivative
    sum_j h_j grad beta_j of the polynomial rates, valid on the faces too.
    """
    z = np.asarray(z, dtype=float)
    if step is None:
        J = net.jumps.T.astype(float) @ net.rate_gradients(z)
    else:
        if np.any(z < step) or z.sum() > 1 - step:
            raise ValueError(f"point {z} is too close to the boundary of A for step {step}")
        d = net.d
        J = np.empty((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            J[:, i] = (net.drift_field(z + e) - net.drift_field(z - e)) / (2 * step)
    w, v = np.linalg.eig(J)
    re = w.real
    if np.all(re < 0):
        kind = "stable"
    elif np.any(re < 0) and np.any(re > 0):
        kind = "saddle"
    else:
        kind = "unstable"
    return Linearization(J, w, v, kind)


def integrate_backward(net: ReactionNetwork, z0, T: float, tol: float = DEFAULT_TOL,
                       n_out: Optional[int] = None) -> OdeSolution:
    """Solution of dy/dt = -b(y): the fluid path traversed against the flow."""
    z0 = np.asarray(z0, dtype=float)
    if not in_simplex(z0):
        raise ValueError(f"initial point {z0} is outside A")
    if T <= 0:
        raise ValueError("T must be positive")
    t_eval = None if n_out is None else np.linspace(0.0, T, n_out)
    sol = _solve(lambda t, y: -net.drift_field(y), (0.0, T), z0, tol, t_eval)
    return OdeSolution(sol.t, _clean_states(sol.y.T), sol.sol)
