"""Reaction networks on the simplex and the two epidemic models.

A network is a list of transitions ``j`` with a jump direction ``h_j`` in
``{-1, 0, 1}^d`` and a rate ``beta_j(z)``.  Every rate used here is a single
monomial in the coordinates and the slack ``s = 1 - sum(z)``::

    beta_j(z) = c_j * prod_i z_i**e_ji * s**f_j

which covers the SIV and S0IS1 models, constant rates and linear test rates,
and lets the simulation kernels evaluate rates without Python callbacks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, asdict
from typing import Protocol, Sequence

import numpy as np

ZERO_TOL = 1e-12


class DomainError(ValueError):
    """A state left the region where the process is defined."""


def in_simplex(z, tol: float = 1e-9) -> bool:
    z = np.asarray(z, dtype=float)
    return bool(np.all(z >= -tol) and z.sum() <= 1.0 + tol)


def project_to_simplex(z: np.ndarray) -> np.ndarray:
    """Euclidean projection onto A = {z >= 0, sum(z) <= 1}; works on (..., d)."""
    z = np.asarray(z, dtype=float)
    clipped = np.maximum(z, 0.0)
    over = clipped.sum(axis=-1) > 1.0
    if not np.any(over):
        return clipped
    out = np.array(clipped, copy=True)
    rows = np.atleast_2d(z)[np.atleast_1d(over)] if z.ndim > 1 else z[None, :]
    # projection onto the face sum(z) = 1 (sort-based algorithm)
    u = -np.sort(-rows, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    idx = np.arange(1, rows.shape[-1] + 1)
    cond = u - css / idx > 0
    rho = cond.shape[-1] - 1 - np.argmax(cond[:, ::-1], axis=-1)
    theta = css[np.arange(len(rows)), rho] / (rho + 1)
    proj = np.maximum(rows - theta[:, None], 0.0)
    if z.ndim > 1:
        out[over] = proj
    else:
        out = proj[0]
    return out


def _monomial_max_on_simplex(zexp: np.ndarray, sexp: int) -> float:
    """max of prod z_i**e_i * s**f over the simplex (attained at z_i = e_i / E)."""
    powers = np.concatenate([zexp, [sexp]]).astype(float)
    total = powers.sum()
    if total == 0:
        return 1.0
    val = 1.0
    for p in powers:
        if p > 0:
            val *= (p / total) ** p
    return val


@dataclass(frozen=True, eq=False)
class ReactionNetwork:
    """Jump directions and monomial rates of a density-dependent process."""

    jumps: np.ndarray
    coef: np.ndarray
    zexp: np.ndarray
    sexp: np.ndarray
    names: tuple[str, ...] = ()
    tag: str = "custom"
    sigma: float = field(default=float("nan"))

    def __post_init__(self):
        jumps = np.atleast_2d(np.asarray(self.jumps, dtype=np.int64))
        k, d = jumps.shape
        coef = np.asarray(self.coef, dtype=float).reshape(k)
        zexp = np.asarray(self.zexp, dtype=np.int64).reshape(k, d)
        sexp = np.asarray(self.sexp, dtype=np.int64).reshape(k)
        if not np.all(np.isin(jumps, (-1, 0, 1))):
            raise ValueError("jump directions must have entries in {-1, 0, 1}")
        if np.any(coef < 0) or not np.all(np.isfinite(coef)):
            raise ValueError("rate coefficients must be finite and nonnegative")
        if np.any(zexp < 0) or np.any(sexp < 0):
            raise ValueError("rate exponents must be nonnegative")
        for arr in (jumps, coef, zexp, sexp):
            arr.setflags(write=False)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "zexp", zexp)
        object.__setattr__(self, "sexp", sexp)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"T{j + 1}" for j in range(k)))
        if math.isnan(self.sigma):
            sig = max(
                (c * _monomial_max_on_simplex(zexp[j], sexp[j]) for j, c in enumerate(coef)),
                default=0.0,
            )
            object.__setattr__(self, "sigma", float(sig))

    @property
    def k(self) -> int:
        return self.jumps.shape[0]

    @property
    def d(self) -> int:
        return self.jumps.shape[1]

    def rates_raw(self, z) -> np.ndarray:
        """Polynomial rates without projection; z has shape (..., d)."""
        z = np.asarray(z, dtype=float)
        s = 1.0 - z.sum(axis=-1)
        out = np.broadcast_to(self.coef, z.shape[:-1] + (self.k,)).copy()
        for j in range(self.k):
            for i in range(self.d):
                e = self.zexp[j, i]
                if e:
                    out[..., j] *= z[..., i] ** e
            if self.sexp[j]:
                out[..., j] *= s ** self.sexp[j]
        return out

    def rates(self, z) -> np.ndarray:
        """beta_j(z), evaluated at the projection of z onto A."""
        return self.rates_raw(project_to_simplex(z))

    def rate_gradients(self, z) -> np.ndarray:
        """Analytic gradients d beta_j / d z_i, shape (..., k, d)."""
        z = np.asarray(z, dtype=float)
        s = 1.0 - z.sum(axis=-1)
        out = np.zeros(z.shape[:-1] + (self.k, self.d))

        def mono(j, drop_i=-1, drop_s=False):
            val = np.full(z.shape[:-1], self.coef[j])
            for m in range(self.d):
                e = self.zexp[j, m] - (m == drop_i)
                if e:
                    val = val * z[..., m] ** e
            f = self.sexp[j] - drop_s
            if f:
                val = val * s ** f
            return val

        for j in range(self.k):
            slack_part = -self.sexp[j] * mono(j, drop_s=True) if self.sexp[j] else 0.0
            for i in range(self.d):
                e = self.zexp[j, i]
                out[..., j, i] = (e * mono(j, drop_i=i) if e else 0.0) + slack_part
        return out

    def drift_field(self, z) -> np.ndarray:
        """b(z) = sum_j beta_j(z) h_j using the raw polynomials (ODE use)."""
        return self.rates_raw(z) @ self.jumps.astype(float)


def drift(net: ReactionNetwork, z) -> np.ndarray:
    """Fluid drift b(z) = sum_j beta_j(z) h_j for z in A."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != net.d:
        raise ValueError(f"state has dimension {z.shape[-1]}, network has d={net.d}")
    if z.ndim == 1 and not in_simplex(z):
        raise DomainError(f"state {z} is outside the simplex A")
    return net.rates(z) @ net.jumps.astype(float)


# --------------------------------------------------------------------------
# the two epidemic models

@dataclass(frozen=True)
class SivParams:
    beta: float
    chi: float
    eta: float
    gamma: float
    mu: float
    theta: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"SIV parameter {f.name!r} must be a nonnegative number, got {v!r}")
        if self.chi > 1:
            raise ValueError(f"SIV parameter 'chi' must lie in [0, 1], got {self.chi}")

    @classmethod
    def fitted(cls) -> "SivParams":
        """Figure-consistent values; mu, gamma, theta split is a toolkit default."""
        return cls(beta=3.6, chi=0.1, eta=0.3, gamma=1.01, mu=0.02, theta=0.03)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class S0is1Params:
    beta: float
    alpha: float
    mu: float
    r: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"S0IS1 parameter {f.name!r} must be a nonnegative number, got {v!r}")

    @classmethod
    def fitted(cls) -> "S0is1Params":
        return cls(beta=3.0, alpha=5.0, mu=0.015, r=2.0)

    def to_dict(self) -> dict:
        return asdict(self)


def build_siv(p: SivParams) -> ReactionNetwork:
    """SIV network on z = (infectious, vaccinated) with the seven transitions."""
    jumps = [(1, 0), (1, -1), (-1, 0), (0, -1), (0, 1), (-1, 0), (0, -1)]
    coef = [p.beta, p.chi * p.beta, p.gamma, p.theta, p.eta, p.mu, p.mu]
    zexp = [(1, 0), (1, 1), (1, 0), (0, 1), (0, 0), (1, 0), (0, 1)]
    sexp = [1, 0, 0, 0, 1, 0, 0]
    names = ("infection", "vaccinated_infection", "recovery", "vaccine_loss",
             "vaccination", "death_I", "death_V")
    return ReactionNetwork(jumps, coef, zexp, sexp, names=names, tag="siv")


def build_s0is1(p: S0is1Params) -> ReactionNetwork:
    """S0IS1 network on z = (infectious, previously infected susceptibles)."""
    jumps = [(1, 0), (-1, 1), (-1, 0), (1, -1), (0, -1)]
    coef = [p.beta, p.alpha, p.mu, p.r * p.beta, p.mu]
    zexp = [(1, 0), (1, 0), (1, 0), (1, 1), (0, 1)]
    sexp = [1, 0, 0, 0, 0]
    names = ("infection", "recovery", "death_I", "reinfection", "death_S1")
    return ReactionNetwork(jumps, coef, zexp, sexp, names=names, tag="s0is1")


def build_model(model: str, params) -> ReactionNetwork:
    if model == "siv":
        return build_siv(params)
    if model == "s0is1":
        return build_s0is1(params)
    raise ValueError(f"unknown model {model!r}")


# --------------------------------------------------------------------------
# lattice initial condition

class LatticeDomain(Protocol):
    def contains(self, z) -> bool: ...
    def lattice_mask(self, N: int) -> np.ndarray: ...


def snap_initial(z, domain: LatticeDomain, N: int) -> np.ndarray:
    """z^N: floor(N z)/N if it lies in the closed domain, else the nearest
    lattice point of the domain (ties broken lexicographically)."""
    if N < 1:
        raise ValueError("N must be a positive integer")
    z = np.asarray(z, dtype=float)
    floor_pt = np.floor(N * z + 1e-9) / N
    if domain.contains(floor_pt):
        return floor_pt
    mask = domain.lattice_mask(N)
    idx = np.argwhere(mask)
    if idx.size == 0:
        raise DomainError(f"no lattice point of the domain at N={N}")
    pts = idx / N
    d2 = ((pts - z) ** 2).sum(axis=1)
    keys = tuple(pts[:, i] for i in range(pts.shape[1] - 1, -1, -1)) + (d2,)
    best = np.lexsort(keys)[0]
    return pts[best]


# --------------------------------------------------------------------------
# Lipschitz constants

def _simplex_grid(d: int, step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    axes = np.meshgrid(*[np.arange(n + 1)] * d, indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=-1)
    pts = pts[pts.sum(axis=1) <= n]
    return pts / n


def lipschitz_estimate(net: ReactionNetwork, grid_step: float) -> float:
    """max_j of the largest difference quotient of beta_j between grid
    neighbours (axis steps and both diagonals) over A."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    pts = _simplex_grid(net.d, grid_step)
    vals = net.rates_raw(pts)
    n = int(round(1.0 / grid_step))
    lookup = {tuple(p): i for i, p in enumerate(np.rint(pts * n).astype(int))}
    best = 0.0
    offsets = []
    for i in range(net.d):
        e = np.zeros(net.d, dtype=int)
        e[i] = 1
        offsets.append(e)
        for m in range(i + 1, net.d):
            for sign in (1, -1):
                e2 = e.copy()
                e2[m] = sign
                offsets.append(e2)
    ipts = np.rint(pts * n).astype(int)
    for off in offsets:
        nb = [lookup.get(tuple(p + off)) for p in ipts]
        ok = np.array([x is not None for x in nb])
        if not ok.any():
            continue
        jdx = np.array([x for x in nb if x is not None])
        h = np.linalg.norm(off) / n
        q = np.abs(vals[ok] - vals[jdx]) / h
        best = max(best, float(q.max()))
    return best


def lipschitz_analytic(net: ReactionNetwork, grid_step: float = 2e-3) -> float:
    """max_j sup_A |grad beta_j| from the analytic gradient on a fine grid."""
    pts = _simplex_grid(net.d, grid_step)
    g = net.rate_gradients(pts)
    return float(np.linalg.norm(g, axis=-1).max())
