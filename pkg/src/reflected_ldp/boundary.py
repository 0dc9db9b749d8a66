"""Characteristic boundary, the reflecting domain and assumption checks.

The boundary between the basins of the endemic equilibrium and the
disease-free equilibrium is the stable manifold of the saddle.  It is
computed by integrating the reversed field away from the saddle along its
stable eigenvector until the simplex faces are hit, stored as a polyline and
closed along the faces of A into a polygon.  All predicates (membership,
distances, lattice masks) work against that polygon.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .fluid import integrate, jacobian
from .model_core import ReactionNetwork, in_simplex

EDGE_TOL = 1e-10


# --------------------------------------------------------------------------
# planar helpers

def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def segment_distances(points: np.ndarray, starts: np.ndarray, ends: np.ndarray,
                      chunk: int = 4096) -> np.ndarray:
    """Min distance from each point to a set of segments (exact point-segment)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    seg = ends - starts
    L2 = (seg ** 2).sum(axis=1)
    L2safe = np.where(L2 > 0, L2, 1.0)
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        P = points[lo:lo + chunk, None, :]
        t = ((P - starts) * seg).sum(axis=-1) / L2safe
        t = np.clip(np.where(L2 > 0, t, 0.0), 0.0, 1.0)
        proj = starts + t[..., None] * seg
        out[lo:lo + chunk] = np.sqrt(((P - proj) ** 2).sum(axis=-1)).min(axis=1)
    return out


def _nearest_on_segments(points, starts, ends):
    points = np.atleast_2d(points)
    seg = ends - starts
    L2 = np.maximum((seg ** 2).sum(axis=1), 1e-300)
    P = points[:, None, :]
    t = np.clip(((P - starts) * seg).sum(axis=-1) / L2, 0.0, 1.0)
    proj = starts + t[..., None] * seg
    d = np.sqrt(((P - proj) ** 2).sum(axis=-1))
    i = d.argmin(axis=1)
    return proj[np.arange(len(points)), i], d[np.arange(len(points)), i]


def _on_simplex_face(a, b, tol=1e-9) -> bool:
    for f in (lambda z: z[0], lambda z: z[1], lambda z: 1.0 - z[0] - z[1]):
        if abs(f(a)) < tol and abs(f(b)) < tol:
            return True
    return False


# --------------------------------------------------------------------------
# boundary curve

@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """Polyline p(u), u in [0, 2]; p(0) = B on the bottom face, p(1) = saddle,
    p(2) = the end on the hypotenuse."""

    u: np.ndarray
    points: np.ndarray
    saddle: np.ndarray
    tag: str = "custom"

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def at(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.stack([np.interp(u, self.u, self.points[:, i]) for i in range(2)], axis=-1)

    def tangents(self) -> np.ndarray:
        """Finite-difference dp/du on vertices (one-sided at the ends)."""
        return np.gradient(self.points, self.u, axis=0)

    def sample_by_arclength(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        targets = np.linspace(0, s[-1], n)
        u = np.interp(targets, s, self.u)
        return u, self.at(u)

    def to_csv(self, path=None) -> Optional[str]:
        """Rows ``u,z1,z2``; returns the text when no path is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "z1", "z2"])
        for u, p in zip(self.u, self.points):
            w.writerow([repr(float(u)), repr(float(p[0])), repr(float(p[1]))])
        if path is None:
            return buf.getvalue()
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
        return None

    @classmethod
    def from_csv(cls, path, tag: str = "custom") -> "BoundaryCurve":
        rows = []
        with open(path, newline="") as fh:
            r = csv.DictReader(fh)
            if r.fieldnames != ["u", "z1", "z2"]:
                raise ValueError(f"expected header u,z1,z2, got {r.fieldnames}")
            for row in r:
                rows.append((float(row["u"]), float(row["z1"]), float(row["z2"])))
        arr = np.array(rows)
        u, pts = arr[:, 0], arr[:, 1:]
        i = int(np.argmin(np.abs(u - 1.0)))
        return cls(u, pts, pts[i].copy(), tag)


class SeparatrixError(RuntimeError):
    pass


def _face_events():
    def bottom(t, y):
        return y[1]

    def left(t, y):
        return y[0]

    def hyp(t, y):
        return 1.0 - y[0] - y[1]

    evs = [bottom, left, hyp]
    for e in evs:
        e.terminal = True
        e.direction = -1
    return evs


def _shoot_branch(net, start, t_max, tol, n_vertices):
    sol = solve_ivp(lambda t, y: -net.drift_field(y), (0.0, t_max), start,
                    method="DOP853", rtol=tol, atol=tol * 1e-2, dense_output=True,
                    events=_face_events())
    hit = [i for i, te in enumerate(sol.t_events) if len(te)]
    if not hit:
        raise SeparatrixError(f"reverse trajectory from {start} did not reach the simplex boundary by t={t_max}")
    face = hit[0]
    tau_end = float(sol.t_events[face][0])
    # dense sampling, then arc-length resampling
    tt = np.concatenate([np.linspace(0.0, tau_end, 20000), [tau_end]])
    yy = sol.sol(tt).T
    end = yy[-1].copy()
    if face == 0:
        end[1] = 0.0
    elif face == 1:
        end[0] = 0.0
    else:
        end[1] = 1.0 - end[0]
    yy[-1] = end
    seg = np.linalg.norm(np.diff(yy, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], n_vertices)
    tau = np.interp(targets, s, tt)
    pts = sol.sol(tau).T
    pts[-1] = end
    return tau, pts, tau_end, face


def polyline_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two polylines (vertices against segments)."""
    return max(float(segment_distances(a, b[:-1], b[1:]).max()),
               float(segment_distances(b, a[:-1], a[1:]).max()))


def compute_separatrix(net: ReactionNetwork, saddle, offset: float = 1e-6,
                       t_max: float = 2000.0, n_vertices: int = 1000,
                       tol: float = 1e-10, refine: bool = True) -> BoundaryCurve:
    """Stable manifold of a saddle by reverse-time shooting.

    The branch that lands on the bottom face z2 = 0 becomes u in [0, 1) and
    the branch that lands on the hypotenuse becomes u in (1, 2], using
    u = t/(1+t) with t the forward time from the landing point.
    """
    saddle = np.asarray(saddle, dtype=float)
    lin = jacobian(net, saddle)
    if lin.kind != "saddle":
        raise SeparatrixError(f"point {saddle} is not a saddle (eigenvalues {lin.eigenvalues})")
    i_s = int(np.argmin(lin.eigenvalues.real))
    vs = np.real(lin.eigenvectors[:, i_s])
    vs = vs / np.linalg.norm(vs)

    def build(nv, tl):
        branches = {}
        for sign in (+1.0, -1.0):
            tau, pts, tau_end, face = _shoot_branch(net, saddle + sign * offset * vs, t_max, tl, nv)
            branches[face] = (tau, pts, tau_end)
        if 0 not in branches or 2 not in branches:
            raise SeparatrixError(f"branches landed on faces {sorted(branches)}; expected bottom and hypotenuse")
        tau1, p1, T1 = branches[0]
        tau2, p2, T2 = branches[2]
        # forward time from the landing point
        u1 = (T1 - tau1) / (1.0 + T1 - tau1)
        u2 = 2.0 - (T2 - tau2) / (1.0 + T2 - tau2)
        u = np.concatenate([u1[::-1], [1.0], u2])
        pts = np.concatenate([p1[::-1], saddle[None, :], p2])
        return BoundaryCurve(u, pts, saddle.copy(), net.tag)

    curve = build(n_vertices, tol)
    if refine:
        for _ in range(4):
            finer = build(2 * n_vertices, max(tol * 0.1, 1e-13))
            if polyline_hausdorff(curve.points, finer.points) < 1e-4:
                break
            curve, n_vertices, tol = finer, 2 * n_vertices, max(tol * 0.1, 1e-13)
        else:
            raise SeparatrixError("polyline refinement did not converge")
    return curve


# --------------------------------------------------------------------------
# domain

@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Closed polygonal region with a star centre z0 (2-d only)."""

    vertices: np.ndarray
    z0: np.ndarray
    interior_point: np.ndarray
    curve: Optional[BoundaryCurve] = None
    tag: str = "custom"
    constraints: dict = field(default_factory=dict)
    _masks: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        area = 0.5 * np.sum(_cross(v, np.roll(v, -1, axis=0)))
        if area < 0:
            v = v[::-1]
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float))
        object.__setattr__(self, "interior_point", np.asarray(self.interior_point, dtype=float))

    @classmethod
    def from_polygon(cls, vertices, z0, tag: str = "custom") -> "DomainSpec":
        return cls(np.asarray(vertices, float), np.asarray(z0, float), np.asarray(z0, float), tag=tag)

    @property
    def starts(self) -> np.ndarray:
        return self.vertices

    @property
    def ends(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0)

    @property
    def reflecting_edges(self) -> np.ndarray:
        """Edges not lying on a face of the simplex."""
        return np.array([not _on_simplex_face(a, b) for a, b in zip(self.starts, self.ends)])

    def _row(self, y: float, xs: np.ndarray) -> np.ndarray:
        """Closed-set membership of points (xs, y); single code path for
        point queries and lattice masks."""
        a, b = self.starts, self.ends
        y1, y2 = a[:, 1], b[:, 1]
        cross = ((y1 <= y) & (y < y2)) | ((y2 <= y) & (y < y1))
        xa, xb = a[cross], b[cross]
        xint = xa[:, 0] + (y - xa[:, 1]) * (xb[:, 0] - xa[:, 0]) / (xb[:, 1] - xa[:, 1])
        inside = (np.count_nonzero(xint[None, :] > xs[:, None], axis=1) % 2) == 1
        near = (np.minimum(y1, y2) - EDGE_TOL <= y) & (y <= np.maximum(y1, y2) + EDGE_TOL)
        if near.any():
            pts = np.column_stack([xs, np.full_like(xs, y)])
            d = segment_distances(pts, a[near], b[near])
            inside |= d <= EDGE_TOL
        return inside

    def contains(self, z) -> bool:
        z = np.asarray(z, dtype=float)
        if not in_simplex(z, tol=EDGE_TOL):
            return False
        return bool(self._row(float(z[1]), np.array([float(z[0])]))[0])

    def contains_many(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts), dtype=bool)
        ok = (pts >= -EDGE_TOL).all(axis=1) & (pts.sum(axis=1) <= 1 + EDGE_TOL)
        ys = pts[:, 1]
        for y in np.unique(ys[ok]):
            sel = ok & (ys == y)
            out[sel] = self._row(float(y), pts[sel, 0])
        return out

    def lattice_mask(self, N: int) -> np.ndarray:
        """mask[i, j] is True iff (i/N, j/N) lies in the closed domain (and in A)."""
        if N in self._masks:
            return self._masks[N]
        mask = np.zeros((N + 1, N + 1), dtype=np.bool_)
        xs_all = np.arange(N + 1) / N
        for j in range(N + 1):
            n_i = N - j + 1
            mask[:n_i, j] = self._row(j / N, xs_all[:n_i])
        mask.setflags(write=False)
        self._masks[N] = mask
        return mask

    def distance(self, z) -> np.ndarray | float:
        z = np.asarray(z, dtype=float)
        d = segment_distances(np.atleast_2d(z), self.starts, self.ends)
        return float(d[0]) if z.ndim == 1 else d

    def distance_reflecting(self, z) -> np.ndarray:
        m = self.reflecting_edges
        return segment_distances(np.atleast_2d(z), self.starts[m], self.ends[m])

    def sample_boundary(self, n: int) -> np.ndarray:
        closed = np.vstack([self.vertices, self.vertices[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        t = np.linspace(0.0, s[-1], n, endpoint=False)
        return np.column_stack([np.interp(t, s, closed[:, i]) for i in range(2)])

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "z0": self.z0.tolist(),
            "vertices": self.vertices.tolist(),
            "constraints": _jsonable(self.constraints),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def membership(domain: DomainSpec, z) -> bool:
    return domain.contains(z)


def distance_to_boundary(domain: DomainSpec, z):
    return domain.distance(z)


def simplex_domain(z0=(1 / 3, 1 / 3)) -> DomainSpec:
    """All of A as a polygon."""
    return DomainSpec.from_polygon([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], z0, tag="simplex")


# --------------------------------------------------------------------------
# z0 constraints

def _slope_stats(curve: BoundaryCurve, centre: np.ndarray, radius: float):
    tang = curve.tangents()
    near = np.linalg.norm(curve.points - centre, axis=1) <= radius
    near[np.argmin(np.abs(curve.u - 1.0))] = False
    return tang[near], curve.points[near]


def _point_at_distance(curve: BoundaryCurve, centre, radius) -> np.ndarray:
    d = np.linalg.norm(curve.points - centre, axis=1)
    i = int(np.argmin(np.abs(d - radius)))
    return curve.points[i]


def siv_z0_constraints(p, curve: BoundaryCurve, R1: float = 0.25) -> dict:
    """Constraint context for the SIV star centre (lines D1.1, H1, D1.2, D1.3)."""
    B = curve.start
    tang, _ = _slope_stats(curve, B, R1)
    good = tang[:, 0] > 0
    nu = float(np.min(tang[good, 1] / tang[good, 0])) if good.any() else float("nan")
    Dpt = _point_at_distance(curve, B, R1)
    E1 = float(curve.points[:, 0].max())
    return {"model": "siv", "nu": nu, "R1": R1, "D": Dpt.tolist(), "E1": E1,
            "params": p.to_dict()}


def siv_z0_checks(z, ctx) -> dict:
    p = ctx["params"]
    b, chi, eta = p["beta"], p["chi"], p["eta"]
    mg, mt = p["mu"] + p["gamma"], p["mu"] + p["theta"]
    z1, z2 = float(z[0]), float(z[1])
    return {
        "above_D1.1": (b - mg) - b * (1 - chi) * z2 - b * z1 < 0,
        "above_H1": eta - eta * z1 - (eta + mt) * z2 - chi * b * z1 * z2 < 0,
        "below_D1.2": z2 < ctx["nu"] * z1,
        "right_of_D1.3": z1 > ctx["E1"],
        "below_R1_point": z2 < ctx["D"][1],
    }


def s0is1_z0_constraints(p, curve: BoundaryCurve, R2: float = 0.2, R3: float = 1 / 6) -> dict:
    """Constraint context for the S0IS1 star centre (lines D2.1, H2, D2.2, D2.3)."""
    B, F = curve.start, curve.end
    tang, _ = _slope_stats(curve, F, R2)
    good = tang[:, 0] < 0
    omega = float(np.min(-tang[good, 1] / tang[good, 0])) if good.any() else float("nan")
    tangB, _ = _slope_stats(curve, B, R3)
    slope_bound = -p.alpha / (p.alpha + p.mu - p.beta)
    okB = tangB[:, 0] != 0
    slope_at_B_ok = bool(np.all(tangB[okB, 1] / tangB[okB, 0] > slope_bound))
    d = float(B[0])
    return {"model": "s0is1", "omega": omega, "R2": R2, "R3": R3, "d": d,
            "F": F.tolist(), "G": [d, 1.0 - d], "tangent_bound_at_B": slope_at_B_ok,
            "params": p.to_dict()}


def s0is1_z0_checks(z, ctx) -> dict:
    p = ctx["params"]
    b, a, mu, r = p["beta"], p["alpha"], p["mu"], p["r"]
    z1, z2 = float(z[0]), float(z[1])
    d, F = ctx["d"], np.asarray(ctx["F"])
    proj = np.array([0.0, z1 + z2])
    return {
        "below_D2.1": z2 < z1 / (r - 1) + (a + mu - b) / (b * (r - 1)),
        "below_H2": z2 < a * z1 / (r * b * z1 + mu),
        "right_of_D2.2": z1 > (1.0 - z2) / ctx["omega"],
        "right_of_D2.3": z1 > d - z2 * (a + mu - b) / a,
        "on_G_line": abs(z2 - (1.0 - d)) < 1e-9,
        "within_R3_of_B": abs(z1 - d) < ctx["R3"],
        "within_R2_of_F": float(np.linalg.norm(proj - F)) < ctx["R2"],
    }


def _star_ok(vertices: np.ndarray, z0: np.ndarray) -> np.ndarray:
    a = vertices - z0
    b = np.roll(vertices, -1, axis=0) - z0
    return _cross(a, b) > 0


def build_domain(curve: BoundaryCurve, model: str, params, z0=None,
                 grid_step: float = 0.01) -> DomainSpec:
    """Close the curve along the faces of A into the basin of the stable
    endemic equilibrium and choose a star centre z0."""
    if abs(curve.start[1]) > 1e-9 or abs(curve.end.sum() - 1.0) > 1e-9:
        raise ValueError("curve must run from the bottom face to the hypotenuse")
    verts = np.vstack([curve.points, [[1.0, 0.0]]])
    base = DomainSpec(verts, np.array([0.5, 0.1]), np.array([0.5, 0.1]), curve=curve, tag=model)
    if model == "siv":
        ctx = siv_z0_constraints(params, curve)
        checks = siv_z0_checks
        if z0 is None:
            g = np.arange(grid_step, 1.0, grid_step)
            cand = np.array([(x, y) for x in g for y in g if x + y < 1.0])
    elif model == "s0is1":
        ctx = s0is1_z0_constraints(params, curve)
        checks = s0is1_z0_checks
        if z0 is None:
            xs = np.arange(0.0, ctx["d"], grid_step / 10)
            cand = np.column_stack([xs, np.full_like(xs, 1.0 - ctx["d"])])
    else:
        raise ValueError(f"unknown model {model!r}")
    if z0 is None:
        inside = base.contains_many(cand)
        cand = cand[inside]
        keep = [c for c in cand if all(checks(c, ctx).values()) and _star_ok(base.vertices, c).all()]
        if not keep:
            raise ValueError("no star centre satisfies the geometric constraints")
        keep = np.array(keep)
        dist = base.distance(keep)
        z0 = keep[int(np.argmax(dist))]
    z0 = np.asarray(z0, dtype=float)
    verdicts = {k: bool(v) for k, v in checks(z0, ctx).items()}
    ctx = {k: v for k, v in ctx.items() if k != "params"}
    ctx["checks"] = verdicts
    return DomainSpec(base.vertices, z0, z0, curve=curve, tag=model, constraints=ctx)


# --------------------------------------------------------------------------
# assumption checks

@dataclass
class AssumptionReport:
    items: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, **info) -> None:
        self.items[name] = {"passed": bool(passed), **info}

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.items.values())

    def __getitem__(self, name):
        return self.items[name]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "items": _jsonable(self.items)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def check_star_shape(domain: DomainSpec, n_boundary_samples: int = 2000,
                     a_grid: Sequence[float] = (0.01, 0.05, 0.1, 0.25, 0.5)) -> AssumptionReport:
    """Star shape w.r.t. z0 and the constants c1, c2 of the shifted points.

    For a counter-clockwise polygon every ray from z0 meets the boundary once
    iff each edge subtends a strictly positive oriented angle at z0.
    """
    rep = AssumptionReport()
    z0 = domain.z0
    ok = _star_ok(domain.vertices, z0)
    bad = np.flatnonzero(~ok)
    rep.add("star_shape", ok.all() and domain.contains(z0),
            failing_edges=[[domain.starts[i].tolist(), domain.ends[i].tolist()] for i in bad[:50]],
            n_failing=int(bad.size))
    ys = np.vstack([domain.sample_boundary(n_boundary_samples), domain.vertices])
    c1 = float(np.linalg.norm(ys - z0, axis=1).max())
    c2 = math.inf
    worst = None
    for a in a_grid:
        ya = ys + a * (z0 - ys)
        ratio = domain.distance(ya) / a
        i = int(np.argmin(ratio))
        if ratio[i] < c2:
            c2, worst = float(ratio[i]), {"y": ys[i].tolist(), "a": a}
    rep.add("shift_constants", c2 > 0, c1=c1, c2=c2, worst=worst)
    return rep


def _grid_in_domain(domain: DomainSpec, step: float) -> np.ndarray:
    g = np.arange(0.0, 1.0 + 1e-12, step)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[pts.sum(axis=1) <= 1.0 + 1e-12]
    return pts[domain.contains_many(pts)]


def check_rate_monotonicity(net: ReactionNetwork, domain: DomainSpec, grid_step: float = 0.01,
                            a_grid: Optional[Sequence[float]] = None) -> AssumptionReport:
    """Largest lambda_1 for each lambda_2: any violation beta_j(z^a) <= beta_j(z)
    with a < lambda_2 caps lambda_1 at beta_j(z)."""
    if a_grid is None:
        a_grid = np.concatenate([np.linspace(0.005, 0.1, 20), np.linspace(0.15, 1.0, 18)])
    a_grid = np.sort(np.asarray(a_grid, dtype=float))
    a_grid = a_grid[(a_grid > 0) & (a_grid < 1.0 + 1e-12)]
    pts = _grid_in_domain(domain, grid_step)
    base = net.rates(pts)
    # cap[m] = min beta_j(z) over violations at a_grid[m]
    cap = np.full(len(a_grid), math.inf)
    witness = [None] * len(a_grid)
    for m, a in enumerate(a_grid):
        shifted = net.rates(pts + a * (domain.z0 - pts))
        viol = shifted <= base
        if viol.any():
            vals = np.where(viol, base, np.inf)
            flat = int(np.argmin(vals))
            i, j = divmod(flat, net.k)
            cap[m] = vals[i, j]
            witness[m] = {"z": pts[i].tolist(), "j": int(j), "a": float(a), "beta": float(vals[i, j])}
    lam1_of_lam2 = np.minimum.accumulate(cap)
    feasible = np.flatnonzero(lam1_of_lam2 > 0)
    if feasible.size:
        m = int(feasible[-1])
        lam2 = float(a_grid[m + 1]) if m + 1 < len(a_grid) else 1.0
        lam1 = float(lam1_of_lam2[m])
        passed = True
    else:
        lam2 = lam1 = 0.0
        passed = False
    rep = AssumptionReport()
    rep.add("rate_monotonicity", passed, lambda1=lam1, lambda2=lam2,
            lambda1_by_lambda2=[[float(a), float(c)] for a, c in zip(a_grid, lam1_of_lam2)],
            witnesses=[w for w in witness if w is not None][:20])
    return rep


def check_ca_bound(net: ReactionNetwork, domain: DomainSpec, nu: float, a_grid: Sequence[float],
                   c2: float, grid_step: float = 0.005, n_boundary: int = 4000) -> AssumptionReport:
    """C_a = min_j min_{dist(z, boundary) >= c2 a} beta_j(z) against exp(-a^-nu).

    The minimum is taken over a grid of the domain plus the boundary pushed
    inward along its normal by c2 a, so small a is resolved."""
    if not 0 < nu < 0.5:
        raise ValueError("nu must lie in (0, 1/2)")
    pts = _grid_in_domain(domain, grid_step)
    pdist = domain.distance(pts)
    bnd = np.vstack([domain.sample_boundary(n_boundary), domain.vertices])
    toward = domain.z0 - bnd
    toward /= np.linalg.norm(toward, axis=1, keepdims=True)
    rows = []
    for a in sorted(a_grid):
        level = c2 * a
        cand = [pts[pdist >= level]]
        for scale in (1.0, 1.5, 2.0, 4.0):
            q = bnd + scale * level * toward
            q = q[domain.contains_many(q)]
            if len(q):
                cand.append(q[domain.distance(q) >= level * (1 - 1e-9)])
        cand = np.vstack(cand)
        if len(cand) == 0:
            raise ValueError(f"no point at distance >= {level} from the boundary (a={a})")
        Ca = float(net.rates(cand).min())
        bound = math.exp(-a ** (-nu))
        rows.append({"a": float(a), "C_a": Ca, "bound": bound, "passed": Ca >= bound})
    a0 = 0.0
    for row in rows:
        if not row["passed"]:
            break
        a0 = row["a"]
    rep = AssumptionReport()
    rep.add("ca_bound", a0 > 0, a0=a0, nu=nu, rows=rows)
    return rep


def check_sector_condition(net: ReactionNetwork, curve: BoundaryCurve,
                           n_samples: int = 200) -> AssumptionReport:
    """Below the saddle: g1 < 0, g2 > 0, g1 + g2 > 0; above it the same for -g."""
    zt = curve.saddle
    below = curve.points[:, 1] < zt[1]
    above = curve.points[:, 1] > zt[1]
    rep = AssumptionReport()
    for name, sel, sign in (("below_saddle", below, 1.0), ("above_saddle", above, -1.0)):
        sub = curve.points[sel]
        seg = np.linalg.norm(np.diff(sub, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        t = np.linspace(0.0, s[-1], n_samples)
        pts = np.column_stack([np.interp(t, s, sub[:, i]) for i in range(2)])
        g = sign * net.drift_field(pts)
        keep = np.linalg.norm(pts - zt, axis=1) > 1e-9
        g, pts = g[keep], pts[keep]
        c1, c2, c3 = g[:, 0] < 0, g[:, 1] > 0, g.sum(axis=1) > 0
        bad = ~(c1 & c2 & c3)
        rep.add(name, not bad.any(), n_samples=int(len(pts)),
                witnesses=pts[bad][:20].tolist(),
                min_g1_plus_g2=float(g.sum(axis=1).min()))
    return rep


def sector_half_line_rate(params, saddle, a: float) -> tuple[float, float]:
    """d(z1 + z2)/dt at (z~1 + a, z~2 - a): (direct drift, closed form)."""
    from .model_core import build_s0is1
    net = build_s0is1(params)
    z = np.array([saddle[0] + a, saddle[1] - a])
    direct = float(net.drift_field(z).sum())
    closed = (params.alpha + params.mu - params.r * params.beta * saddle[1]) * a
    return direct, closed


def default_lyapunov(domain: DomainSpec, cap: float = 0.05):
    """Smoothed, clamped signed distance to the reflecting part of the boundary."""
    def u(pts):
        pts = np.atleast_2d(pts)
        d = domain.distance_reflecting(pts)
        sgn = np.where(domain.contains_many(pts), 1.0, -1.0)
        return cap * np.tanh(sgn * d / cap)
    return u


def _fd_grad(u, pts, h=1e-6):
    pts = np.atleast_2d(pts)
    g = np.empty_like(pts)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        g[:, i] = (u(pts + e) - u(pts - e)) / (2 * h)
    return g


def check_lyapunov(u: Optional[Callable], net: ReactionNetwork, domain: DomainSpec, N: int,
                   grid_step: float = 0.01, grad: Optional[Callable] = None,
                   n_boundary: int = 400) -> AssumptionReport:
    """Numerical check of the Lyapunov-function conditions for a candidate u.

    Boundary conditions are checked on the reflecting part of the boundary.
    In the last condition only transitions with positive rate are counted,
    since a zero-rate jump across a face of A cannot happen."""
    if u is None:
        u = default_lyapunov(domain)
    if grad is None:
        grad = lambda p: _fd_grad(u, p)
    rep = AssumptionReport()
    pts = _grid_in_domain(domain, grid_step)
    dist = domain.distance(pts)
    interior = pts[dist > 1e-9]
    uvals = u(interior)
    rep.add("positive_inside", bool(np.all(uvals > 0)),
            witnesses=interior[uvals <= 0][:20].tolist())
    m = domain.reflecting_edges
    bstarts, bends = domain.starts[m], domain.ends[m]
    t = np.linspace(0, 1, max(2, n_boundary // max(1, m.sum())) + 1)[:-1]
    bpts = (bstarts[:, None, :] + t[None, :, None] * (bends - bstarts)[:, None, :]).reshape(-1, 2)
    ub = u(bpts)
    rep.add("zero_on_boundary", bool(np.all(np.abs(ub) < 1e-8)), max_abs=float(np.abs(ub).max()))
    gb = np.linalg.norm(grad(bpts), axis=1)
    rep.add("gradient_nonzero", bool(np.all(gb > 1e-6)), min_norm=float(gb.min()),
            witnesses=bpts[gb <= 1e-6][:20].tolist())
    C2 = float(uvals.max()) if len(uvals) else 0.0
    below_cap = uvals < C2 * (1 - 1e-9)
    dd = dist[dist > 1e-9]
    C1 = float(np.min(uvals[below_cap] / dd[below_cap])) if below_cap.any() else math.inf
    rep.add("distance_lower_bound", C1 > 0, C1=C1, C2=C2)
    g_all = grad(pts)
    b = net.drift_field(pts)
    inner = (b * g_all).sum(axis=1)
    rep.add("drift_nonnegative", bool(np.all(inner >= -1e-10)), min_value=float(inner.min()),
            witnesses=pts[inner < -1e-10][:20].tolist())
    mask = domain.lattice_mask(N)
    lat = np.argwhere(mask)
    lz = lat / N
    rates = net.rates(lz)
    H = net.jumps
    active = np.zeros((len(lat), net.k), dtype=bool)
    for j in range(net.k):
        c = lat + H[j]
        inb = (c >= 0).all(axis=1) & (c.sum(axis=1) <= N)
        outside = np.ones(len(lat), dtype=bool)
        outside[inb] = ~mask[c[inb, 0], c[inb, 1]]
        active[:, j] = outside & (rates[:, j] > 0)
    count = active.sum(axis=1)
    sel = count > 0
    if sel.any():
        gN = (active[sel] * rates[sel]) @ H.astype(float)
        val = (-gN * grad(lz[sel])).sum(axis=1) / count[sel]
        rho = float(val.min())
        wit = lz[sel][val <= 0][:20].tolist()
    else:
        rho, wit = math.inf, []
    rep.add("reflection_push", rho > 0, rho=rho, n_active=int(sel.sum()), witnesses=wit)
    return rep


def separatrix_basin_test(net: ReactionNetwork, curve: BoundaryCurve, domain: DomainSpec,
                          stable, dfe, n_points: int = 50, disp: float = 1e-3,
                          T: float = 3000.0, tol: float = 1e-3) -> dict:
    """Points displaced inward (toward z0) must flow to the stable endemic
    equilibrium, points displaced outward to the disease-free equilibrium."""
    idx = np.linspace(0, len(curve.points) - 1, n_points + 2).astype(int)[1:-1]
    idx = [i for i in idx if abs(curve.u[i] - 1.0) > 1e-12]
    results = []
    for i in idx:
        y = curve.points[i]
        tang = curve.tangents()[i]
        n = np.array([-tang[1], tang[0]])
        n /= np.linalg.norm(n)
        if np.dot(n, domain.z0 - y) < 0:
            n = -n
        inward, outward = y + disp * n, y - disp * n
        out = {"u": float(curve.u[i])}
        for name, z, target in (("inside", inward, stable), ("outside", outward, dfe)):
            z = np.clip(z, 0.0, None)
            if z.sum() > 1:
                z = z / z.sum()
            end = integrate(net, z, T, tol=1e-9).final
            out[name] = bool(np.linalg.norm(end - np.asarray(target)) < tol)
        results.append(out)
    return {"passed": all(r["inside"] and r["outside"] for r in results), "points": results}
