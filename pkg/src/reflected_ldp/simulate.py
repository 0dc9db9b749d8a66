"""Exact event-driven simulation of the free and the reflected process.

States are stored as integer counts ``x = N z`` so that lattice membership
and the conservation identities are exact.  The random stream of replicate
``r`` under master seed ``m`` is ``PCG64(SeedSequence([m, r]))``, which makes
batches order-independent.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .boundary import DomainSpec
from .model_core import DomainError, ReactionNetwork, in_simplex, snap_initial

_EMPTY_MASK = np.zeros((1, 1), dtype=np.bool_)
_NO_REF_T = np.zeros(0)
_NO_REF_Z = np.zeros((0, 1))


def make_rng(seed: int, replicate: Optional[int] = None) -> np.random.Generator:
    entropy = [int(seed)] if replicate is None else [int(seed), int(replicate)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _net_key(net: ReactionNetwork) -> tuple:
    return (net.tag, net.jumps.tobytes(), net.coef.tobytes(), net.zexp.tobytes(), net.sexp.tobytes())


@dataclass(frozen=True, eq=False)
class PathRecord:
    """A cadlag path: event times, transition indices, applied flags and the
    integer state after each event."""

    N: int
    T: float
    initial_counts: np.ndarray
    times: np.ndarray
    transitions: np.ndarray
    applied: np.ndarray
    counts: np.ndarray
    reflected: bool = False
    net_key: tuple = field(default=(), repr=False)

    def __post_init__(self):
        for name in ("initial_counts", "times", "transitions", "applied", "counts"):
            getattr(self, name).setflags(write=False)

    @property
    def d(self) -> int:
        return self.initial_counts.shape[0]

    @property
    def initial(self) -> np.ndarray:
        return self.initial_counts / self.N

    @property
    def states(self) -> np.ndarray:
        return self.counts / self.N

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def suppressed_count(self, k: int) -> np.ndarray:
        return np.bincount(self.transitions[~self.applied], minlength=k)

    def all_counts(self) -> np.ndarray:
        """Integer states including the initial one, shape (n_events + 1, d)."""
        return np.vstack([self.initial_counts[None, :], self.counts])

    def state_at(self, t) -> np.ndarray:
        """Right-continuous evaluation Z(t)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        return self.all_counts()[idx] / self.N

    def equals(self, other: "PathRecord") -> bool:
        return (self.N == other.N and self.T == other.T
                and np.array_equal(self.initial_counts, other.initial_counts)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.transitions, other.transitions)
                and np.array_equal(self.applied, other.applied)
                and np.array_equal(self.counts, other.counts))

    def to_csv(self, path=None) -> Optional[str]:
        """Header t,j,applied,z1..zd; rows at t = 0 and t = T carry j = -1.
        Returns the text when no path is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "j", "applied", *[f"z{i + 1}" for i in range(self.d)]])
        w.writerow([repr(0.0), -1, 1, *[repr(float(v)) for v in self.initial]])
        for t, j, a, s in zip(self.times, self.transitions, self.applied, self.states):
            w.writerow([repr(float(t)), int(j), int(bool(a)), *[repr(float(v)) for v in s]])
        last = self.states[-1] if self.n_events else self.initial
        w.writerow([repr(float(self.T)), -1, 1, *[repr(float(v)) for v in last]])
        if path is None:
            return buf.getvalue()
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
        return None

    @classmethod
    def from_csv(cls, path, N: int, reflected: bool = False) -> "PathRecord":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if header[:3] != ["t", "j", "applied"]:
            raise ValueError(f"unexpected path header {header}")
        body = rows[1:]
        init = np.rint(np.array([float(v) for v in body[0][3:]]) * N).astype(np.int64)
        ev = body[1:-1]
        T = float(body[-1][0])
        times = np.array([float(r[0]) for r in ev])
        js = np.array([int(r[1]) for r in ev], dtype=np.int64)
        ap = np.array([bool(int(r[2])) for r in ev], dtype=bool)
        st = np.rint(np.array([[float(v) for v in r[3:]] for r in ev]).reshape(len(ev), -1) * N).astype(np.int64)
        return cls(N, T, init, times, js, ap, st, reflected)


def _initial_counts(z, N: int) -> np.ndarray:
    return np.floor(np.asarray(z, dtype=float) * N + 1e-9).astype(np.int64)


def _mode_and_mask(net: ReactionNetwork, domain, N: int):
    if domain is None:
        return K.SIMPLEX, _EMPTY_MASK
    if domain == "unbounded":
        return K.UNBOUNDED, _EMPTY_MASK
    if not isinstance(domain, DomainSpec):
        raise TypeError("domain must be a DomainSpec, None (all of A) or 'unbounded'")
    if net.d != 2:
        raise ValueError("polygonal domains are two-dimensional")
    return K.MASK, np.ascontiguousarray(domain.lattice_mask(N))


def _run_path(net, N, x0, T, rng, mode, mask, reflected):
    cap = int(min(max(64, 2 * N * net.k * max(net.sigma, 1e-12) * T), 5_000_000))
    times, js, ap, st, err = K.path_kernel(rng, x0, N, float(T), net.jumps, net.coef,
                                           net.zexp, net.sexp, mode, mask, cap)
    if err != K.ERR_NONE:
        name = net.names[err] if net.names else str(err)
        raise DomainError(f"transition {err} ({name}) would leave A; "
                          "its rate does not vanish on the corresponding face")
    return PathRecord(int(N), float(T), x0.copy(), times.copy(), js.copy(), ap.copy(),
                      st.copy(), reflected, _net_key(net))


def _check_args(N, T):
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    if not T > 0:
        raise ValueError("T must be positive")


def simulate_free(net: ReactionNetwork, N: int, z, T: float, seed: int,
                  replicate: Optional[int] = None, unbounded: bool = False) -> PathRecord:
    """Gillespie direct method for the free process started at floor(N z)/N.

    ``unbounded`` drops the state-space check (for test networks living
    outside the simplex)."""
    _check_args(N, T)
    z = np.asarray(z, dtype=float)
    if z.shape != (net.d,):
        raise ValueError(f"state has dimension {z.shape}, network has d={net.d}")
    if not unbounded and not in_simplex(z):
        raise DomainError(f"initial state {z} is outside A")
    mode = K.UNBOUNDED if unbounded else K.FREE
    return _run_path(net, int(N), _initial_counts(z, N), T, make_rng(seed, replicate),
                     mode, _EMPTY_MASK, False)


def reflected_start(net: ReactionNetwork, domain, N: int, z) -> np.ndarray:
    """Integer initial state of the reflected process."""
    z = np.asarray(z, dtype=float)
    if domain is None:
        if not in_simplex(z):
            raise DomainError(f"initial state {z} is outside A")
        return _initial_counts(z, N)
    if not domain.contains(z):
        raise DomainError(f"initial state {z} is outside the domain")
    return np.rint(snap_initial(z, domain, N) * N).astype(np.int64)


def simulate_reflected(net: ReactionNetwork, domain: Optional[DomainSpec], N: int, z, T: float,
                       seed: int, replicate: Optional[int] = None) -> PathRecord:
    """Same scheme, but a jump whose target leaves the closed domain is
    recorded as suppressed and the state is kept.  ``domain=None`` means all
    of A."""
    _check_args(N, T)
    mode, mask = _mode_and_mask(net, domain, int(N))
    x0 = reflected_start(net, domain, int(N), z)
    return _run_path(net, int(N), x0, T, make_rng(seed, replicate), mode, mask, True)


# --------------------------------------------------------------------------
# batches

@dataclass(frozen=True)
class BatchSummary:
    replicates: np.ndarray
    sup_dist: np.ndarray
    exited: np.ndarray
    occupation: np.ndarray
    n_events: np.ndarray
    n_suppressed: np.ndarray
    final: np.ndarray
    slice_counts: Optional[np.ndarray] = None
    slice_suppressed: Optional[np.ndarray] = None
    slice_osc: Optional[np.ndarray] = None
    grid_counts: Optional[np.ndarray] = None


def simulate_batch(net: ReactionNetwork, N: int, z, T: float, master_seed: int,
                   replicates: Sequence[int], domain=None, reflected: bool = True,
                   reference: Optional[tuple[np.ndarray, np.ndarray]] = None,
                   threshold: float = math.inf, n_slices: int = 0,
                   threads: int = 1) -> BatchSummary:
    """Summaries of many replicates.  ``reference=(times, states)`` is a
    piecewise-linear path for sup-distances; the loop stops early once the
    distance reaches ``threshold``."""
    _check_args(N, T)
    N = int(N)
    if reflected:
        mode, mask = _mode_and_mask(net, domain, N)
        x0 = reflected_start(net, domain, N, z)
    else:
        mode, mask = K.FREE, _EMPTY_MASK
        if not in_simplex(z):
            raise DomainError(f"initial state {z} is outside A")
        x0 = _initial_counts(z, N)
    if reference is None:
        ref_t, ref_z = _NO_REF_T, _NO_REF_Z
    else:
        ref_t = np.ascontiguousarray(reference[0], dtype=float)
        ref_z = np.ascontiguousarray(reference[1], dtype=float)
        if ref_t[0] > 0 or ref_t[-1] < T - 1e-12:
            raise ValueError("reference must cover [0, T]")
    keep_slices = n_slices > 0
    S = max(int(n_slices), 1)
    reps = np.asarray(list(replicates), dtype=np.int64)

    def one(r):
        out = K.summary_kernel(make_rng(master_seed, int(r)), x0, N, float(T), net.jumps, net.coef,
                               net.zexp, net.sexp, mode, mask, ref_t, ref_z, float(threshold), S)
        if out[5] != K.ERR_NONE:
            raise DomainError(f"transition {out[5]} would leave A (replicate {r})")
        return out

    if threads > 1 and len(reps) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, reps, chunksize=256))
    else:
        results = [one(r) for r in reps]
    col = lambda i, dt=None: np.array([o[i] for o in results], dtype=dt)
    return BatchSummary(
        replicates=reps,
        sup_dist=col(0, float),
        exited=col(1, bool),
        occupation=col(2, float),
        n_events=col(3, np.int64),
        n_suppressed=col(4, np.int64),
        final=np.array([o[6] for o in results]).reshape(len(reps), -1) / N,
        slice_counts=np.array([o[7] for o in results]) if keep_slices else None,
        slice_suppressed=np.array([o[8] for o in results]) if keep_slices else None,
        slice_osc=np.array([o[9] for o in results]) if keep_slices else None,
        grid_counts=np.array([o[10] for o in results]) if keep_slices else None,
    )


# --------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class DiagnosticsReport:
    sup_martingale: float
    occupation: float
    sup_phi: float
    suppressed_count: np.ndarray
    martingale_final: np.ndarray
    identity_residual: float

    def to_dict(self) -> dict:
        return {
            "sup_martingale": self.sup_martingale,
            "occupation": self.occupation,
            "sup_phi": self.sup_phi,
            "suppressed_count": self.suppressed_count.tolist(),
            "martingale_final": self.martingale_final.tolist(),
            "identity_residual": self.identity_residual,
        }


def blocked_indicators(net: ReactionNetwork, domain, N: int, counts: np.ndarray) -> np.ndarray:
    """1{x + h_j not in the closed domain} for integer states x, shape (n, k)."""
    counts = np.atleast_2d(counts)
    cand = counts[:, None, :] + net.jumps[None, :, :]
    out = (cand < 0).any(axis=-1) | (cand.sum(axis=-1) > N)
    if isinstance(domain, DomainSpec):
        mask = domain.lattice_mask(N)
        ok = ~out
        c = cand[ok]
        inside = mask[c[:, 0], c[:, 1]]
        tmp = out.copy()
        tmp[ok] = ~inside
        out = tmp
    return out


def diagnostics(path: PathRecord, net: ReactionNetwork, domain=None) -> DiagnosticsReport:
    """M(t) = Z(t) - z^N - int b + int g_N,  Phi(t) = M(t) - int g_N and the
    occupation integral, exact because rates are constant between events."""
    if path.net_key and path.net_key != _net_key(net):
        raise ValueError("path was produced by a different network")
    if path.d != net.d:
        raise ValueError("dimension mismatch between path and network")
    N = path.N
    states = path.all_counts()
    t_knots = np.concatenate([[0.0], path.times, [path.T]])
    dt = np.diff(t_knots)  # one interval per state
    z = states / N
    rates = net.rates(z)
    H = net.jumps.astype(float)
    b = rates @ H
    if path.reflected:
        blocked = blocked_indicators(net, domain, N, states)
    else:
        blocked = np.zeros_like(rates, dtype=bool)
    g = (blocked * rates) @ H
    int_b = np.vstack([np.zeros(net.d), np.cumsum(b * dt[:, None], axis=0)])
    int_g = np.vstack([np.zeros(net.d), np.cumsum(g * dt[:, None], axis=0)])
    disp = z - z[0]
    # value right after event i (i = 0 is time 0) and left limit before event i+1
    M_right = disp - int_b[:-1] + int_g[:-1]
    M_left = disp - int_b[1:] + int_g[1:]
    Phi_right = disp - int_b[:-1]
    Phi_left = disp - int_b[1:]
    nrm = lambda a: np.linalg.norm(a, axis=1).max()
    # second reconstruction: compensated sum of applied jumps
    jumps_applied = np.zeros((path.n_events + 1, net.d))
    if path.n_events:
        inc = np.where(path.applied[:, None], H[path.transitions], 0.0) / N
        jumps_applied[1:] = np.cumsum(inc, axis=0)
    comp = ((~blocked) * rates) @ H
    int_comp = np.concatenate([np.zeros((1, net.d)), np.cumsum(comp * dt[:, None], axis=0)])
    M_alt_final = jumps_applied[-1] - int_comp[-1]
    M_final = M_left[-1]
    return DiagnosticsReport(
        sup_martingale=float(max(nrm(M_right), nrm(M_left))),
        occupation=float((blocked.sum(axis=1) * dt).sum()),
        sup_phi=float(max(nrm(Phi_right), nrm(Phi_left))),
        suppressed_count=path.suppressed_count(net.k),
        martingale_final=M_final,
        identity_residual=float(np.abs(M_final - M_alt_final).max()),
    )
