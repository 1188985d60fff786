"""Exact event-driven simulation of the n-particle jump process.

Each particle jumps forward at rate w(x_i - m), where m is the center of
mass. Three exact samplers are provided:

* ``direct``: O(n) per event, any rate function;
* ``thinning``: uniformization at total rate n * sup w, bounded rates only;
* ``exponential``: O(log n) per event for w = exp(-beta x).

A fourth, ``coupled``, runs in pure Python with one random stream per
particle and also carries the dominating system driven by the same
proposals with every jump accepted.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .model import (IDENTITY, Exponential, InitialCondition, JumpLaw, RateFunction,
                    expected_post_jump)
from .seeding import config_hash, stream_seed

SNAPSHOT_FULL_LIMIT = 10_000
RECOMPUTE_EVERY = 1_000_000
BUFFER_BLOCK = 1 << 16
METHODS = ("auto", "direct", "thinning", "exponential")


class SimulationError(RuntimeError):
    pass


class RateOverflowError(SimulationError):
    def __init__(self, min_gap: float, t: float):
        super().__init__(
            f"total jump rate overflowed at t={t:.6g}; min(x_i - m) = {min_gap:.6g}")
        self.min_gap = min_gap
        self.t = t


@dataclass
class ParticleState:
    """Positions, the compensated position sum and the clock."""

    positions: np.ndarray
    t: float = 0.0
    total: float = math.nan
    total_lo: float = 0.0

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float)
        if self.positions.ndim != 1 or self.positions.size < 1:
            raise SimulationError("need at least one particle")
        if math.isnan(self.total):
            s, c = K.compensated_sum(self.positions)
            self.total, self.total_lo = s, c

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def m(self) -> float:
        return (self.total + self.total_lo) / self.n

    def m_recomputed(self) -> float:
        return math.fsum(self.positions) / self.n

    def copy(self) -> "ParticleState":
        return ParticleState(self.positions.copy(), self.t, self.total, self.total_lo)


@dataclass(frozen=True)
class Event:
    i: int
    dt: float
    z: float


def step(state: ParticleState, w: RateFunction, law: JumpLaw,
         rng: np.random.Generator) -> tuple[ParticleState, Event]:
    """One event of the direct method; returns a new state and the event."""
    x = state.positions
    m = state.m
    with np.errstate(over="ignore"):
        rates = np.asarray(w(x - m), dtype=float)
        R = float(rates.sum())
    if not math.isfinite(R):
        raise RateOverflowError(float(np.min(x - m)), state.t)
    dt = rng.standard_exponential() / R
    target = rng.random() * R
    i = int(np.searchsorted(np.cumsum(rates), target, side="right"))
    i = min(i, x.size - 1)
    z = float(law.sample(rng))
    new = state.copy()
    new.positions[i] += z
    st = np.array([0.0, new.total, new.total_lo, 0.0])
    K._add(st, z)
    new.total, new.total_lo = st[1], st[2]
    new.t = state.t + dt
    return new, Event(i, dt, z)


# ---------------------------------------------------------------------------
# Records


@dataclass
class EventLog:
    time: np.ndarray
    index: np.ndarray
    jump: np.ndarray

    def __len__(self):
        return self.time.size


@dataclass
class SimulationConfig:
    """Everything that determines a run (hashed into its records)."""

    rate: RateFunction
    law: JumpLaw
    n: int
    initial: InitialCondition = field(default_factory=InitialCondition)
    seed: int = 0
    replica: int = 0
    method: str = "auto"
    hist_width: float = 0.05
    max_events: int = 10**9

    def to_dict(self) -> dict:
        return {"rate": self.rate.to_dict(), "law": self.law.to_dict(), "n": self.n,
                "initial": self.initial.to_dict(), "seed": self.seed,
                "replica": self.replica, "method": self.method,
                "hist_width": self.hist_width, "max_events": self.max_events}

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def resolved_method(self) -> str:
        if self.method not in METHODS:
            raise SimulationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method != "auto":
            return self.method
        if isinstance(self.rate, Exponential):
            return "exponential" if self.n >= 64 else "direct"
        return "thinning" if self.rate.bounded else "direct"


@dataclass
class TrajectoryRecord:
    """Snapshots of a run at the scheduled times.

    ``positions[k]`` is the sorted configuration at ``times[k]`` when
    n <= 10^4; above that ``histograms[k] = (edges, counts)`` with exact
    ``m`` and ``abs_moment`` kept alongside.
    """

    times: np.ndarray
    m: np.ndarray
    jumps: np.ndarray
    abs_moment: np.ndarray
    positions: Optional[list]
    histograms: Optional[list]
    seed: int
    config_hash: str
    n: int
    method: str
    truncated: bool
    initial_positions: np.ndarray
    final_positions: np.ndarray
    proposals: int = 0
    events: Optional[EventLog] = None
    recompute_drift: float = 0.0

    def quantiles(self, qs=(0.1, 0.25, 0.5, 0.75, 0.9)) -> np.ndarray:
        """Per-snapshot quantiles (from positions or histogram CDFs)."""
        out = np.empty((self.times.size, len(qs)))
        for k in range(self.times.size):
            if self.positions is not None:
                out[k] = np.quantile(self.positions[k], qs)
            else:
                edges, counts = self.histograms[k]
                cdf = np.concatenate([[0.0], np.cumsum(counts)]) / counts.sum()
                out[k] = np.interp(qs, cdf, edges)
        return out


def _histogram(x: np.ndarray, width: float):
    lo = math.floor(x.min() / width) * width
    hi = (math.floor(x.max() / width) + 1) * width
    nb = int(round((hi - lo) / width))
    edges = lo + width * np.arange(nb + 1)
    counts = np.bincount(np.minimum(((x - lo) / width).astype(np.int64), nb - 1),
                         minlength=nb)
    return edges, counts


class _Streams:
    """Three buffered random streams (waiting times, uniforms, jump lengths)."""

    def __init__(self, seed_seq: np.random.SeedSequence, law: JumpLaw, block: int):
        ss_exp, ss_uni, ss_jump = seed_seq.spawn(3)
        self.g_exp = np.random.Generator(np.random.PCG64(ss_exp))
        self.g_uni = np.random.Generator(np.random.PCG64(ss_uni))
        self.g_jump = np.random.Generator(np.random.PCG64(ss_jump))
        self.law = law
        self.block = block
        self.exp = self.g_exp.standard_exponential(block)
        self.uni = self.g_uni.random(block)
        self.jump = np.asarray(law.sample(self.g_jump, block), dtype=float)
        self.ptr = np.zeros(3, dtype=np.int64)

    def refill(self, which: int):
        if which == K.NEED_EXP:
            self.exp = np.concatenate([self.exp[self.ptr[0]:],
                                       self.g_exp.standard_exponential(self.block)])
            self.ptr[0] = 0
        elif which == K.NEED_UNI:
            self.uni = np.concatenate([self.uni[self.ptr[1]:], self.g_uni.random(self.block)])
            self.ptr[1] = 0
        else:
            fresh = np.asarray(self.law.sample(self.g_jump, self.block), dtype=float)
            self.jump = np.concatenate([self.jump[self.ptr[2]:], fresh])
            self.ptr[2] = 0


def simulate(config: SimulationConfig, T: float, schedule: Optional[Sequence[float]] = None,
             keep_events: bool = False, initial_positions: Optional[np.ndarray] = None,
             block: int = BUFFER_BLOCK, recompute_every: int = RECOMPUTE_EVERY) -> TrajectoryRecord:
    """Run the process to time T, snapshotting at ``schedule`` (default {0, T}).

    Snapshots use the cadlag convention: a jump at exactly a snapshot time
    is included. If ``config.max_events`` is reached first the record is
    cut at the current time and flagged ``truncated``.
    """
    if not T > 0:
        raise SimulationError("T must be positive")
    sched = np.array(sorted(set([0.0, *(schedule if schedule is not None else [T])])))
    if sched[-1] > T:
        raise SimulationError("snapshot schedule extends past T")
    method = config.resolved_method()
    w, law, n = config.rate, config.law, config.n
    if method == "thinning" and not w.bounded:
        raise SimulationError("thinning needs a bounded rate")
    if method == "exponential" and not isinstance(w, Exponential):
        raise SimulationError("the exponential fast path needs an Exponential rate")
    root = stream_seed(config.seed, n, config.replica)
    init_ss, dyn_ss = root.spawn(2)
    if initial_positions is None:
        x = config.initial.generate(n, np.random.Generator(np.random.PCG64(init_ss)))
    else:
        x = np.array(initial_positions, dtype=float)
        if x.size != n:
            raise SimulationError("initial_positions has the wrong length")
    x0 = x.copy()
    streams = _Streams(dyn_ss, law, block)
    kind, p, tx, ty = w.kernel_spec()
    st = np.zeros(4)
    st[K.ST_SHI], st[K.ST_SLO] = K.compensated_sum(x)
    st[K.ST_PENDING] = math.nan
    cnt = np.zeros(4, dtype=np.int64)
    diag = np.zeros(2)
    cap = 1 << 16 if keep_events else 1
    log_t, log_i, log_z = np.empty(cap), np.empty(cap, dtype=np.int64), np.empty(cap)
    # exponential fast-path state
    ref = np.array([math.nan])
    v = np.empty(n)
    tree = np.zeros(n + 1)

    full = n <= SNAPSHOT_FULL_LIMIT
    times, ms, jumps, absm = [], [], [], []
    pos_list = [] if full else None
    hist_list = None if full else []
    truncated = False

    def snap(t):
        times.append(t)
        ms.append((st[K.ST_SHI] + st[K.ST_SLO]) / n)
        jumps.append(int(cnt[K.CNT_EVENTS]))
        absm.append(float(np.mean(np.abs(x))))
        if full:
            pos_list.append(np.sort(x))
        else:
            hist_list.append(_histogram(x, config.hist_width))

    for ts in sched:
        while True:
            if method == "direct":
                code = K.direct_kernel(x, st, cnt, streams.ptr, kind, p, tx, ty, ts,
                                       config.max_events, streams.exp, streams.uni,
                                       streams.jump, keep_events, log_t, log_i, log_z,
                                       recompute_every, diag)
            elif method == "thinning":
                code = K.thinning_kernel(x, st, cnt, streams.ptr, kind, p, tx, ty,
                                         float(w.sup_bound), ts, config.max_events,
                                         streams.exp, streams.uni, streams.jump, keep_events,
                                         log_t, log_i, log_z, recompute_every, diag)
            else:
                code = K.exponential_kernel(x, st, cnt, streams.ptr, float(w.beta), ref, v,
                                            tree, ts, config.max_events, streams.exp,
                                            streams.uni, streams.jump, keep_events, log_t,
                                            log_i, log_z, recompute_every, diag)
            if code == K.DONE:
                break
            if code in (K.NEED_EXP, K.NEED_UNI, K.NEED_JUMP):
                streams.refill(code)
            elif code == K.LOG_FULL:
                log_t = np.concatenate([log_t, np.empty(log_t.size)])
                log_i = np.concatenate([log_i, np.empty(log_i.size, dtype=np.int64)])
                log_z = np.concatenate([log_z, np.empty(log_z.size)])
            elif code == K.OVERFLOW:
                raise RateOverflowError(float(diag[1]), float(st[K.ST_T]))
            elif code == K.EVENT_CAP:
                truncated = True
                break
        if truncated:
            snap(float(st[K.ST_T]))
            break
        snap(float(ts))

    events = None
    if keep_events:
        k = int(cnt[K.CNT_LOG])
        events = EventLog(log_t[:k].copy(), log_i[:k].copy(), log_z[:k].copy())
    return TrajectoryRecord(np.array(times), np.array(ms), np.array(jumps), np.array(absm),
                            pos_list, hist_list, config.seed, config.hash(), n, method,
                            truncated, x0, x.copy(), int(cnt[K.CNT_PROPOSALS]), events,
                            float(diag[0]))


def run(config: SimulationConfig, T: float, schedule: Optional[Sequence[float]] = None,
        **kwargs) -> TrajectoryRecord:
    """Alias of :func:`simulate`."""
    return simulate(config, T, schedule, **kwargs)


# ---------------------------------------------------------------------------
# Coupled run with per-particle streams


@dataclass
class CoupledRecord:
    """Snapshots of the process x and its dominating system xd.

    ``proposals`` rows are (time, particle, jump length, accepted).
    """

    times: np.ndarray
    x: np.ndarray        # (snapshots, n), unsorted, particle order kept
    xd: np.ndarray       # dominating system, same shape
    proposals: np.ndarray
    initial_positions: np.ndarray

    def domination_holds(self) -> bool:
        """xd_i(t) - xd_i(s) >= x_i(t) - x_i(s) for consecutive snapshots s < t.

        Increments are rebuilt from the proposal log with correctly rounded
        sums, so the comparison is exact (subtracting absolute positions
        would reintroduce rounding of order 1e-15). The condition for all
        pairs follows by adding consecutive intervals.
        """
        p = self.proposals
        if p.size == 0:
            return True
        t, i, z, acc = p[:, 0], p[:, 1].astype(np.int64), p[:, 2], p[:, 3]
        slot = np.searchsorted(self.times, t, side="left")  # proposal in (times[k-1], times[k]]
        key = slot * (int(i.max()) + 1) + i
        order = np.lexsort((t, key))
        bounds = np.flatnonzero(np.diff(key[order])) + 1
        for grp in np.split(order, bounds):
            if math.fsum(z[grp]) < math.fsum(z[grp] * acc[grp]):
                return False
        return True


def simulate_coupled(rate: RateFunction, law: JumpLaw, initial_positions, T: float,
                     schedule: Optional[Sequence[float]] = None, seed: int = 0,
                     stream_order: Optional[Sequence[int]] = None) -> CoupledRecord:
    """Per-particle clocks of rate a = sup w drive both systems.

    Particle i owns a random stream (stream ``stream_order[i]`` of the
    seed). At each of its proposals it draws a jump length z; the
    dominating copy always moves by z, the process moves by z with
    probability w(x_i - m)/a. Permuting the initial positions and the
    streams together permutes the trajectories.
    """
    if not rate.bounded:
        raise SimulationError("the coupled construction needs a bounded rate")
    a = float(rate.sup_bound)
    x = np.array(initial_positions, dtype=float)
    n = x.size
    order = np.arange(n) if stream_order is None else np.asarray(stream_order)
    children = np.random.SeedSequence(seed).spawn(n)
    rngs = [np.random.Generator(np.random.PCG64(children[int(order[i])])) for i in range(n)]
    xd = x.copy()
    S = math.fsum(x)
    sched = sorted(set([0.0, *(schedule if schedule is not None else [T])]))
    heap = [(rngs[i].standard_exponential() / a, i) for i in range(n)]
    heapq.heapify(heap)
    snaps_x, snaps_xd, props = [], [], []
    for ts in sched:
        while heap[0][0] <= ts:
            t, i = heapq.heappop(heap)
            r = rngs[i]
            z = float(law.sample(r))
            u = r.random()
            xd[i] += z
            acc = u * a < float(rate(x[i] - S / n))
            if acc:
                x[i] += z
                S += z
            props.append((t, i, z, float(acc)))
            heapq.heappush(heap, (t + r.standard_exponential() / a, i))
        snaps_x.append(x.copy())
        snaps_xd.append(xd.copy())
    return CoupledRecord(np.array(sched), np.array(snaps_x), np.array(snaps_xd),
                         np.array(props).reshape(-1, 4), np.array(initial_positions, float))


# ---------------------------------------------------------------------------
# Martingale residual


@dataclass
class ResidualPath:
    """A_{s,f} just before (``left``) and just after (``right``) each event."""

    event_times: np.ndarray
    left: np.ndarray
    right: np.ndarray
    t_end: float
    final: float

    @property
    def sup(self) -> float:
        vals = [abs(self.final)]
        if self.left.size:
            vals += [float(np.max(np.abs(self.left))), float(np.max(np.abs(self.right)))]
        return max(vals)


def _in_H(f) -> tuple[bool, bool]:
    """(is admissible, is constant) for a test function."""
    if f is IDENTITY:
        return True, False
    probe = np.concatenate([-np.logspace(-3, 8, 200)[::-1], [0.0], np.logspace(-3, 8, 200)])
    vals = np.asarray(f(probe), dtype=float)
    if vals.shape != probe.shape or not np.all(np.isfinite(vals)):
        return False, False
    if np.max(np.abs(vals)) > 1.0 + 1e-12:
        return False, False
    return True, bool(np.all(vals == vals[0]))


def martingale_residual(rec: TrajectoryRecord, f, rate: RateFunction,
                        law: JumpLaw) -> ResidualPath:
    """Path of A_{s,f} = <f, mu(s)> - <f, mu(0)> - int_0^s <(E f(x+Z) - f) w(x - m), mu>.

    Needs the full event log. ``f`` must be IDENTITY or bounded by 1.
    """
    if rec.events is None:
        raise SimulationError("martingale_residual needs a record with the event log")
    ok, constant = _in_H(f)
    if not ok:
        raise SimulationError("test function must be the identity or satisfy |f| <= 1")
    ev = rec.events
    x0 = rec.initial_positions
    n = x0.size
    newpos = K.replay_positions(x0, ev.index, ev.jump)
    if constant:
        g0 = np.zeros(n)
        gn = np.zeros(newpos.size)
    else:
        g0 = expected_post_jump(law, f, x0) - np.asarray(f(x0), dtype=float)
        gn = expected_post_jump(law, f, newpos) - np.asarray(f(newpos), dtype=float)
    kind, p, tx, ty = rate.kernel_spec()
    t_end = float(rec.times[-1])
    integ = K.residual_integral(x0, ev.index, ev.jump, ev.time, g0, gn, kind, p, tx, ty, t_end)
    # <f, mu(s)> - <f, mu(0)> changes only at events
    if constant:
        df = np.zeros(newpos.size)
    else:
        old_f = np.asarray(f(_previous_positions(x0, ev.index, newpos)), dtype=float)
        df = (np.asarray(f(newpos), dtype=float) - old_f) / n
    F = np.cumsum(df)
    left = np.concatenate([[0.0], F[:-1]]) - integ[:-1] if F.size else np.zeros(0)
    right = F - integ[:-1]
    final = (F[-1] if F.size else 0.0) - integ[-1]
    return ResidualPath(ev.time.copy(), left, right, t_end, float(final))


def _previous_positions(x0, idx, newpos):
    """Position of the jumper just before each event."""
    prev = np.empty(newpos.size)
    # group events by particle; within a group the previous position is the
    # preceding event's new position, and the first uses x0
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    snew = newpos[order]
    first = np.ones(sidx.size, dtype=bool)
    first[1:] = sidx[1:] != sidx[:-1]
    sprev = np.empty(sidx.size)
    sprev[first] = x0[sidx[first]]
    sprev[~first] = snew[:-1][~first[1:]]
    prev[order] = sprev
    return prev
