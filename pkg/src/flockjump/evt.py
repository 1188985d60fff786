"""Record processes and the single mean-field particle for w = exp(-beta x).

Both processes are simulated in coordinates moving with the wave so that
nothing grows with time:

* the particle: U = X - ct drifts down at speed c and jumps up by Exp(1)
  at rate exp(-beta U);
* the records: a pool of Exp(1) variables grows with intensity
  exp(beta c t). Only arrivals above the current k-th largest value L
  matter, and by memorylessness such an arrival lands at L + Exp(1). With
  l = L - beta c t the relevant arrivals have intensity exp(-l) and
  Y - ct = k l when k beta = 1.

Between events the integrated intensity is exp(-b u) (e^{b v s} - 1)/(b v)
for drift v, so waiting times are drawn by exact inversion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy import stats

from .seeding import stream_seed
from .waves import gumbel_speed, gumbel_wave

BLOCK = 1 << 15


class EVTError(ValueError):
    pass


@njit(cache=True)
def _waiting_time(E, a, u, bv):
    """Time tau with int_0^tau exp(-a (u - v s)) ds = E, where bv = a v."""
    # log1p(bv E e^{a u}) / bv without overflow
    y = math.log(bv * E) + a * u
    if y > 30.0:
        return (y + math.log1p(math.exp(-y))) / bv
    return math.log1p(math.exp(y)) / bv


@njit(cache=True)
def _particle_kernel(state, beta, c, sample_times, out, k0, exp_buf, jump_buf, ptr):
    """Advance U; state = [t, U, jumps]. Returns the next unfilled sample index.

    Stops early (returning a negative index - 1) when a buffer runs out.
    """
    t = state[0]
    u = state[1]
    k = k0
    bc = beta * c
    while k < sample_times.size:
        if ptr[0] >= exp_buf.size or ptr[1] >= jump_buf.size:
            state[0] = t
            state[1] = u
            return -k - 1
        if u < -700.0 / beta:
            state[0] = t
            state[1] = u
            return -(1 << 40)
        tau = _waiting_time(exp_buf[ptr[0]], beta, u, bc)
        t_next = t + tau
        while k < sample_times.size and sample_times[k] < t_next:
            out[k] = u - c * (sample_times[k] - t)
            k += 1
        if k >= sample_times.size:
            # the event after the last sample is never consumed
            u = u - c * (sample_times[k - 1] - t)
            t = sample_times[k - 1]
            break
        ptr[0] += 1
        u = u - c * tau + jump_buf[ptr[1]]
        ptr[1] += 1
        t = t_next
        state[2] += 1
    state[0] = t
    state[1] = u
    return k


@njit(cache=True)
def _record_kernel(state, top, beta, c, sample_times, out, k0, exp_buf, jump_buf, ptr,
                   ev_t, ev_old, ev_new, ev_n):
    """Advance the shifted top-k list ``top`` (descending).

    ``out`` receives k * l_k; record-breaking events (time, old k-th value,
    new arrival) go to the ev_* arrays while there is room.
    """
    t = state[0]
    kk = top.size
    v = beta * c
    k = k0
    while k < sample_times.size:
        if ptr[0] >= exp_buf.size or ptr[1] >= jump_buf.size:
            state[0] = t
            return -k - 1
        lk = top[kk - 1]
        tau = _waiting_time(exp_buf[ptr[0]], 1.0, lk, v)
        t_next = t + tau
        while k < sample_times.size and sample_times[k] < t_next:
            out[k] = kk * (lk - v * (sample_times[k] - t))
            k += 1
        if k >= sample_times.size:
            dt = sample_times[k - 1] - t
            for j in range(kk):
                top[j] -= v * dt
            t = sample_times[k - 1]
            break
        ptr[0] += 1
        for j in range(kk):
            top[j] -= v * tau
        old = top[kk - 1]
        new = old + jump_buf[ptr[1]]
        ptr[1] += 1
        # insert, dropping the old k-th value
        j = kk - 1
        while j > 0 and top[j - 1] < new:
            top[j] = top[j - 1]
            j -= 1
        top[j] = new
        t = t_next
        n = int(ev_n[0])
        if n < ev_t.size:
            ev_t[n] = t
            ev_old[n] = old
            ev_new[n] = new
            ev_n[0] = n + 1
        state[2] += 1
    state[0] = t
    return k


def burn_in_time(beta: float, pool: float = 1e3) -> float:
    """First t with N(t) = exp(beta c t)/(beta c) >= pool."""
    c = gumbel_speed(beta)
    return max(0.0, math.log(pool * beta * c) / (beta * c))


@dataclass
class EVTSamples:
    """Samples of X - ct or Y - ct at spacing ``dt`` after burn-in."""

    beta: float
    c: float
    values: np.ndarray          # (replicas, samples per replica)
    dt: float
    t_burn: float
    events: int
    record_events: Optional[tuple] = field(default=None, repr=False)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def effective_size(self, n_batches: int = 20) -> float:
        return sum(batch_means_ess(row, n_batches) for row in self.values)


def batch_means_ess(x: np.ndarray, n_batches: int = 20) -> float:
    """Effective sample size of an autocorrelated series by batch means."""
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    if b < 2:
        return float(x.size)
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    var = x.var(ddof=1)
    var_mean = means.var(ddof=1)
    if var_mean <= 0:
        return float(x.size)
    # asymptotic variance of the mean is b * var(batch means)
    return float(min(x.size, x.size * var / (b * var_mean)))


def _streams(seed, replica, tag):
    ss = stream_seed(seed, tag, replica)
    a, b = ss.spawn(2)
    return np.random.Generator(np.random.PCG64(a)), np.random.Generator(np.random.PCG64(b))


def _run(kernel_call, n_samples, g_exp, g_jump, c):
    out = np.empty(n_samples)
    ptr = np.zeros(2, dtype=np.int64)
    block = BLOCK
    exp_buf = g_exp.standard_exponential(block)
    jump_buf = g_jump.standard_exponential(block)
    k = 0
    while True:
        k = kernel_call(out, k, exp_buf, jump_buf, ptr)
        if k == -(1 << 40):
            raise EVTError("jump rate overflow: the particle fell more than 700/beta behind")
        if k >= 0:
            return out
        k = -k - 1
        exp_buf = np.concatenate([exp_buf[ptr[0]:], g_exp.standard_exponential(block)])
        jump_buf = np.concatenate([jump_buf[ptr[1]:], g_jump.standard_exponential(block)])
        ptr[:] = 0


def simulate_particle(beta: float, n_samples: int, dt: float = 1.0, replicas: int = 1,
                      seed: int = 0, t_burn: Optional[float] = None,
                      c: Optional[float] = None) -> EVTSamples:
    """X(t) - ct sampled every ``dt`` after ``t_burn``, for independent replicas.

    The particle starts at U = 0 and jumps by Exp(1) at rate exp(-beta U).
    """
    if not beta > 0:
        raise EVTError("beta must be positive")
    c = gumbel_speed(beta) if c is None else float(c)
    t_burn = burn_in_time(beta) if t_burn is None else float(t_burn)
    times = t_burn + dt * np.arange(n_samples)
    vals = np.empty((replicas, n_samples))
    events = 0
    for r in range(replicas):
        g_exp, g_jump = _streams(seed, replica=r, tag=1)
        state = np.array([0.0, 0.0, 0.0])
        vals[r] = _run(lambda out, k, e, j, p: _particle_kernel(state, beta, c, times, out, k,
                                                                e, j, p),
                       n_samples, g_exp, g_jump, c)
        events += int(state[2])
    return EVTSamples(beta, c, vals, dt, t_burn, events)


def _record_k(beta: float) -> int:
    k = 1.0 / beta
    kr = int(round(k))
    if kr < 1 or abs(k - kr) > 1e-12:
        raise EVTError("the record construction needs 1/beta to be a positive integer")
    return kr


def initial_top(k: int, pool: float, rng: np.random.Generator) -> np.ndarray:
    """Top k of a Poisson(pool) number of Exp(1) variables (descending).

    Points above level v form a Poisson process of mean pool * e^{-v}, so
    the j-th largest is log(pool) - log(E_1 + ... + E_j); missing points
    (fewer than j variables) are reported at 0.
    """
    g = np.cumsum(rng.standard_exponential(k))
    return np.maximum(math.log(pool) - np.log(g), 0.0)


def simulate_records(beta: float, n_samples: int, dt: float = 1.0, replicas: int = 1,
                     seed: int = 0, t_burn: Optional[float] = None,
                     keep_events: int = 0) -> EVTSamples:
    """Y(t) - ct = k Y_k(t) - ct sampled every ``dt`` after ``t_burn``.

    Each replica starts at t = 0 with a pool of Poisson(1/(beta c))
    variables. ``keep_events`` caps the number of logged record-breaking
    events (time, old k-th value, new value) of replica 0, all shifted by
    beta c t.
    """
    k = _record_k(beta)
    c = gumbel_speed(beta)
    t_burn = burn_in_time(beta) if t_burn is None else float(t_burn)
    times = t_burn + dt * np.arange(n_samples)
    vals = np.empty((replicas, n_samples))
    events = 0
    log = None
    for r in range(replicas):
        g_exp, g_jump = _streams(seed, replica=r, tag=2)
        top = initial_top(k, 1.0 / (beta * c), g_jump)
        state = np.array([0.0, 0.0, 0.0])
        cap = keep_events if r == 0 else 0
        ev_t, ev_old, ev_new = np.empty(cap), np.empty(cap), np.empty(cap)
        ev_n = np.zeros(1, dtype=np.int64)
        vals[r] = _run(lambda out, kk, e, j, p: _record_kernel(state, top, beta, c, times, out,
                                                               kk, e, j, p, ev_t, ev_old,
                                                               ev_new, ev_n),
                       n_samples, g_exp, g_jump, c)
        events += int(state[2])
        if r == 0 and cap:
            n = int(ev_n[0])
            log = (ev_t[:n], ev_old[:n], ev_new[:n])
    return EVTSamples(beta, c, vals, dt, t_burn, events, log)


# ---------------------------------------------------------------------------
# Checks


def limit_cdf(beta: float):
    """CDF of the limit law of Y - ct; for beta = 1 it is exp(-e^{-(x + log c)})."""
    return gumbel_wave(beta).cdf


@dataclass
class KSReport:
    statistic: float
    pvalue: float
    n_effective: float
    reject: bool


def ks_limit_law(samples: EVTSamples, alpha: float = 0.01) -> KSReport:
    """One-sample KS of the pooled samples against the limit CDF."""
    x = np.sort(samples.flat)
    F = limit_cdf(samples.beta)(x)
    n = x.size
    i = np.arange(1, n + 1)
    D = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))
    ne = samples.effective_size()
    p = float(stats.kstwo.sf(D, max(int(ne), 1)))
    return KSReport(D, p, ne, p < alpha)


def ks_two_sample(a: EVTSamples, b: EVTSamples, alpha: float = 0.01) -> KSReport:
    """Two-sample KS with both samples thinned to roughly independent draws."""
    xa, xb = _thin(a), _thin(b)
    res = stats.ks_2samp(xa, xb)
    return KSReport(float(res.statistic), float(res.pvalue),
                    min(xa.size, xb.size), bool(res.pvalue < alpha))


def _thin(s: EVTSamples) -> np.ndarray:
    rows = []
    for row in s.values:
        ess = batch_means_ess(row)
        step = max(1, int(math.ceil(row.size / max(ess, 1.0))))
        rows.append(row[::step])
    return np.concatenate(rows)


def overshoots(samples: EVTSamples) -> np.ndarray:
    """New value minus broken k-th value for each logged record event."""
    if samples.record_events is None:
        raise EVTError("run simulate_records with keep_events > 0")
    _, old, new = samples.record_events
    return new - old


def record_rate_table(samples: EVTSamples, bins: np.ndarray):
    """Empirical vs theoretical rate of record changes binned by the state.

    Only for k = 1, where the state u = Y - ct moves deterministically
    between records and the change rate is e^{-u}. Returns (bin centers,
    empirical rate, theoretical rate, time spent).
    """
    if _record_k(samples.beta) != 1:
        raise EVTError("record_rate_table is for k = 1")
    t, old, new = samples.record_events
    c = samples.c
    # between events u goes from new_i down to old_{i+1}, linearly at speed c
    start_u, end_u = new[:-1], old[1:]
    time_in = np.zeros(bins.size - 1)
    theory_num = np.zeros(bins.size - 1)
    for j in range(bins.size - 1):
        lo, hi = bins[j], bins[j + 1]
        a = np.clip(end_u, lo, hi)
        b = np.clip(start_u, lo, hi)
        time_in[j] = np.sum(b - a) / c
        theory_num[j] = np.sum(np.exp(-a) - np.exp(-b)) / c
    counts, _ = np.histogram(old[1:], bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        emp = counts / time_in
        theory = theory_num / time_in
    return 0.5 * (bins[:-1] + bins[1:]), emp, theory, time_in
