"""Exact and numerically exact results for two and three particles.

* Unit jumps, n = 2: the integer gap is a birth-death chain with
  lambda_0 = 2 w(0), lambda_k = w(k/2), mu_k = w(-k/2).
* Jumps with a density, n = 2: the gap density obeys a linear master
  equation; for w = e^{-beta x} and Exp(1) jumps its stationary solution
  is proportional to cosh(beta g / 2)^{-(1 + 2/beta)}.
* Unit jumps, n = 3: seen from the center of mass, u = 3 (x - m) lives on
  a planar lattice with directed edges; the stationary law is computed on
  a finite diamond by a sparse solve.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ExponentialUnit, JumpLaw, RateFunction
from .specfun import adaptive_quad


class ExactSmallError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Two particles, unit jumps


@dataclass(frozen=True)
class GapChain:
    """Birth-death chain of the integer gap between two particles."""

    rate: RateFunction
    k_max: int = 200

    def birth(self, k):
        k = np.asarray(k, dtype=float)
        return np.where(k == 0, 2.0 * self.rate(0.0), self.rate(k / 2.0))

    def death(self, k):
        k = np.asarray(k, dtype=float)
        return np.where(k == 0, 0.0, self.rate(-k / 2.0))

    def generator(self, k_max: Optional[int] = None) -> np.ndarray:
        """Dense tridiagonal generator on {0..k_max} (reflecting at k_max)."""
        K = self.k_max if k_max is None else k_max
        k = np.arange(K + 1)
        lam = np.where(k < K, self.birth(k), 0.0)
        mu = self.death(k)
        Q = np.diag(lam[:-1], 1) + np.diag(mu[1:], -1)
        Q -= np.diag(Q.sum(axis=1))
        return Q


@dataclass(frozen=True)
class BDStationary:
    pi: np.ndarray
    tail_bound: float
    detailed_balance_residual: float
    k_max: int


def bd_stationary(chain: GapChain, tail_tol: float = 1e-12, k_limit: int = 100000) -> BDStationary:
    """Stationary law of the gap chain from the product formula.

    pi_k = 2 pi_0 prod_{i<k} w(i/2) / prod_{1<=i<=k} w(-i/2). Ratios
    pi_{k+1}/pi_k are non-increasing (w is non-increasing), so once the
    ratio q drops below 1 the tail beyond K is at most pi_K q/(1-q).
    Truncation grows from ``chain.k_max`` until that bound is < tail_tol.
    """
    w = chain.rate
    K = max(chain.k_max, 4)
    while True:
        k = np.arange(1, K + 1)
        # log of the k-th ratio factor w((k-1)/2) / w(-k/2)
        logf = np.log(w((k - 1) / 2.0)) - np.log(w(-k / 2.0))
        logr = np.concatenate([[0.0], np.log(2.0) + np.cumsum(logf)])
        q = math.exp(logf[-1])
        if q < 1.0:
            shift = logr.max()
            r = np.exp(logr - shift)
            total = math.fsum(r)
            pi = r / total
            tail = pi[-1] * q / (1.0 - q)
            if tail < tail_tol:
                break
        if K >= k_limit:
            raise ExactSmallError(
                f"gap series does not converge within k <= {K} (last ratio {q:.6g}); "
                "a constant rate has no stationary gap law")
        K *= 2
    lam = chain.birth(np.arange(K))
    mu = chain.death(np.arange(1, K + 1))
    flows_up = pi[:-1] * lam
    flows_down = pi[1:] * mu
    resid = float(np.max(np.abs(flows_up - flows_down) / np.maximum(flows_up, 1e-300)))
    return BDStationary(pi, tail, resid, K)


# ---------------------------------------------------------------------------
# Two particles, jumps with a density


@dataclass
class GapDensity:
    """Gap density sampled on the uniform grid g_j = j * dg, j = 0..M."""

    g_max: float
    values: np.ndarray
    normalization: float = 1.0
    note: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.g_max, self.values.size)

    @property
    def dg(self) -> float:
        return self.g_max / (self.values.size - 1)

    def integral(self) -> float:
        return float(gregory_weights(self.values.size - 1, self.dg) @ self.values)

    def cdf(self, g):
        """Cumulative trapezoid CDF interpolated linearly."""
        v = self.values
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * self.dg)])
        return np.interp(np.asarray(g, dtype=float), self.grid, cum / cum[-1])


_GREGORY_END = np.array([3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0])
_NEWTON_COTES = {
    0: np.array([0.0]),
    1: np.array([0.5, 0.5]),
    2: np.array([1.0, 4.0, 1.0]) / 3.0,
    3: np.array([3.0, 9.0, 9.0, 3.0]) / 8.0,
    4: np.array([14.0, 64.0, 24.0, 64.0, 14.0]) / 45.0,
    5: np.array([95.0, 375.0, 250.0, 250.0, 375.0, 95.0]) / 288.0,
}


def gregory_weights(n: int, h: float) -> np.ndarray:
    """Weights for n intervals: Gregory end corrections (4th order), or a
    closed Newton-Cotes rule when n < 6."""
    if n < 6:
        return h * _NEWTON_COTES[n]
    wts = np.ones(n + 1)
    wts[:3] = _GREGORY_END
    wts[-3:] = _GREGORY_END[::-1]
    return h * wts


def _jump_kernel(law: JumpLaw, grid: np.ndarray) -> np.ndarray:
    if not law.has_density:
        raise ExactSmallError("the gap master equation needs a jump density")
    phi = np.asarray(law.density(grid), dtype=float)
    # use the right limit at 0 (the density may jump there)
    phi[0] = float(law.density(np.array([1e-300]))[0])
    return phi


def _corrected_conv(a: np.ndarray, k: np.ndarray, h: float) -> np.ndarray:
    """out_j = int_0^{g_j} a(y) k(g_j - y) dy on the grid, Gregory-corrected."""
    n = a.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    base = np.fft.irfft(np.fft.rfft(a, nfft) * np.fft.rfft(k, nfft), nfft)[:n]
    out = base.copy()
    j = np.arange(n)
    big = j >= 6
    # replace the unit weights at both ends of each sum by the end weights
    for q in range(3):
        corr = _GREGORY_END[q] - 1.0
        jj = j[big]
        out[big] += corr * (a[q] * k[jj - q] + a[jj - q] * k[q])
    out *= h
    for jj in range(min(6, n)):
        wts = _NEWTON_COTES[jj] * h
        out[jj] = float(np.dot(wts, a[:jj + 1] * k[jj::-1]))
    return out


def _upper_integral(b, k, h):
    """out_j = int_{g_j}^{G} b(y) k(y - g_j) dy on the grid, Gregory-corrected."""
    # reverse: y = G - s, g_j = G - t_j; int_{s=0}^{t_j} b(G-s) k(t_j - s) ds
    rev = _corrected_conv(b[::-1], k, h)
    return rev[::-1]


def gap_master_rhs(p: GapDensity, w: RateFunction, law: JumpLaw = ExponentialUnit(),
                   richardson: bool = True, tol: float = 1e-6) -> GapDensity:
    """Right-hand side of the gap master equation on the grid of ``p``.

    All integrals use the trapezoid rule with Gregory end corrections.
    When ``richardson`` is set the same computation on the every-other-node
    grid gives an error estimate (stored in ``note``; a warning is issued
    if it exceeds ``tol * max p``).
    """
    out = _gap_rhs_values(p.values, p.g_max, w, law)
    res = GapDensity(p.g_max, out)
    if richardson and p.values.size > 13 and (p.values.size - 1) % 2 == 0:
        coarse = _gap_rhs_values(p.values[::2], p.g_max, w, law)
        est = float(np.max(np.abs(coarse - out[::2]))) / 15.0
        res.note = f"richardson_error={est:.3e}"
        res.normalization = est
        if est > tol * float(np.max(np.abs(p.values))):
            warnings.warn(f"gap grid may be too coarse: Richardson estimate {est:.3e}",
                          RuntimeWarning, stacklevel=2)
    return res


def _gap_rhs_values(p, g_max, w, law):
    n = p.size
    g = np.linspace(0.0, g_max, n)
    h = g[1] - g[0]
    phi = _jump_kernel(law, g)
    lead = w(g / 2.0)
    lag = w(-g / 2.0)
    lag[0] = float(w(-1e-300))  # laggard rate as g -> 0+ (w may jump at 0)
    a = p * lead
    b = p * lag
    loss = -p * (lead + lag)
    t2 = _corrected_conv(a, phi, h)
    t3 = _upper_integral(b, phi, h)
    # t4_j = int_0^G b(y) phi(y + g_j) dy: full-range sum with fixed weights
    wts = gregory_weights(n - 1, h)
    bw = b * wts
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    # correlation sum_i bw_i phi_{i+j}
    t4 = np.fft.irfft(np.conj(np.fft.rfft(bw, nfft)) * np.fft.rfft(phi, nfft), nfft)[:n]
    return loss + t2 + t3 + t4


def gap_master_matrix(g_max: float, n_intervals: int, w: RateFunction,
                      law: JumpLaw = ExponentialUnit()) -> np.ndarray:
    """Dense matrix L with gap_master_rhs(p) = L p (same quadrature rules)."""
    n = n_intervals + 1
    eye = np.eye(n)
    return np.column_stack([_gap_rhs_values(eye[:, i], g_max, w, law) for i in range(n)])


def _log_cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)


def gap_stationary_closed_form(beta: float, g_max: Optional[float] = None,
                               n_intervals: int = 1 << 12) -> GapDensity:
    """c / cosh(beta g / 2)^{1 + 2/beta} on a uniform grid, normalized on [0, inf).

    The default g_max makes both the tail mass and the truncated part of the
    master-equation integrals negligible (cosh^{-s} <= 2^s e^{-s x}).
    """
    if not beta > 0:
        raise ExactSmallError("beta must be positive")
    s = 1.0 + 2.0 / beta
    rate = 0.5 * beta * s

    def tail(G):
        return 2.0**s * math.exp(-rate * G) / rate

    if g_max is None:
        # the laggard terms of the master equation integrate p(y) w(-y/2),
        # which decays only like 2^s e^{-y}; cut where that is below 1e-10
        g_max = float(math.ceil(math.log(2.0**s * 1e10)))

    def f(g):
        return np.exp(-s * _log_cosh(0.5 * beta * np.asarray(g, dtype=float)))

    body = adaptive_quad(f, 0.0, g_max, tol=1e-15, rel_tol=1e-15).value
    Z = body + tail(g_max)  # bound used as the correction; it is < 1e-10
    grid = np.linspace(0.0, g_max, n_intervals + 1)
    return GapDensity(g_max, f(grid) / Z, 1.0 / Z,
                      note=f"tail_bound={tail(g_max):.3e}")


@dataclass
class GapRelaxation:
    density: GapDensity
    steps: int
    residual: float
    renormalization_drift: float


def relax_gap_density(w: RateFunction, law: JumpLaw = ExponentialUnit(), g_max: float = 24.0,
                      n_intervals: int = 1 << 11, dt: float = 5.0, steps: int = 200,
                      tol: float = 1e-12, p0: Optional[np.ndarray] = None) -> GapRelaxation:
    """Integrate the master equation to stationarity by implicit Euler.

    Each step solves (I - dt L) p_new = p_old with a dense LU factorization
    and renormalizes; the largest renormalization factor is reported so
    discretization mass drift is visible.
    """
    import scipy.linalg as sla

    L = gap_master_matrix(g_max, n_intervals, w, law)
    n = n_intervals + 1
    h = g_max / n_intervals
    wts = gregory_weights(n_intervals, h)
    g = np.linspace(0.0, g_max, n)
    p = np.exp(-g) if p0 is None else np.asarray(p0, dtype=float).copy()
    p /= wts @ p
    lu = sla.lu_factor(np.eye(n) - dt * L)
    drift = 0.0
    k = 0
    change = math.inf
    for k in range(1, steps + 1):
        new = sla.lu_solve(lu, p)
        mass = float(wts @ new)
        drift = max(drift, abs(mass - 1.0))
        new /= mass
        change = float(np.max(np.abs(new - p)))
        p = new
        if change < tol:
            break
    return GapRelaxation(GapDensity(g_max, p), k, change, drift)


# ---------------------------------------------------------------------------
# Three particles, unit jumps

_JUMPS3 = np.array([[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])


@dataclass
class LatticeStationary:
    """Stationary law on the truncated three-particle lattice."""

    states: np.ndarray  # (S, 3) integer states u = 3(x - m)
    pi: np.ndarray
    boundary_flux: float
    radius: int
    rate: RateFunction
    index: dict = field(repr=False, default_factory=dict)
    residual: float = 0.0

    def prob(self, u) -> float:
        i = self.index.get(tuple(int(v) for v in u))
        return 0.0 if i is None else float(self.pi[i])

    def as_dict(self) -> dict:
        return {tuple(s): float(p) for s, p in zip(self.states.tolist(), self.pi)}

    def symmetry_defect(self) -> float:
        """max over states and coordinate permutations of |pi(sigma u) - pi(u)|."""
        import itertools
        worst = 0.0
        for perm in itertools.permutations(range(3)):
            permuted = self.states[:, perm]
            vals = np.array([self.prob(u) for u in permuted])
            worst = max(worst, float(np.max(np.abs(vals - self.pi))))
        return worst

    def edge_flow(self, u, i: int) -> float:
        """Probability flow pi(u) q(u -> u + jump_i)."""
        u = np.asarray(u)
        return self.prob(u) * float(self.rate(u[i] / 3.0))

    def cycle_currents(self, u0=(0, 0, 0)):
        """Net currents along the directed 3-cycles through ``u0``.

        Edges have no reverse edges, so the net current on an edge equals its
        forward flow; the cycle current is the smallest edge flow on it.
        """
        out = []
        import itertools
        for order in itertools.permutations(range(3)):
            u = np.array(u0)
            flows = []
            for i in order:
                flows.append(self.edge_flow(u, i))
                u = u + _JUMPS3[i]
            if np.all(u == np.array(u0)):
                out.append((order, min(flows)))
        return out


def lattice_states(radius: int) -> np.ndarray:
    """All u with sum 0, u_1 = u_2 = u_3 (mod 3) and |u|_1 <= radius."""
    pts = []
    for u1 in range(-radius, radius + 1):
        for u2 in range(-radius, radius + 1):
            if (u1 - u2) % 3:
                continue
            u3 = -u1 - u2
            if abs(u1) + abs(u2) + abs(u3) <= radius:
                pts.append((u1, u2, u3))
    return np.array(pts, dtype=np.int64)


def three_particle_stationary(w: RateFunction, radius: int = 96,
                              flux_tol: Optional[float] = None) -> LatticeStationary:
    """Solve pi Q = 0 on the diamond |u|_1 <= radius.

    Transitions u -> u + (3 e_i - 1) at rate w(u_i / 3). Edges that leave
    the diamond are dropped; the probability flow through them in the
    computed law is returned as ``boundary_flux`` (the error estimate).
    """
    states = lattice_states(radius)
    index = {tuple(s): i for i, s in enumerate(states.tolist())}
    S = len(states)
    rows, cols, vals = [], [], []
    out_rate = np.zeros(S)
    lost_rate = np.zeros(S)
    for a, u in enumerate(states):
        for i in range(3):
            r = float(w(u[i] / 3.0))
            v = tuple((u + _JUMPS3[i]).tolist())
            b = index.get(v)
            if b is None:
                lost_rate[a] += r
                continue
            rows.append(a)
            cols.append(b)
            vals.append(r)
            out_rate[a] += r
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(S, S)) - sp.diags(out_rate)
    # pi Q = 0  <=>  Q^T pi^T = 0; replace the origin's equation by sum(pi) = 1
    A = Q.T.tolil()
    o = index[(0, 0, 0)]
    A[o, :] = np.ones(S)
    rhs = np.zeros(S)
    rhs[o] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    residual = float(np.max(np.abs(Q.T @ pi)))
    flux = float(np.dot(pi, lost_rate))
    if flux_tol is not None and flux > flux_tol:
        raise ExactSmallError(
            f"boundary flux {flux:.3e} exceeds {flux_tol:.1e}; enlarge the radius (now {radius})")
    return LatticeStationary(states, pi, flux, radius, w, index, residual)


# ---------------------------------------------------------------------------
# Occupation statistics from simulated event logs


def _positions_after_events(x0: np.ndarray, idx: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Positions after each event (row e), starting from x0 (row 0 = initial)."""
    n = x0.size
    inc = np.zeros((idx.size, n))
    inc[np.arange(idx.size), idx] = z
    return np.vstack([x0[None, :], x0[None, :] + np.cumsum(inc, axis=0)])


def _holding_times(times: np.ndarray, T: float) -> np.ndarray:
    t = np.concatenate([[0.0], times, [T]])
    return np.diff(t)


def gap_occupation(record) -> tuple[np.ndarray, np.ndarray]:
    """(gap values, time weights) of the n = 2 gap between events."""
    ev = record.events
    X = _positions_after_events(record.initial_positions, ev.index, ev.jump)
    gaps = np.abs(X[:, 0] - X[:, 1])
    return gaps, _holding_times(ev.time, record.times[-1])


def integer_gap_frequencies(record, k_max: int) -> np.ndarray:
    gaps, wts = gap_occupation(record)
    k = np.rint(gaps).astype(np.int64)
    freq = np.bincount(np.minimum(k, k_max + 1), weights=wts, minlength=k_max + 2)
    return freq / freq.sum()


def lattice_occupation(record) -> dict:
    """Time-weighted occupation frequencies of u = 3(x - m) for n = 3."""
    ev = record.events
    X = _positions_after_events(record.initial_positions, ev.index, ev.jump)
    U = np.rint(3.0 * X - X.sum(axis=1, keepdims=True)).astype(np.int64)
    wts = _holding_times(ev.time, record.times[-1])
    keys, inv = np.unique(U, axis=0, return_inverse=True)
    tot = np.bincount(inv.ravel(), weights=wts)
    tot /= tot.sum()
    return {tuple(k): float(v) for k, v in zip(keys.tolist(), tot)}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
