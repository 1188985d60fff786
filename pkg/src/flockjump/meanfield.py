"""Finite-volume solver for the mean-field equation

    d rho/dt = -w(x - m) rho(x) + int_{-inf}^x w(y - m) rho(y) phi(x - y) dy,
    m(t) = int x rho(x, t) dx.

The state is a vector of cell averages on a uniform grid. Mass leaving a
cell is redistributed with transfer weights computed exactly from
J(x) = E (Z - x)^+, assuming it is spread uniformly over the source cell.
With this choice the discrete scheme conserves mass exactly and its
discrete speed is exactly sum_k omega_k rho_k dx, the grid version of the
speed identity. Time stepping is classical RK4.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (DeterministicUnit, ExponentialUnit, JumpLaw, RateFunction,
                    _GL_NODES, _GL_WEIGHTS)

MASS_TOL = 1e-8
LEAK_TOL = 1e-8
STEP_MASS_TOL = 1e-10


class MeanFieldError(RuntimeError):
    pass


class DomainLeakError(MeanFieldError):
    pass


@dataclass
class GridDensity:
    """Cell averages ``values`` on ``[x_min, x_max]`` with a power-of-two cell count."""

    x_min: float
    x_max: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.values.size
        if n < 2 or n & (n - 1):
            raise MeanFieldError(f"cell count must be a power of two, got {n}")
        if not self.x_max > self.x_min:
            raise MeanFieldError("x_max must exceed x_min")

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.values.size

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.values.size) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return self.x_min + np.arange(self.values.size + 1) * self.dx

    def mass(self) -> float:
        return math.fsum(self.values) * self.dx

    def mean(self) -> float:
        """First moment, exact for the piecewise-constant density."""
        return float(np.dot(self.centers, self.values)) * self.dx / self.mass()

    def cdf(self, x):
        """CDF of the piecewise-constant density (linear inside cells)."""
        cum = np.concatenate([[0.0], np.cumsum(self.values) * self.dx])
        return np.interp(np.asarray(x, dtype=float), self.edges, cum)

    def boundary_mass(self, fraction: float = 0.05) -> tuple[float, float]:
        k = max(1, int(round(fraction * self.n_cells)))
        return (float(self.values[:k].sum() * self.dx), float(self.values[-k:].sum() * self.dx))

    def check(self, mass_tol: float = MASS_TOL, leak_tol: float = LEAK_TOL):
        """Raise if mass or boundary-leak invariants fail."""
        if np.any(self.values < 0):
            raise MeanFieldError(f"negative density, min {self.values.min():.3e}")
        if abs(self.mass() - 1.0) > mass_tol:
            raise MeanFieldError(f"mass {self.mass()!r} differs from 1 by more than {mass_tol}")
        left, right = self.boundary_mass()
        if left > leak_tol or right > leak_tol:
            raise DomainLeakError(
                f"outer 5% of cells carry mass (left {left:.3e}, right {right:.3e}) > {leak_tol}")
        return self

    def copy(self) -> "GridDensity":
        return GridDensity(self.x_min, self.x_max, self.values.copy())

    @classmethod
    def from_cdf(cls, cdf: Callable, x_min: float, x_max: float, n_cells: int):
        """Exact cell averages from a CDF, renormalized on the window."""
        edges = np.linspace(x_min, x_max, n_cells + 1)
        F = np.asarray(cdf(edges), dtype=float)
        dx = (x_max - x_min) / n_cells
        vals = np.diff(F) / (F[-1] - F[0]) / dx
        return cls(x_min, x_max, np.maximum(vals, 0.0))

    @classmethod
    def from_pdf(cls, pdf: Callable, x_min: float, x_max: float, n_cells: int,
                 normalize: bool = True):
        """Cell averages of ``pdf`` by 10-point Gauss-Legendre per cell."""
        dx = (x_max - x_min) / n_cells
        mids = x_min + (np.arange(n_cells) + 0.5) * dx
        pts = mids[:, None] + 0.5 * dx * _GL_NODES[None, :]
        vals = 0.5 * (np.asarray(pdf(pts), dtype=float) @ _GL_WEIGHTS)
        g = cls(x_min, x_max, vals)
        if normalize:
            g.values /= g.mass()
        return g

    @classmethod
    def window_around(cls, center: float, left: float, dx: float, n_cells: int):
        """Empty grid of ``n_cells`` cells of width dx starting ``left`` below ``center``."""
        x_min = center - left
        return cls(x_min, x_min + n_cells * dx, np.zeros(n_cells))


# ---------------------------------------------------------------------------
# Discretization pieces


def cell_rates(w: RateFunction, grid: GridDensity, m: float) -> np.ndarray:
    """Cell averages of w(x - m): exact via the antiderivative when available."""
    edges = grid.edges - m
    W = w.antiderivative(edges)
    if W is not None:
        return np.diff(W) / grid.dx
    pts = grid.centers[:, None] - m + 0.5 * grid.dx * _GL_NODES[None, :]
    return 0.5 * (np.asarray(w(pts)) @ _GL_WEIGHTS)


def transfer_tail(law: JumpLaw, dx: float, n: int) -> np.ndarray:
    """G_d, d = 0..n: fraction of a cell's outflow landing d or more cells ahead.

    G_d = (J((d-1) dx) - J(d dx)) / dx with J(x) = E (Z - x)^+; G_0 = 1.
    """
    d = np.arange(n + 1, dtype=float)
    if isinstance(law, ExponentialUnit):
        G = np.exp(-(d - 1.0) * dx) * (-math.expm1(-dx)) / dx
    elif isinstance(law, DeterministicUnit):
        ratio = 1.0 / dx
        if abs(ratio - round(ratio)) > 1e-9:
            raise MeanFieldError("deterministic jumps need the cell width to divide 1 exactly")
        G = np.where(d <= round(ratio), 1.0, 0.0)
    else:
        if not law.has_density:
            raise MeanFieldError(f"jump law {law!r} has no density; not supported by the solver")
        J = np.asarray(law.excess(np.concatenate([[-dx], d * dx])), dtype=float)
        G = (J[:-1] - J[1:]) / dx
    G[0] = 1.0
    return G


@dataclass
class Discretization:
    """Grid-size dependent transfer data, reused across RHS evaluations."""

    law: JumpLaw
    dx: float
    n_cells: int
    tail: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)
    kernel_fft: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.tail = transfer_tail(self.law, self.dx, self.n_cells)
        self.weights = self.tail[:-1] - self.tail[1:]  # P_d, d = 0..n-1
        self.kernel_fft = np.fft.rfft(self.weights, 2 * self.n_cells)

    def spread(self, s: np.ndarray, method: str = "fft") -> np.ndarray:
        """Redistribute outflow ``s`` (per cell) with the transfer weights.

        Mass that would leave the right edge is deposited in the last cell,
        so the result sums exactly to s.sum() up to rounding.
        """
        n = self.n_cells
        if method == "fft":
            out = np.fft.irfft(np.fft.rfft(s, 2 * n) * self.kernel_fft, 2 * n)[:n]
        elif method == "direct":
            out = np.convolve(s, self.weights)[:n]
        else:
            raise MeanFieldError(f"unknown convolution method {method!r}")
        # last cell receives everything landing at or beyond it
        out[-1] = float(np.dot(s, self.tail[n - 1::-1][:n]))
        return out


def _check_law(law: JumpLaw):
    if not (law.has_density or isinstance(law, DeterministicUnit)):
        raise MeanFieldError("the solver needs a jump law with a density, or unit jumps")


def mf_rhs(rho: GridDensity, w: RateFunction, law: JumpLaw,
           disc: Optional[Discretization] = None, method: str = "fft") -> GridDensity:
    """Time derivative of the grid density (returned as a GridDensity)."""
    _check_law(law)
    if disc is None or disc.n_cells != rho.n_cells or disc.dx != rho.dx:
        disc = Discretization(law, rho.dx, rho.n_cells)
    m = rho.mean()
    s = cell_rates(w, rho, m) * rho.values
    return GridDensity(rho.x_min, rho.x_max, disc.spread(s, method) - s)


def speed_functional(rho: GridDensity, w: RateFunction) -> float:
    """<w(. - m), rho> with m the mean of rho (cell-averaged rates)."""
    m = rho.mean()
    return float(np.dot(cell_rates(w, rho, m), rho.values)) * rho.dx


def stable_dt(rho: GridDensity, w: RateFunction) -> float:
    """Explicit stability bound 0.5 / max_j w(x_j - m)."""
    return 0.5 / float(np.max(w(rho.centers - rho.mean())))


@dataclass
class StepReport:
    dt: float
    rejections: int
    mass_change: float
    clipped: float


def mf_step(rho: GridDensity, dt: float, w: RateFunction, law: JumpLaw,
            disc: Optional[Discretization] = None, max_halvings: int = 20,
            method: str = "fft") -> tuple[GridDensity, StepReport]:
    """One RK4 step (m recomputed at each stage).

    A result with values below -1e-12 * max(rho) is rejected and retried
    with dt halved (the halved steps are taken until dt is covered).
    Remaining negatives are clipped to zero; their size is reported.
    """
    if dt < 0:
        raise MeanFieldError("dt must be nonnegative")
    if dt == 0:
        return rho.copy(), StepReport(0.0, 0, 0.0, 0.0)
    if disc is None:
        disc = Discretization(law, rho.dx, rho.n_cells)
    bound = stable_dt(rho, w)
    if dt > bound * (1 + 1e-12):
        raise MeanFieldError(f"dt={dt} exceeds stability bound {bound}")
    mass0 = rho.mass()
    rejections = 0
    sub = dt
    for _ in range(max_halvings + 1):
        n_sub = int(round(dt / sub))
        cur = rho
        ok = True
        clipped = 0.0
        for _ in range(n_sub):
            nxt = _rk4(cur, sub, w, law, disc, method)
            vmin = nxt.values.min()
            if vmin < -1e-12 * nxt.values.max():
                ok = False
                break
            neg = nxt.values < 0
            if neg.any():
                clipped += float(-nxt.values[neg].sum() * nxt.dx)
                nxt.values[neg] = 0.0
            cur = nxt
        if ok:
            return cur, StepReport(dt, rejections, cur.mass() - mass0, clipped)
        rejections += 1
        sub *= 0.5
    raise MeanFieldError(f"step rejected {rejections} times for negative density")


def _rk4(rho, dt, w, law, disc, method):
    def f(v):
        return mf_rhs(GridDensity(rho.x_min, rho.x_max, v), w, law, disc, method).values

    y = rho.values
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return GridDensity(rho.x_min, rho.x_max, y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def shift_window(rho: GridDensity, cells: int) -> tuple[GridDensity, float]:
    """Move the window right by ``cells`` whole cells (exact, no interpolation).

    Returns the shifted density and the mass dropped off the left edge.
    """
    if cells <= 0:
        return rho, 0.0
    v = rho.values
    lost = float(v[:cells].sum() * rho.dx)
    new = np.zeros_like(v)
    new[:v.size - cells] = v[cells:]
    d = cells * rho.dx
    return GridDensity(rho.x_min + d, rho.x_max + d, new), lost


@dataclass
class MeanFieldRun:
    """Output of :func:`mf_evolve`.

    ``m`` and ``speed`` are sampled at every snapshot time. ``speed`` is the
    first moment of the RHS (the scheme's exact dm/dt); ``speed_fd`` is a
    centered finite difference of m over one step on each side, and
    ``speed_identity`` is <w(. - m), rho> evaluated exactly for the
    piecewise-constant density (cell-averaged rates), so the residual
    |speed_fd - speed_identity| is the time discretization error of the
    finite difference plus the O(dt^2) error of the RK4 step.
    """

    times: np.ndarray
    snapshots: list
    m: np.ndarray
    speed: np.ndarray
    speed_fd: np.ndarray
    speed_identity: np.ndarray
    max_step_mass_change: float
    cumulative_mass_drift: float
    clipped_mass: float
    shifted_cells: int
    steps: int
    dt: float
    log: list = field(default_factory=list)

    def speed_residual(self) -> np.ndarray:
        return np.abs(self.speed_fd - self.speed_identity)


def pointwise_speed(rho: GridDensity, w: RateFunction) -> float:
    m = rho.mean()
    return float(np.dot(w(rho.centers - m), rho.values)) * rho.dx


def mf_evolve(rho0: GridDensity, w: RateFunction, law: JumpLaw, T: float,
              schedule: Optional[Sequence[float]] = None, recenter: bool = True,
              dt: Optional[float] = None, method: str = "fft",
              check_leak: bool = True) -> MeanFieldRun:
    """Evolve ``rho0`` to time T and record snapshots at ``schedule``.

    ``dt`` defaults to the explicit bound 0.5/max w, capped at 4 dx so the
    time error stays below the second-order spatial error. With
    ``recenter`` the window follows m in whole-cell shifts so that m keeps
    its initial offset inside the window.
    """
    _check_law(law)
    if T < 0:
        raise MeanFieldError("T must be nonnegative")
    sched = sorted(set([0.0, *(schedule if schedule is not None else [T])]))
    if sched[-1] > T + 1e-12:
        raise MeanFieldError("snapshot schedule extends past T")
    rho = rho0.copy()
    disc = Discretization(law, rho.dx, rho.n_cells)
    anchor = rho.mean() - rho.x_min
    t = 0.0
    out_t, snaps, ms, sp, sp_fd, sp_id = [], [], [], [], [], []
    max_change, clipped, shifted, steps = 0.0, 0.0, 0, 0
    h_used = 0.0
    mass_start = rho.mass()
    log = []
    prev_m = None  # (t, m) one step back

    def record(rho, t, prev_m, next_m):
        rhs = mf_rhs(rho, w, law, disc, method)
        out_t.append(t)
        snaps.append(rho.copy())
        ms.append(rho.mean())
        sp.append(float(np.dot(rhs.centers, rhs.values)) * rhs.dx)
        sp_id.append(speed_functional(rho, w))
        if prev_m is not None and next_m is not None:
            sp_fd.append((next_m[1] - prev_m[1]) / (next_m[0] - prev_m[0]))
        else:
            sp_fd.append(math.nan)

    pending = None  # snapshot waiting for the next-step m to form its difference
    for target in sched:
        while t < target - 1e-14:
            h = stable_dt(rho, w)
            h = min(h, 4.0 * rho.dx) if dt is None else min(dt, h)
            h_used = max(h_used, h)
            h = min(h, target - t)
            m_before = rho.mean()
            rho, rep = mf_step(rho, h, w, law, disc, method=method)
            t = target if abs(target - (t + h)) < 1e-14 else t + h
            steps += 1
            max_change = max(max_change, abs(rep.mass_change))
            clipped += rep.clipped
            if pending is not None:
                i, pm = pending
                sp_fd[i] = (rho.mean() - pm[1]) / (t - pm[0])
                pending = None
            prev_m = (t - h, m_before)
            if recenter:
                k = int(math.floor((rho.mean() - rho.x_min - anchor) / rho.dx))
                if k > 0:
                    rho, lost = shift_window(rho, k)
                    shifted += k
                    if lost > LEAK_TOL:
                        raise DomainLeakError(f"recentering dropped mass {lost:.3e}")
            if check_leak:
                left, right = rho.boundary_mass()
                if left > LEAK_TOL or right > LEAK_TOL:
                    raise DomainLeakError(
                        f"t={t:.4g}: boundary mass left {left:.3e}, right {right:.3e}")
        record(rho, t, None, None)
        if prev_m is not None:
            pending = (len(sp_fd) - 1, prev_m)
        log.append(f"t={t:.6g} m={ms[-1]:.10g} dm/dt={sp[-1]:.10g} "
                   f"<w,rho>={sp_id[-1]:.10g} mass={rho.mass():.15g}")
    if pending is not None:
        # final snapshot: one more step to form the centered difference
        i, pm = pending
        h = min(stable_dt(rho, w), 4.0 * rho.dx) if dt is None else min(dt, stable_dt(rho, w))
        nxt, _ = mf_step(rho, h, w, law, disc, method=method)
        sp_fd[i] = (nxt.mean() - pm[1]) / (t + h - pm[0])
    return MeanFieldRun(np.array(out_t), snaps, np.array(ms), np.array(sp), np.array(sp_fd),
                        np.array(sp_id), max_change, rho.mass() - mass_start, clipped,
                        shifted, steps, h_used, log)


# ---------------------------------------------------------------------------
# Stability of the mean-field flow


@dataclass
class GronwallReport:
    times: np.ndarray
    distance: np.ndarray
    mean_gap: np.ndarray
    bound_rate: float
    empirical_rate: float
    note: str = ("d_H is estimated from below by a finite dictionary; comparing it with "
                 "d_H(0) e^{ct} is a heuristic check")

    def holds(self, slack: float = 0.0) -> bool:
        d0 = self.distance[0]
        if d0 == 0.0:
            return bool(np.all(self.distance == 0.0))
        lhs = np.log(np.maximum(self.distance, 1e-300)) - math.log(d0)
        return bool(np.all(lhs <= self.bound_rate * self.times + slack))


def gronwall_check(rho1: GridDensity, rho2: GridDensity, w: RateFunction, law: JumpLaw,
                   T: float, schedule: Sequence[float], dictionary=None,
                   dt: Optional[float] = None) -> GronwallReport:
    """Evolve two densities and track the dictionary distance between them.

    The comparison rate is c = 2a + 2a' (a = sup w, a' = sup |w'|), which
    needs a bounded rate with bounded derivative.
    """
    from .metrics import GridMeasure, TestDictionary, dictionary_distance

    if not (w.bounded and math.isfinite(w.lip_bound)):
        raise MeanFieldError("gronwall_check needs a bounded rate with bounded derivative")
    r1 = mf_evolve(rho1, w, law, T, schedule, recenter=False, dt=dt, check_leak=False)
    r2 = mf_evolve(rho2, w, law, T, schedule, recenter=False, dt=dt, check_leak=False)
    if dictionary is None:
        lo = min(rho1.x_min, rho2.x_min)
        hi = max(rho1.x_max, rho2.x_max)
        dictionary = TestDictionary.default(lo, hi)
    dist = np.array([dictionary_distance(GridMeasure(a), GridMeasure(b), dictionary)
                     for a, b in zip(r1.snapshots, r2.snapshots)])
    gap = np.abs(r1.m - r2.m)
    times = r1.times
    rate = 2 * w.sup_bound + 2 * w.lip_bound
    if dist[0] > 0 and np.all(dist > 0) and times.size > 1:
        emp = float(np.polyfit(times, np.log(dist / dist[0]), 1)[0])
    else:
        emp = 0.0
    return GronwallReport(times, dist, gap, rate, emp)
