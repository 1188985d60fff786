"""Distances between one-dimensional probability measures.

Three kinds of measure share one interface: weighted point clouds
(:class:`EmpiricalMeasure`), piecewise-uniform densities on a grid
(:class:`GridMeasure`) and closed-form wave profiles
(:class:`ClosedFormMeasure`). For the first two the CDF is piecewise
linear between known breakpoints, so W1 and the Kolmogorov distance are
computed exactly; closed forms go through quadrature with an error
estimate and a certified tail bound.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import IDENTITY

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class MetricsError(ValueError):
    pass


class Measure1D:
    """Base class: CDF access plus expectations."""

    piecewise_linear = True

    def cdf(self, x):
        raise NotImplementedError

    def cdf_left(self, x):
        """Left limit F(x-)."""
        return self.cdf(x)

    def breakpoints(self) -> np.ndarray:
        raise NotImplementedError

    def expect(self, f: Callable) -> float:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.expect(lambda x: x)

    @property
    def abs_moment(self) -> float:
        return self.expect(np.abs)


class EmpiricalMeasure(Measure1D):
    """Atoms at ``positions`` with optional weights (default uniform)."""

    def __init__(self, positions, weights=None):
        x = np.asarray(positions, dtype=float).ravel()
        if x.size == 0:
            raise MetricsError("empty empirical measure")
        if not np.all(np.isfinite(x)):
            raise MetricsError("positions must be finite")
        order = np.argsort(x, kind="stable")
        self.positions = x[order]
        if weights is None:
            self.weights = np.full(x.size, 1.0 / x.size)
            self.uniform = True
        else:
            wts = np.asarray(weights, dtype=float).ravel()[order]
            if wts.shape != x.shape or np.any(wts < 0) or wts.sum() <= 0:
                raise MetricsError("weights must be nonnegative with positive total")
            self.weights = wts / wts.sum()
            self.uniform = False
        self._cum = np.concatenate([[0.0], np.cumsum(self.weights)])
        self._cum[-1] = 1.0
        self.abs_first = float(np.dot(np.abs(self.positions), self.weights))

    def __len__(self):
        return self.positions.size

    def cdf(self, x):
        return self._cum[np.searchsorted(self.positions, np.asarray(x, dtype=float), "right")]

    def cdf_left(self, x):
        return self._cum[np.searchsorted(self.positions, np.asarray(x, dtype=float), "left")]

    def breakpoints(self):
        return self.positions

    def expect(self, f):
        if f is IDENTITY:
            return float(np.dot(self.positions, self.weights))
        return float(np.dot(np.asarray(f(self.positions), dtype=float), self.weights))

    @classmethod
    def from_record(cls, record, k: int = -1):
        """Snapshot ``k`` of a TrajectoryRecord (positions or histogram)."""
        if record.positions is not None:
            return cls(record.positions[k])
        edges, counts = record.histograms[k]
        return GridMeasure(edges, counts)


class GridMeasure(Measure1D):
    """Piecewise-uniform density: ``masses[j]`` spread over [edges[j], edges[j+1]].

    Accepts a GridDensity directly.
    """

    def __init__(self, grid, masses=None):
        if masses is None:
            self.edges = np.asarray(grid.edges, dtype=float)
            m = np.asarray(grid.values, dtype=float) * grid.dx
        else:
            self.edges = np.asarray(grid, dtype=float)
            m = np.asarray(masses, dtype=float)
        if self.edges.size != m.size + 1 or np.any(np.diff(self.edges) <= 0):
            raise MetricsError("edges must be increasing with one more entry than masses")
        if np.any(m < -1e-12 * np.abs(m).max()):
            raise MetricsError("negative cell mass")
        m = np.maximum(m, 0.0)
        self.masses = m / m.sum()
        self._cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        self._cum[-1] = 1.0
        mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.abs_first = self.expect(np.abs)
        self._mid = mid

    def cdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self.edges, self._cum)

    def breakpoints(self):
        return self.edges

    def expect(self, f):
        a, b = self.edges[:-1], self.edges[1:]
        if f is IDENTITY:
            return float(np.dot(0.5 * (a + b), self.masses))
        half = 0.5 * (b - a)
        pts = 0.5 * (a + b)[:, None] + half[:, None] * _GL_X
        vals = np.asarray(f(pts), dtype=float) @ _GL_W * 0.5
        return float(np.dot(vals, self.masses))


class ClosedFormMeasure(Measure1D):
    """A WaveSolution (possibly shifted) seen as a measure.

    The tail outside ``solution.window`` must decay exponentially; the
    constructor computes the exponents and rejects profiles where it
    cannot certify them.
    """

    piecewise_linear = False

    def __init__(self, solution, tail_tol: float = 1e-8):
        self.solution = solution
        lo, hi = solution.window
        self.window = (float(lo), float(hi))
        s = solution.offset
        # rho ~ exp(int (w/c - 1)); decay exponents just outside the window
        lam_r = 1.0 - float(solution.rate(hi - s)) / solution.c
        lam_l = float(solution.rate(lo - s)) / solution.c - 1.0
        F_lo = float(solution.cdf(lo))
        S_hi = 1.0 - float(solution.cdf(hi))
        if lam_r <= 0 or lam_l <= 0:
            raise MetricsError("closed-form measure has no certified exponential tail")
        # int_{-inf}^{lo} F <= F(lo)/lam_l, and likewise on the right
        self.tail_bound = F_lo / lam_l + S_hi / lam_r + F_lo + S_hi
        if self.tail_bound > tail_tol:
            raise MetricsError(f"tail bound {self.tail_bound:.3g} exceeds {tail_tol:.3g}")
        self.abs_first = solution.integrate(np.abs)

    def cdf(self, x):
        return self.solution.cdf(np.asarray(x, dtype=float))

    def breakpoints(self):
        return np.array(self.window)

    def expect(self, f):
        if f is IDENTITY:
            return self.solution.mean()
        return self.solution.integrate(f)


def _as_measure(mu) -> Measure1D:
    if isinstance(mu, Measure1D):
        return mu
    if hasattr(mu, "edges") and hasattr(mu, "values"):
        return GridMeasure(mu)
    if hasattr(mu, "logpdf"):
        return ClosedFormMeasure(mu)
    return EmpiricalMeasure(mu)


def _piece_values(mu: Measure1D, nu: Measure1D, pts: np.ndarray):
    """Difference of CDFs at the right of each point and the left of the next."""
    dl = mu.cdf(pts[:-1]) - nu.cdf(pts[:-1])
    dr = mu.cdf_left(pts[1:]) - nu.cdf_left(pts[1:])
    return dl, dr


def _abs_linear_integral(dl, dr, h):
    """Exact int |linear| over intervals of width h with end values dl, dr."""
    out = 0.5 * h * (np.abs(dl) + np.abs(dr))
    cross = dl * dr < 0
    if np.any(cross):
        a, b = dl[cross], dr[cross]
        out[cross] = 0.5 * h[cross] * (a * a + b * b) / (np.abs(a) + np.abs(b))
    return out


@dataclass
class DistanceResult:
    value: float
    error: float

    def __float__(self):
        return self.value


def wasserstein1_with_error(mu, nu, panels: int = 8192) -> DistanceResult:
    """d1 = int |F_mu - F_nu| with an error estimate (0 when exact)."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if (isinstance(mu, EmpiricalMeasure) and isinstance(nu, EmpiricalMeasure)
            and mu.uniform and nu.uniform and len(mu) == len(nu)):
        # order-statistics matching
        return DistanceResult(float(np.mean(np.abs(mu.positions - nu.positions))), 0.0)
    pts = np.union1d(mu.breakpoints(), nu.breakpoints())
    if mu.piecewise_linear and nu.piecewise_linear:
        dl, dr = _piece_values(mu, nu, pts)
        return DistanceResult(math.fsum(_abs_linear_integral(dl, dr, np.diff(pts))), 0.0)
    tail = sum(m.tail_bound for m in (mu, nu) if isinstance(m, ClosedFormMeasure))
    lo, hi = pts[0], pts[-1]
    fine = np.union1d(pts, np.linspace(lo, hi, panels + 1))
    coarse = np.union1d(pts, np.linspace(lo, hi, panels // 2 + 1))
    v_fine = _smooth_w1(mu, nu, fine)
    v_coarse = _smooth_w1(mu, nu, coarse)
    return DistanceResult(v_fine, abs(v_fine - v_coarse) + tail)


def _smooth_w1(mu, nu, pts):
    a, b = pts[:-1], pts[1:]
    half = 0.5 * (b - a)
    x = 0.5 * (a + b)[:, None] + half[:, None] * _GL_X
    # inside each panel both CDFs are continuous (atoms sit on panel ends)
    d = np.abs(mu.cdf(x) - nu.cdf(x))
    return math.fsum(half * (d @ _GL_W))


def wasserstein1(mu, nu) -> float:
    """1-Wasserstein distance between two measures on the line."""
    return wasserstein1_with_error(mu, nu).value


def kolmogorov(mu, nu, panels: int = 8192) -> float:
    """sup_x |F_mu(x) - F_nu(x)| (exact for the piecewise-linear kinds)."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    pts = np.union1d(mu.breakpoints(), nu.breakpoints())
    if not (mu.piecewise_linear and nu.piecewise_linear):
        pts = np.union1d(pts, np.linspace(pts[0], pts[-1], panels + 1))
    d1 = np.abs(mu.cdf(pts) - nu.cdf(pts))
    d2 = np.abs(mu.cdf_left(pts) - nu.cdf_left(pts))
    return float(max(d1.max(), d2.max()))


# ---------------------------------------------------------------------------
# Test-function dictionary


@dataclass
class TestDictionary:
    """Finite family of test functions with |f| <= 1, optionally plus the identity.

    The default uses tanh((x - c)/s) for 32 centers spread over the data
    range and three widths s. A max over a finite family is a lower bound
    for the supremum over all bounded continuous f.
    """

    __test__ = False  # not a pytest class

    functions: list = field(default_factory=list)
    names: list = field(default_factory=list)
    include_identity: bool = True

    def __post_init__(self):
        probe = np.linspace(-1e3, 1e3, 4001)
        for name, f in zip(self.names, self.functions):
            v = np.asarray(f(probe), dtype=float)
            if not np.all(np.abs(v) <= 1.0 + 1e-12):
                raise MetricsError(f"test function {name} exceeds 1 in absolute value")

    def __len__(self):
        return len(self.functions) + int(self.include_identity)

    @classmethod
    def default(cls, lo: float, hi: float, n_centers: int = 32,
                widths: Sequence[float] = (0.25, 1.0, 4.0), include_identity: bool = True):
        """Sigmoids on [lo, hi]; widths are multiples of the center spacing."""
        if not hi > lo:
            raise MetricsError("need hi > lo")
        centers = np.linspace(lo, hi, n_centers)
        spacing = (hi - lo) / max(n_centers - 1, 1)
        fs, names = [], []
        for k in widths:
            s = k * spacing
            for c in centers:
                fs.append(lambda x, c=c, s=s: np.tanh((np.asarray(x) - c) / s))
                names.append(f"tanh((x-{c:.4g})/{s:.4g})")
        return cls(fs, names, include_identity)

    @classmethod
    def identity_only(cls):
        return cls([], [], True)

    def with_cosines(self, lo: float, hi: float, n: int = 8):
        """Add windowed cosines cos(k pi (x - lo)/(hi - lo)) on [lo, hi], 0 outside."""
        fs, names = list(self.functions), list(self.names)
        L = hi - lo
        for k in range(1, n + 1):
            def f(x, k=k):
                x = np.asarray(x, dtype=float)
                inside = (x >= lo) & (x <= hi)
                return np.where(inside, np.sin(math.pi * (x - lo) / L)
                                * np.cos(k * math.pi * (x - lo) / L), 0.0)
            fs.append(f)
            names.append(f"wcos{k}")
        return TestDictionary(fs, names, self.include_identity)

    def members(self):
        out = list(self.functions)
        if self.include_identity:
            out.append(IDENTITY)
        return out


def dictionary_distance(mu, nu, D: TestDictionary) -> float:
    """max over f in D of |<f, mu> - <f, nu>|, a lower bound of d_H."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    best = 0.0
    for f in D.members():
        best = max(best, abs(mu.expect(f) - nu.expect(f)))
    return best


# ---------------------------------------------------------------------------
# Fluid-limit comparison


@dataclass
class ConvergenceTable:
    """Rows (n, t, seed, d1, dK, dH) plus per-(n, t) means and slopes."""

    rows: list
    means: dict          # (n, t) -> mean d1 over seeds
    slopes: dict         # t -> fitted slope of log mean d1 vs log n
    warning: str = ""

    def column(self, name: str) -> np.ndarray:
        k = ("n", "t", "seed", "d1", "dK", "dH").index(name)
        return np.array([r[k] for r in self.rows])

    def monotone(self, t: float) -> bool:
        ns = sorted({n for n, tt in self.means if tt == t})
        vals = [self.means[(n, t)] for n in ns]
        return all(b < a for a, b in zip(vals, vals[1:]))


def fluid_limit_report(runs, mf_run, rate=None, law=None,
                       dictionary: Optional[TestDictionary] = None) -> ConvergenceTable:
    """Compare simulated empirical measures to a mean-field run.

    ``runs`` is a list of (SimulationConfig, TrajectoryRecord) pairs. All
    configs must share the rate, jump law and initial law; snapshot times
    must match those of ``mf_run``.
    """
    if not runs:
        raise MetricsError("no simulation runs given")
    ref = runs[0][0]
    key = lambda c: (c.rate.to_dict(), c.law.to_dict(), c.initial.to_dict())
    for cfg, _ in runs:
        if key(cfg) != key(ref):
            raise MetricsError("runs use different rate, jump law or initial law")
    if rate is not None and rate.to_dict() != ref.rate.to_dict():
        raise MetricsError("mean-field rate differs from the simulations")
    if law is not None and law.to_dict() != ref.law.to_dict():
        raise MetricsError("mean-field jump law differs from the simulations")
    warning = ""
    if not ref.rate.bounded:
        warning = "WARNING: unbounded rate; the fluid-limit theorem assumes a bounded w"
        warnings.warn(warning)
    mf_times = np.asarray(mf_run.times)
    rows = []
    for cfg, rec in runs:
        if rec.truncated:
            raise MetricsError(f"run n={cfg.n} seed={cfg.seed} was truncated")
        for k, t in enumerate(rec.times):
            j = int(np.argmin(np.abs(mf_times - t)))
            if abs(mf_times[j] - t) > 1e-9 * max(1.0, abs(t)):
                raise MetricsError(f"mean-field run has no snapshot at t={t}")
            mu_n = EmpiricalMeasure.from_record(rec, k)
            mu = GridMeasure(mf_run.snapshots[j])
            D = dictionary
            if D is None:
                lo = min(mu_n.breakpoints()[0], mu.breakpoints()[0])
                hi = max(mu_n.breakpoints()[-1], mu.breakpoints()[-1])
                D = TestDictionary.default(lo, hi)
            rows.append((cfg.n, float(t), cfg.replica,
                         wasserstein1(mu_n, mu), kolmogorov(mu_n, mu),
                         dictionary_distance(mu_n, mu, D)))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    means: dict = {}
    for n, t, _, d1, _, _ in rows:
        means.setdefault((n, t), []).append(d1)
    means = {k: float(np.mean(v)) for k, v in means.items()}
    slopes = {}
    for t in sorted({t for _, t in means}):
        ns = sorted(n for n, tt in means if tt == t)
        if len(ns) >= 2 and all(means[(n, t)] > 0 for n in ns):
            slopes[t] = float(np.polyfit(np.log(ns), np.log([means[(n, t)] for n in ns]), 1)[0])
    return ConvergenceTable(rows, means, slopes, warning)
