"""Traveling-wave profiles for exponentially distributed jumps.

With Exp(1) jumps a profile seen from the center of mass that moves at
constant speed c has the form

    rho(x) = K exp( int_0^x (w(s)/c - 1) ds ),

and the admissible speed c0 is the one that makes this profile centered.
Closed forms exist for the exponential rate (a generalized Gumbel law)
and for the step rate (a Laplace law).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaincc

from .model import Exponential, ExponentialUnit, JumpLaw, RateFunction, Step
from .specfun import (RootFindingError, _KRONROD_W, _NODES, adaptive_quad, digamma,
                      expand_bracket, find_root, log_gamma)

# integrand cut-off relative to the peak, in log scale (e^-41 ~ 1.6e-18)
_LOG_TAIL_CUT = -41.0


class WaveError(ValueError):
    pass


def _check_law(law):
    if law is not None and not isinstance(law, ExponentialUnit):
        raise WaveError("traveling-wave formulas need Exp(1) jump lengths")


@dataclass(frozen=True)
class WaveDensity:
    """Unnormalized profile x -> exp(int_0^x (w/c - 1)) for a given c."""

    rate: RateFunction
    c: float
    method: str = "auto"

    def __post_init__(self):
        if not self.c > 0:
            raise WaveError(f"wave speed must be positive, got c={self.c}")
        if self.rate.is_constant:
            raise WaveError("constant rate has no probability traveling wave")
        if self.method not in ("auto", "closed", "quad"):
            raise WaveError(f"unknown method {self.method!r}")

    def exponent(self, x):
        """int_0^x (w(s)/c - 1) ds."""
        x = np.asarray(x, dtype=float)
        W = None if self.method == "quad" else self.rate.antiderivative(x)
        if W is None:
            if self.method == "closed":
                raise WaveError(f"no closed-form antiderivative for {self.rate!r}")
            W = _antiderivative_quad(self.rate, x)
        return W / self.c - x

    def __call__(self, x):
        return np.exp(self.exponent(x))

    def peak(self) -> float:
        """A maximizer of the exponent: a point where w crosses c."""
        return _crossing(self.rate, self.c)

    def window(self) -> tuple[float, float]:
        """Interval outside which the profile is below e^-41 of its peak.

        Outside the peak the exponent is monotone, so a geometric outward
        walk finds the cut points; returns (lo, hi).
        """
        w = self.rate
        if not (w.inf_bound < self.c < w.sup_bound):
            raise WaveError(
                f"c={self.c} outside (inf w, sup w) = ({w.inf_bound}, {w.sup_bound}): "
                "profile is not integrable")
        x0 = self.peak()
        e0 = float(self.exponent(x0))
        ends = []
        for direction in (-1.0, 1.0):
            step = 1.0
            while float(self.exponent(x0 + direction * step)) - e0 > _LOG_TAIL_CUT:
                step *= 1.5
                if step > 1e7:
                    raise WaveError("profile tail does not decay; c too close to a rate bound")
            ends.append(x0 + direction * step)
        return ends[0], ends[1]


def wave_density(w: RateFunction, c: float, law: Optional[JumpLaw] = None,
                 method: str = "auto") -> WaveDensity:
    """The unnormalized traveling-wave profile for rate ``w`` and speed ``c``."""
    _check_law(law)
    return WaveDensity(w, float(c), method)


def _antiderivative_quad(w: RateFunction, x):
    xs = np.atleast_1d(x)
    out = np.empty(xs.shape)
    for idx, xi in np.ndenumerate(xs):
        res = adaptive_quad(w, 0.0, float(xi), tol=1e-13, rel_tol=1e-14,
                            breakpoints=w.breakpoints())
        out[idx] = res.value
    return out.reshape(np.shape(x))


def _crossing(w: RateFunction, c: float) -> float:
    """Some x with w(x-) >= c >= w(x+), found by bisection on w - c."""
    lo, hi = -1.0, 1.0
    while float(w(lo)) < c:
        lo *= 2.0
        if lo < -1e12:
            raise WaveError("rate never exceeds c")
    while float(w(hi)) > c:
        hi *= 2.0
        if hi > 1e12:
            raise WaveError("rate never drops below c")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if float(w(mid)) > c:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _moments(wd: WaveDensity, orders=(0, 1)):
    """int x^k exp(E(x) - E(peak)) dx for each k, plus (peak exponent, window)."""
    lo, hi = wd.window()
    x0 = wd.peak()
    e0 = float(wd.exponent(x0))
    cuts = tuple(p for p in (x0, 0.0, *wd.rate.breakpoints()) if lo < p < hi)
    out = []
    for k in orders:
        def g(x, k=k):
            return x**k * np.exp(wd.exponent(x) - e0)
        res = adaptive_quad(g, lo, hi, tol=1e-15, rel_tol=1e-14, max_intervals=20000,
                            breakpoints=cuts)
        out.append(res.value)
    return out, e0, (lo, hi)


def centering_functional(w: RateFunction, c: float, method: str = "auto") -> float:
    """F(c) = int x rho_c / int rho_c: the mean of the normalized profile."""
    (m0, m1), _, _ = _moments(WaveDensity(w, c, method))
    return m1 / m0


@dataclass(frozen=True)
class SpeedResult:
    c: float
    residual: float
    iterations: int
    bracket: tuple


def solve_speed(w: RateFunction, law: Optional[JumpLaw] = None, ftol: float = 1e-10,
                method: str = "auto") -> SpeedResult:
    """The speed c0 that makes the wave profile centered.

    For bounded w the bracket is grown from the middle of (inf w, sup w)
    toward its ends; otherwise a geometric sign scan around 1 is used.
    Bisection with secant polish then drives |F| below ``ftol``.
    """
    _check_law(law)
    if w.is_constant:
        raise WaveError("constant rate has no traveling-wave speed")

    def F(c):
        return centering_functional(w, c, method)

    if w.bounded:
        lo_b, hi_b = w.inf_bound, w.sup_bound
        width = hi_b - lo_b
        lo = hi = lo_b + 0.5 * width
        flo = fhi = F(lo)
        k = 1
        while flo <= 0.0:
            lo = lo_b + width * 2.0**-(k + 1)
            flo = F(lo)
            k += 1
            if k > 60:
                raise RootFindingError(f"F stays <= 0 down to c={lo!r} (F={flo:.3g})")
        k = 1
        while fhi >= 0.0:
            hi = hi_b - width * 2.0**-(k + 1)
            fhi = F(hi)
            k += 1
            if k > 60:
                raise RootFindingError(f"F stays >= 0 up to c={hi!r} (F={fhi:.3g})")
    else:
        guess = 1.0 / w.beta if isinstance(w, Exponential) else 1.0
        lo, hi = expand_bracket(F, guess)
    res = find_root(F, lo, hi, ftol=ftol, xtol=1e-15)
    return SpeedResult(res.root, res.value, res.iterations, (lo, hi))


# ---------------------------------------------------------------------------
# Normalized waves


@dataclass(frozen=True)
class WaveSolution:
    """A normalized traveling-wave profile with speed ``c``.

    ``logpdf`` evaluates log rho; ``window`` is an interval outside which
    the density is below e^-41 of its peak and decays at least
    exponentially (a certified tail, used for CDF quadrature).
    """

    rate: RateFunction
    c: float
    K: float
    logpdf: Callable = field(repr=False)
    window: tuple = (-50.0, 50.0)
    offset: float = 0.0
    label: str = "wave"
    cdf_fn: Optional[Callable] = field(default=None, repr=False)
    breakpoints: tuple = ()

    def pdf(self, x):
        return np.exp(self.logpdf(np.asarray(x, dtype=float)))

    __call__ = pdf

    def cdf(self, x):
        if self.cdf_fn is not None:
            return self.cdf_fn(np.asarray(x, dtype=float))
        return _panel_cdf(self, x)

    def integrate(self, g: Callable, tol: float = 1e-13) -> float:
        lo, hi = self.window
        cuts = tuple(p for p in (0.0, *self.breakpoints) if lo < p < hi)
        return adaptive_quad(lambda x: g(x) * self.pdf(x), lo, hi, tol=tol, rel_tol=1e-14,
                             max_intervals=20000, breakpoints=cuts).value

    def mass(self) -> float:
        return self.integrate(lambda x: np.ones_like(x))

    def mean(self) -> float:
        return self.integrate(lambda x: x)

    def speed_identity(self) -> float:
        """int w rho; equals c for a true wave."""
        return self.integrate(lambda x: self.rate(x))

    def tail_rate(self, x0: float) -> float:
        """Decay exponent 1 - w(x0)/c valid to the right of x0."""
        return 1.0 - float(self.rate(x0)) / self.c

    def shifted(self, d: float) -> "WaveSolution":
        """The profile translated by d (rho(. - d))."""
        lp, cdf = self.logpdf, self.cdf
        return WaveSolution(self.rate, self.c, self.K, lambda x: lp(np.asarray(x) - d),
                            (self.window[0] + d, self.window[1] + d), self.offset + d,
                            self.label, lambda x: cdf(np.asarray(x) - d),
                            tuple(p + d for p in (0.0, *self.breakpoints)))


# cache for generic CDF tables: id(solution) -> (grid, cumulative)
_CDF_TABLES: dict = {}


def _panel_cdf(sol: WaveSolution, x, panels: int = 4096):
    key = id(sol)
    lo, hi = sol.window
    if key not in _CDF_TABLES:
        grid = np.linspace(lo, hi, panels + 1)
        pieces = _panel_integrals(sol, grid[:-1], grid[1:])
        _CDF_TABLES[key] = (grid, np.concatenate([[0.0], np.cumsum(pieces)]), sol)
    grid, cum, _ = _CDF_TABLES[key]
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, lo, hi)
    j = np.clip(np.searchsorted(grid, xc, side="right") - 1, 0, grid.size - 2)
    out = cum[j] + _panel_integrals(sol, grid[j], xc)
    return np.clip(out, 0.0, 1.0)


def _panel_integrals(sol, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    pts = mid[..., None] + half[..., None] * _NODES
    return half * (sol.pdf(pts) @ _KRONROD_W)


def normalize(wd: WaveDensity, label: str = "wave") -> WaveSolution:
    """Normalize a profile to mass 1 (no recentering is applied)."""
    (m0, m1), e0, (lo, hi) = _moments(wd)
    logK = -e0 - math.log(m0)
    mean = m1 / m0

    def logpdf(x, wd=wd, logK=logK):
        return logK + wd.exponent(x)

    return WaveSolution(wd.rate, wd.c, math.exp(logK), logpdf, (lo, hi), mean, label,
                        breakpoints=tuple(wd.rate.breakpoints()))


def traveling_wave(w: RateFunction, law: Optional[JumpLaw] = None) -> WaveSolution:
    """Solve for the speed and return the normalized, centered wave."""
    sp = solve_speed(w, law)
    return normalize(wave_density(w, sp.c, law), label=f"wave[{type(w).__name__}]")


def gumbel_speed(beta: float) -> float:
    """(1/beta) exp(-psi(1/beta))."""
    return math.exp(-digamma(1.0 / beta)) / beta


def gumbel_wave(beta: float) -> WaveSolution:
    """The generalized Gumbel wave for w(x) = exp(-beta x).

    If G ~ Gamma(1/beta, 1) then X = (psi(1/beta) - log G)/beta has this
    density, which gives the closed-form CDF used here.
    """
    if not beta > 0:
        raise WaveError("beta must be positive")
    k = 1.0 / beta
    psi = digamma(k)
    shift = psi / beta
    log_norm = math.log(beta) - log_gamma(k)

    def logpdf(x):
        y = beta * (np.asarray(x, dtype=float) - shift)
        return log_norm - y / beta - np.exp(-y)

    def cdf(x):
        u = np.exp(-(beta * np.asarray(x, dtype=float) - psi))
        return gammaincc(k, u)

    # window: left tail is doubly exponential, right tail e^{-x}
    lo = shift - (math.log(60.0 + abs(log_norm)) + 2.0) / beta - 2.0
    hi = shift + 45.0 + 2.0 * abs(log_norm)
    return WaveSolution(Exponential(beta), gumbel_speed(beta), math.exp(log_norm), logpdf,
                        (lo, hi), 0.0, f"gumbel[beta={beta:g}]", cdf)


def sample_gumbel_wave(beta: float, rng: np.random.Generator, size=None):
    """Draw from the Gumbel wave via the Gamma representation."""
    k = 1.0 / beta
    return (digamma(k) - np.log(rng.standard_gamma(k, size))) / beta


def laplace_wave(a: float, b: float) -> WaveSolution:
    """The wave for the step rate: a Laplace law with speed (a+b)/2."""
    w = Step(a, b)
    lam = (a - b) / (a + b)
    K = 0.5 * lam
    logK = math.log(K)

    def logpdf(x):
        return logK - lam * np.abs(np.asarray(x, dtype=float))

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.5 * np.exp(lam * np.minimum(x, 0.0)),
                        1.0 - 0.5 * np.exp(-lam * np.maximum(x, 0.0)))

    half = -_LOG_TAIL_CUT / lam
    return WaveSolution(w, 0.5 * (a + b), K, logpdf, (-half, half), 0.0,
                        f"laplace[a={a:g},b={b:g}]", cdf, (0.0,))
