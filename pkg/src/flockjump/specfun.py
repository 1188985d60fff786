"""Special functions and scalar numerical primitives.

Log-gamma, digamma, a globally adaptive Gauss-Kronrod integrator and a
safeguarded bracketing root finder. Everything here works on real,
positive arguments only.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

EULER_GAMMA = 0.57721566490153286060651209008240243


class QuadratureError(ArithmeticError):
    """Quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class RootFindingError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Gamma family

# Lanczos approximation, g = 671/128 with 14 terms (Numerical Recipes, 3rd ed.)
_LANCZOS_G = 5.24218750000000000
_LANCZOS_COF = (
    57.1562356658629235, -59.5979603554754912, 14.1360979747417471,
    -0.491913816097620199, 0.339946499848118887e-4, 0.465236289270485756e-4,
    -0.983744753048795646e-4, 0.158088703224912494e-3, -0.210264441724104883e-3,
    0.217439618115212643e-3, -0.164318106536763890e-3, 0.844182239838527433e-4,
    -0.261908384015814087e-4, 0.368991826595316234e-5,
)
_SQRT_2PI = 2.5066282746310005


def log_gamma(x: float) -> float:
    """ln Gamma(x) for real x > 0."""
    x = float(x)
    if not x > 0.0 or math.isinf(x):
        raise ValueError(f"log_gamma requires a finite x > 0, got {x!r}")
    if x < 0.5:
        # ln G(x) = ln G(x+1) - ln x keeps the series in its accurate range
        return log_gamma(x + 1.0) - math.log(x)
    y = x
    tmp = x + _LANCZOS_G
    tmp = (x + 0.5) * math.log(tmp) - tmp
    ser = 0.999999999999997092
    for c in _LANCZOS_COF:
        y += 1.0
        ser += c / y
    return tmp + math.log(_SQRT_2PI * ser / x)


def gamma(x: float) -> float:
    return math.exp(log_gamma(x))


# Bernoulli-number coefficients B_2k / (2k) for the asymptotic series
_DIGAMMA_ASYMP = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
DIGAMMA_SWITCH = 10.0


def digamma(x: float) -> float:
    """psi(x) = Gamma'(x)/Gamma(x) for real x > 0.

    Upward recurrence psi(x) = psi(x+1) - 1/x until x >= 10, then the
    asymptotic expansion in 1/x^2.
    """
    x = float(x)
    if not x > 0.0 or math.isinf(x):
        raise ValueError(f"digamma requires a finite x > 0, got {x!r}")
    shift = 0.0
    while x < DIGAMMA_SWITCH:
        shift -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    for c in reversed(_DIGAMMA_ASYMP):
        series = series * inv2 + c
    series *= inv2
    return shift + math.log(x) - 0.5 / x - series


# ---------------------------------------------------------------------------
# Adaptive quadrature

# 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15)
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
# full symmetric node set on [-1, 1] and the matching weights
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_W = np.zeros(15)
_GAUSS_W[[1, 3, 5]] = _WG[:3]
_GAUSS_W[[9, 11, 13]] = _WG[2::-1]
_GAUSS_W[7] = _WG[3]


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float
    evaluations: int
    converged: bool = True
    intervals: int = 1


def _eval_vectorized(f, x):
    try:
        y = np.asarray(f(x), dtype=float)
    except TypeError:
        y = None
    if y is None or y.shape != x.shape:
        y = np.array([f(xi) for xi in x], dtype=float)
    return y


def gauss_kronrod_15(f, a: float, b: float) -> tuple[float, float]:
    """One G7/K15 panel: (Kronrod value, |Kronrod - Gauss|)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = _eval_vectorized(f, mid + half * _NODES)
    k = half * float(_KRONROD_W @ fx)
    g = half * float(_GAUSS_W @ fx)
    return k, abs(k - g)


def adaptive_quad(
    f: Callable,
    a: float,
    b: float,
    tol: float = 1e-10,
    rel_tol: float = 0.0,
    max_intervals: int = 2000,
    breakpoints=(),
) -> QuadratureResult:
    """Globally adaptive G7/K15 integration of ``f`` over ``[a, b]``.

    ``f`` should accept a numpy array; scalar-only callables are also
    handled (more slowly). The interval with the largest error estimate is
    bisected until the summed estimate is below ``max(tol, rel_tol*|I|)``.
    When ``max_intervals`` is exhausted the result is returned with
    ``converged=False`` instead of raising.
    """
    a, b = float(a), float(b)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("adaptive_quad needs finite limits; truncate the tails first")
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    if a == b:
        return QuadratureResult(0.0, 0.0, 0, True, 0)

    cuts = sorted({a, b, *[float(p) for p in breakpoints if a < p < b]})
    heap: list[tuple[float, float, float, float]] = []
    total, err_total, evals = 0.0, 0.0, 0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        v, e = gauss_kronrod_15(f, lo, hi)
        evals += 15
        total += v
        err_total += e
        heapq.heappush(heap, (-e, lo, hi, v))

    while err_total > max(tol, rel_tol * abs(total)):
        if len(heap) >= max_intervals:
            return QuadratureResult(sign * total, err_total, evals, False, len(heap))
        neg_e, lo, hi, v = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            # interval cannot be split further in floating point
            heapq.heappush(heap, (neg_e, lo, hi, v))
            return QuadratureResult(sign * total, err_total, evals, False, len(heap))
        v1, e1 = gauss_kronrod_15(f, lo, mid)
        v2, e2 = gauss_kronrod_15(f, mid, hi)
        evals += 30
        total += v1 + v2 - v
        err_total += e1 + e2 + neg_e
        heapq.heappush(heap, (-e1, lo, mid, v1))
        heapq.heappush(heap, (-e2, mid, hi, v2))
    # recompute the sums to shed accumulated update roundoff
    total = math.fsum(item[3] for item in heap)
    err_total = math.fsum(-item[0] for item in heap)
    return QuadratureResult(sign * total, err_total, evals, True, len(heap))


# ---------------------------------------------------------------------------
# Root finding


@dataclass(frozen=True)
class RootResult:
    root: float
    value: float
    iterations: int
    bracket: tuple[float, float]


def expand_bracket(
    F: Callable[[float], float],
    guess: float,
    factor: float = 2.0,
    max_steps: int = 200,
) -> tuple[float, float]:
    """Scan ``guess * factor**k`` for k = 0, +-1, +-2, ... until ``F`` changes sign.

    Intended for positive parameters where the root location is only
    known up to orders of magnitude. Returns a bracket ``(lo, hi)`` with
    ``F(lo)`` and ``F(hi)`` of opposite signs.
    """
    if guess <= 0:
        raise ValueError("guess must be positive")
    scanned = [(guess, F(guess))]
    if scanned[0][1] == 0.0:
        return guess, guess
    for k in range(1, max_steps + 1):
        for c in (guess * factor**k, guess * factor**-k):
            v = F(c)
            for c0, v0 in scanned:
                if v == 0.0 or np.sign(v) != np.sign(v0):
                    if abs(math.log(c / c0)) <= math.log(factor) * 1.0001:
                        return (min(c, c0), max(c, c0))
            scanned.append((c, v))
        scanned.sort()
        for (c0, v0), (c1, v1) in zip(scanned[:-1], scanned[1:]):
            if np.sign(v0) != np.sign(v1):
                return c0, c1
    report = ", ".join(f"F({c:.3g})={v:.3g}" for c, v in scanned)
    raise RootFindingError(f"no sign change found; scan: {report}")


def find_root(
    F: Callable[[float], float],
    lo: float,
    hi: float,
    ftol: float = 1e-12,
    xtol: float = 1e-14,
    max_iter: int = 200,
    polish_fraction: float = 1e-3,
) -> RootResult:
    """Bisection followed by secant polish on a sign-changing bracket.

    Bisects until the bracket is ``polish_fraction`` of its initial width,
    then takes secant steps through the two most recent iterates. A secant
    step that leaves the bracket is replaced by a bisection step.
    """
    flo, fhi = F(lo), F(hi)
    if flo == 0.0:
        return RootResult(lo, flo, 0, (lo, lo))
    if fhi == 0.0:
        return RootResult(hi, fhi, 0, (hi, hi))
    if np.sign(flo) == np.sign(fhi):
        raise RootFindingError(
            f"bracket [{lo}, {hi}] has no sign change (F={flo:.3g}, {fhi:.3g})")
    polish_width = polish_fraction * (hi - lo)
    prev = None
    for it in range(1, max_iter + 1):
        x = 0.5 * (lo + hi)
        if hi - lo < polish_width and prev is not None:
            (x0, f0), (x1, f1) = prev
            if f1 != f0:
                cand = x1 - f1 * (x1 - x0) / (f1 - f0)
                if lo < cand < hi:
                    x = cand
        fx = F(x)
        if abs(fx) < ftol:
            return RootResult(x, fx, it, (lo, hi))
        if np.sign(fx) == np.sign(flo):
            old = (lo, flo)
            lo, flo = x, fx
        else:
            old = (hi, fhi)
            hi, fhi = x, fx
        prev = (old, (x, fx)) if prev is None else (prev[1], (x, fx))
        if hi - lo < xtol * max(1.0, abs(x)):
            break
    x, fx = (lo, flo) if abs(flo) < abs(fhi) else (hi, fhi)
    if abs(fx) >= ftol:
        raise RootFindingError(
            f"root finder stalled at x={x!r} with |F|={abs(fx):.3e} > {ftol:.1e}")
    return RootResult(x, fx, max_iter, (lo, hi))
