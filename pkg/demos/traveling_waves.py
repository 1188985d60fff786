"""Traveling waves of the mean-field equation and how the solver keeps them.

For each rate we print the wave speed from the root finder next to the
closed form, then start the mean-field solver on the exact wave and check
that after two time units it has only been translated.
"""
import math

from flockjump.meanfield import GridDensity, mf_evolve
from flockjump.metrics import wasserstein1
from flockjump.model import Exponential, ExponentialUnit, Step
from flockjump.specfun import digamma
from flockjump.waves import gumbel_wave, laplace_wave, solve_speed

for a, b in [(2, 1), (3, 1), (5, 0.5)]:
    print(f"Step({a},{b}): c = {solve_speed(Step(a, b)).c:.10f}   (a+b)/2 = {(a + b) / 2}")
for beta in (0.5, 1.0, 2.0):
    closed = math.exp(-digamma(1 / beta)) / beta
    print(f"exp(-{beta} x): c = {solve_speed(Exponential(beta)).c:.10f}   closed form {closed:.10f}")

T = 2.0
for name, w, sol, lo, width in [("Laplace", Step(2, 1), laplace_wave(2, 1), -64.0, 128.0),
                                ("Gumbel", Exponential(1.0), gumbel_wave(1.0), -6.5, 32.0)]:
    dx = 2.0**-7
    rho0 = GridDensity.from_cdf(sol.cdf, lo, lo + width, int(width / dx))
    run = mf_evolve(rho0, w, ExponentialUnit(), T, [T])
    err = wasserstein1(run.snapshots[-1], sol.shifted(sol.c * T))
    print(f"{name}: W1 to the translated wave after t={T}: {err:.2e}  (dx = {dx})")
    print(f"  speed at the end {run.speed[-1]:.6f}, mass drift {run.cumulative_mass_drift:.1e}")
