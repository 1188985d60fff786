"""Two particles with w(x) = exp(-2x) and Exp(1) jumps.

The gap between the particles is a Markov process of its own.  Here we run
the particle simulator for a million events, build the time-weighted gap
histogram and set it next to the stationary density 1/cosh^2(g).
"""
import numpy as np

from flockjump.exact_small import GapChain, bd_stationary
from flockjump.model import DeterministicUnit, Exponential, ExponentialUnit, InitialCondition, Step
from flockjump.simulator import SimulationConfig, simulate


def time_weighted_gaps(rec):
    ev = rec.events
    steps = np.zeros((len(ev), 2))
    steps[np.arange(len(ev)), ev.index] = ev.jump
    x = np.vstack([rec.initial_positions, rec.initial_positions + np.cumsum(steps, axis=0)])
    hold = np.diff(np.concatenate([[0.0], ev.time, [rec.times[-1]]]))
    return np.abs(x[:, 0] - x[:, 1]), hold


cfg = SimulationConfig(Exponential(2.0), ExponentialUnit(), 2,
                       InitialCondition.point_mass(0.0), seed=1, max_events=10**6)
rec = simulate(cfg, 1e9, keep_events=True)
gaps, hold = time_weighted_gaps(rec)
edges = np.linspace(0, 3, 13)
hist, _ = np.histogram(gaps, edges, weights=hold, density=True)
mid = 0.5 * (edges[1:] + edges[:-1])
print("continuous jumps: gap  simulated  1/cosh^2")
for g, h in zip(mid, hist):
    print(f"  {g:5.2f}  {h:8.4f}  {1 / np.cosh(g) ** 2:8.4f}")

# with unit jumps and a step rate the gap lives on the integers
w = Step(2, 1)
pi = bd_stationary(GapChain(w)).pi
cfg = SimulationConfig(w, DeterministicUnit(), 2, InitialCondition.point_mass(0.0),
                       seed=2, max_events=10**6)
rec = simulate(cfg, 1e9, keep_events=True)
gaps, hold = time_weighted_gaps(rec)
freq = np.bincount(np.rint(gaps).astype(int), weights=hold) / hold.sum()
print("\nunit jumps, Step(2,1): k  simulated  exact")
for k in range(6):
    print(f"  {k}  {freq[k]:.4f}  {pi[k]:.4f}")
