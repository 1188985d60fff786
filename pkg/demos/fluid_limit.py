"""Finite particle systems approach the mean-field density as n grows.

A smoothed step rate keeps every jump rate bounded.  We run a handful of
replicas at three sizes and print the mean distance to the mean-field
solution at t = 1 and t = 5.
"""
from scipy import stats

from flockjump.meanfield import GridDensity, mf_evolve
from flockjump.metrics import fluid_limit_report
from flockjump.model import BoundedSmooth, ExponentialUnit, InitialCondition
from flockjump.simulator import SimulationConfig, simulate

w = BoundedSmooth(2, 1, "logistic", 1.0)
ts = [1.0, 5.0]
mf = mf_evolve(GridDensity.from_cdf(stats.norm.cdf, -40.0, 88.0, 8192), w,
               ExponentialUnit(), 5.0, ts)
runs = []
for n in (100, 1000, 10000):
    for r in range(5):
        cfg = SimulationConfig(w, ExponentialUnit(), n, InitialCondition.iid("gaussian"),
                               seed=3, replica=r)
        runs.append((cfg, simulate(cfg, 5.0, ts)))
table = fluid_limit_report(runs, mf, w, ExponentialUnit())
for t in ts:
    line = "  ".join(f"n={n}: {table.means[(n, t)]:.4f}" for n in (100, 1000, 10000))
    print(f"t={t:g}  mean d1  {line}  fitted slope {table.slopes[t]:.2f}")
print(f"mean-field speed at t=5: {mf.speed[-1]:.4f}")
