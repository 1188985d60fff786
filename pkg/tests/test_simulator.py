import math

import numpy as np
import pytest
from scipy import stats

from flockjump.model import (IDENTITY, BoundedSmooth, DeterministicUnit, Exponential,
                             ExponentialUnit, InitialCondition, Step, constant_rate)
from flockjump.simulator import (ParticleState, RateOverflowError, SimulationConfig,
                                 SimulationError, martingale_residual, run, simulate,
                                 simulate_coupled, step)


def cfg(w=Step(2, 1), law=ExponentialUnit(), n=100, seed=1, **kw):
    return SimulationConfig(w, law, n, kw.pop("initial", InitialCondition.iid("gaussian")),
                            seed=seed, **kw)


def test_determinism_bit_identical():
    c = cfg(n=200, seed=42)
    a = simulate(c, 5.0, [1, 2, 5], keep_events=True)
    b = simulate(c, 5.0, [1, 2, 5], keep_events=True)
    assert a.config_hash == b.config_hash
    for name in ("times", "m", "jumps", "abs_moment", "final_positions"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    for p, q in zip(a.positions, b.positions):
        assert np.array_equal(p, q)
    assert np.array_equal(a.events.time, b.events.time)
    other = simulate(cfg(n=200, seed=43), 5.0)
    assert not np.array_equal(other.final_positions, a.final_positions)


def test_replicas_differ_and_hash_changes():
    a, b = cfg(seed=3, replica=0), cfg(seed=3, replica=1)
    assert a.hash() != b.hash()
    ra, rb = simulate(a, 1.0), simulate(b, 1.0)
    assert not np.array_equal(ra.initial_positions, rb.initial_positions)


@pytest.mark.parametrize("method", ["direct", "thinning"])
def test_forward_motion_and_snapshot_means(method):
    rec = simulate(cfg(BoundedSmooth(2, 1, "logistic", 1.0), method=method, n=300),
                   4.0, np.linspace(0.5, 4, 8), keep_events=True)
    assert np.all(rec.events.jump >= 0)
    assert np.all(np.diff(rec.events.time) >= 0)
    for k, p in enumerate(rec.positions):
        assert abs(rec.m[k] - p.mean()) < 1e-9
    assert np.all(rec.final_positions >= rec.initial_positions)
    assert np.all(np.diff(rec.jumps) >= 0)


def test_bookkeeping_identity():
    rec = simulate(cfg(n=50, seed=9), 20.0, keep_events=True)
    total = math.fsum(rec.events.jump)
    assert abs(rec.m[-1] - (rec.initial_positions.mean() + total / 50)) < 1e-9
    assert rec.jumps[-1] == len(rec.events)


@pytest.mark.slow
def test_bookkeeping_after_1e7_events():
    c = cfg(Exponential(1.0), n=1000, seed=5, method="exponential")
    rec = simulate(c, 7000.0, keep_events=True)
    assert rec.jumps[-1] >= 10**7
    total = math.fsum(rec.events.jump)
    x0 = rec.initial_positions
    assert abs(rec.m[-1] - (math.fsum(x0) + total) / x0.size) < 1e-9
    assert abs(rec.m[-1] - math.fsum(rec.final_positions) / x0.size) < 1e-9


def test_single_particle_poisson():
    # n = 1: x = m, so jumps come at the constant rate w(0)
    counts = []
    for r in range(400):
        c = SimulationConfig(Step(3, 1), DeterministicUnit(), 1,
                             InitialCondition.point_mass(0.0), seed=7, replica=r)
        counts.append(simulate(c, 5.0).final_positions[0])
    counts = np.array(counts)
    lam = 1.0 * 5.0  # Step(3,1)(0) = b = 1
    assert abs(counts.mean() - lam) < 4 * math.sqrt(lam / counts.size)
    assert np.all(counts == np.round(counts))
    rec = simulate(SimulationConfig(Step(3, 1), DeterministicUnit(), 1,
                                    InitialCondition.point_mass(0.0), seed=8), 2e4,
                   keep_events=True)
    gaps = np.diff(np.concatenate([[0.0], rec.events.time]))
    assert stats.kstest(gaps, "expon").pvalue > 1e-3


def test_compensated_poisson_martingale():
    vals = []
    for r in range(1000):
        c = SimulationConfig(constant_rate(1.0), DeterministicUnit(), 1,
                             InitialCondition.point_mass(0.0), seed=21, replica=r)
        rec = simulate(c, 3.0, keep_events=True)
        A = martingale_residual(rec, IDENTITY, constant_rate(1.0), DeterministicUnit())
        expected = rec.final_positions[0] - 3.0
        assert abs(A.final - expected) < 1e-12
        vals.append(A.final)
    vals = np.array(vals)
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_residual_constant_is_zero_and_non_h_rejected():
    w, law = Step(2, 1), ExponentialUnit()
    rec = simulate(cfg(w, law, n=30), 3.0, keep_events=True)
    A = martingale_residual(rec, lambda x: np.ones_like(x), w, law)
    assert A.sup == 0.0
    with pytest.raises(SimulationError):
        martingale_residual(rec, lambda x: x**2, w, law)
    with pytest.raises(SimulationError):
        martingale_residual(simulate(cfg(w, law, n=30), 3.0), np.tanh, w, law)


def test_residual_matches_python_oracle():
    # independent rectangle-sum evaluation for f = tanh
    w, law = Step(2, 1), DeterministicUnit()
    rec = simulate(cfg(w, law, n=8, seed=4), 2.0, keep_events=True)
    A = martingale_residual(rec, np.tanh, w, law)
    x = rec.initial_positions.copy()
    t_prev, integ = 0.0, 0.0
    f0 = np.tanh(x).mean()
    for t, i, z in zip(rec.events.time, rec.events.index, rec.events.jump):
        g = (np.tanh(x + 1) - np.tanh(x)) * w(x - x.mean())
        integ += (t - t_prev) * g.mean()
        x[i] += z
        t_prev = t
    g = (np.tanh(x + 1) - np.tanh(x)) * w(x - x.mean())
    integ += (2.0 - t_prev) * g.mean()
    assert abs(A.final - (np.tanh(x).mean() - f0 - integ)) < 1e-12


def test_method_agreement_bounded():
    # direct and thinning sample the same law: compare m(T) over replicas
    w = BoundedSmooth(2, 1, "logistic", 1.0)
    res = {}
    for method in ("direct", "thinning"):
        res[method] = np.array([simulate(cfg(w, n=20, seed=31, replica=r, method=method),
                                         2.0).m[-1] for r in range(400)])
    assert stats.ks_2samp(res["direct"], res["thinning"]).pvalue > 1e-3


def test_method_agreement_exponential():
    w = Exponential(1.0)
    res = {}
    for method in ("direct", "exponential"):
        res[method] = np.array([simulate(cfg(w, n=64, seed=32, replica=r, method=method),
                                         2.0).m[-1] for r in range(400)])
    assert stats.ks_2samp(res["direct"], res["exponential"]).pvalue > 1e-3


def test_resolved_methods():
    assert cfg(Exponential(1.0), n=100).resolved_method() == "exponential"
    assert cfg(Exponential(1.0), n=10).resolved_method() == "direct"
    assert cfg(Step(2, 1)).resolved_method() == "thinning"
    with pytest.raises(SimulationError):
        simulate(cfg(Exponential(1.0), method="thinning"), 1.0)
    with pytest.raises(SimulationError):
        cfg(method="bogus").resolved_method()


def test_coupling_domination():
    w = BoundedSmooth(3, 1, "logistic", 1.0)
    x0 = np.random.default_rng(0).normal(size=40)
    cr = simulate_coupled(w, ExponentialUnit(), x0, 5.0, np.linspace(0, 5, 51), seed=3)
    assert cr.domination_holds()
    # event-by-event: rejected proposals only widen the gap
    p = cr.proposals
    assert np.all((p[:, 3] == 0) | (p[:, 3] == 1))
    assert 0 < p[:, 3].mean() < 1
    # the log reproduces the snapshots
    last = p[p[:, 0] <= 5.0]
    moved = np.bincount(last[:, 1].astype(int), last[:, 2] * last[:, 3], minlength=40)
    assert np.allclose(cr.x[-1] - x0, moved, atol=1e-12)
    total = np.bincount(last[:, 1].astype(int), last[:, 2], minlength=40)
    assert np.allclose(cr.xd[-1] - x0, total, atol=1e-12)
    # a tampered log (a process jump larger than the proposal) is caught
    bad = cr.proposals.copy()
    bad[:, 3] = 1.5
    tampered = type(cr)(cr.times, cr.x, cr.xd, bad, cr.initial_positions)
    assert not tampered.domination_holds()
    with pytest.raises(SimulationError):
        simulate_coupled(Exponential(1.0), ExponentialUnit(), x0, 1.0)


def test_exchangeability():
    w, law = Step(2, 1), ExponentialUnit()
    x0 = np.random.default_rng(1).normal(size=12)
    perm = np.random.default_rng(2).permutation(12)
    a = simulate_coupled(w, law, x0, 4.0, [1, 2, 4], seed=5)
    b = simulate_coupled(w, law, x0[perm], 4.0, [1, 2, 4], seed=5, stream_order=perm)
    assert np.array_equal(a.x[:, perm], b.x)
    assert np.array_equal(a.xd[:, perm], b.xd)


def test_overflow_diagnostic():
    c = cfg(Exponential(1.0), n=2, method="direct",
            initial=InitialCondition.explicit([-2000.0, 0.0]))
    with pytest.raises(RateOverflowError) as e:
        simulate(c, 1.0)
    assert e.value.min_gap == pytest.approx(-1000.0)


def test_truncation_flag():
    rec = simulate(cfg(n=50, max_events=1000), 100.0, [10, 50, 100])
    assert rec.truncated
    assert rec.jumps[-1] == 1000
    assert rec.times[-1] < 100.0


def test_histogram_mode_large_n():
    rec = simulate(cfg(n=20000, seed=2), 0.5, [0.25, 0.5])
    assert rec.positions is None and len(rec.histograms) == 3
    for k, (edges, counts) in enumerate(rec.histograms):
        assert counts.sum() == 20000
        assert np.allclose(np.diff(edges), 0.05)
    assert abs(rec.m[-1] - rec.final_positions.mean()) < 1e-9
    assert abs(rec.abs_moment[-1] - np.abs(rec.final_positions).mean()) < 1e-12
    q = rec.quantiles((0.5,))
    assert abs(q[-1, 0] - np.median(rec.final_positions)) < 0.05


def test_schedule_zero_is_initial():
    rec = run(cfg(n=30, seed=6), 1.0, [0.0])
    assert rec.times[0] == 0.0
    assert np.array_equal(rec.positions[0], np.sort(rec.initial_positions))
    assert rec.jumps[0] == 0
    with pytest.raises(SimulationError):
        simulate(cfg(), 0.0)
    with pytest.raises(SimulationError):
        simulate(cfg(), 1.0, [2.0])


def test_speed_between_bounds():
    rec = simulate(cfg(Step(2, 1), ExponentialUnit(), n=1000, seed=10), 10.0)
    v = (rec.m[-1] - rec.m[0]) / 10.0
    assert 1.0 <= v <= 2.0


def test_python_step():
    rng = np.random.default_rng(0)
    s = ParticleState([0.0, 1.0, 3.0])
    w, law = Step(2, 1), DeterministicUnit()
    hits = np.zeros(3)
    for _ in range(3000):
        new, ev = step(s, w, law, rng)
        hits[ev.i] += 1
        assert new.positions[ev.i] == s.positions[ev.i] + 1.0
        assert abs(new.m - (s.m + 1 / 3)) < 1e-15
        assert new.t > s.t
    # rates at x - m = (-4/3, -1/3, 5/3) are (2, 2, 1)
    assert abs(hits[2] / 3000 - 0.2) < 0.03
    with pytest.raises(SimulationError):
        ParticleState([])
