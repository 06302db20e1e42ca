import math
from itertools import product
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbmbench.engine import SbmParams
from sbmbench.harness import (
    DEFAULT_EPSILONS,
    MissingGroundEnergy,
    RunRecord,
    benchmark_instance,
    evaluate_grid,
    grid_search,
    median_with_bootstrap,
    scaled_steps_grid,
    success_probability,
    summarize_runs,
    tt_epsilon,
)
from sbmbench.instances import generate_sidon_instance, king_graph
from sbmbench.ising import IsingModel
from sbmbench.oracle import brute_force_ground_state


def stub_solver(energy_fn, t_total=1.0, t_compute=0.5):
    """Fake solver: energy chosen from the run seed and params, fixed clocks."""
    def solver(model, params):
        return SimpleNamespace(best_energy=energy_fn(model, params),
                               t_total=t_total, t_compute=t_compute)
    return solver


def record(energy, t_total=1.0, t_compute=0.5, k=0):
    return RunRecord("x", 10, 4, k, k, energy, t_total, t_compute)


class TestSuccessProbability:
    def test_all_at_ground(self):
        assert success_probability([-5.0] * 100, -5.0, 0.0) == 1.0

    def test_threshold_arithmetic(self):
        assert success_probability([-100, -99.5, -98], -100, 0.01) == pytest.approx(2 / 3)

    def test_accepts_records(self):
        recs = [record(e, k=i) for i, e in enumerate([-100, -99.5, -98])]
        assert success_probability(recs, -100, 0.01) == pytest.approx(2 / 3)

    def test_empty(self):
        with pytest.raises(ValueError):
            success_probability([], -1.0, 0.01)

    @given(energies=st.lists(st.floats(-200, 0), min_size=1, max_size=50),
           e0=st.floats(-200, -1), e1=st.floats(0, 0.1), e2=st.floats(0, 0.1))
    def test_nondecreasing_in_eps(self, energies, e0, e1, e2):
        lo, hi = sorted((e1, e2))
        assert success_probability(energies, e0, lo) <= success_probability(energies, e0, hi)

    @given(energies=st.lists(st.floats(-10, 0), min_size=1, max_size=40), eps=st.floats(0, 0.2))
    def test_recount(self, energies, eps):
        e0 = min(energies)
        thr = e0 + eps * abs(e0) + 1e-12 * max(1.0, abs(e0))  # documented ulp slack
        expected = sum(e <= thr for e in energies) / len(energies)
        assert success_probability(energies, e0, eps) == pytest.approx(expected)


class TestTTEpsilon:
    def test_target_probability_is_one_run(self):
        assert tt_epsilon(3.7, 0.99) == 3.7

    def test_half(self):
        assert tt_epsilon(1.0, 0.5) == pytest.approx(math.log(0.01) / math.log(0.5), rel=1e-12)
        assert tt_epsilon(1.0, 0.5) == pytest.approx(6.6439, abs=1e-4)

    def test_limits(self):
        assert tt_epsilon(2.0, 0.0) == math.inf
        assert tt_epsilon(2.0, 1.0) == 2.0
        assert tt_epsilon(2.0, 0.999) == 2.0

    @pytest.mark.parametrize("t_f", [0.0, -1.0])
    def test_bad_time(self, t_f):
        with pytest.raises(ValueError):
            tt_epsilon(t_f, 0.5)

    @given(t_f=st.floats(1e-6, 1e6), p1=st.floats(1e-6, 1.0), p2=st.floats(1e-6, 1.0))
    def test_nonincreasing_in_p(self, t_f, p1, p2):
        lo, hi = sorted((p1, p2))
        assert tt_epsilon(t_f, hi) <= tt_epsilon(t_f, lo)

    @given(t_f=st.floats(1e-6, 1e3), k=st.floats(0.1, 100), p=st.floats(1e-3, 0.98))
    def test_linear_in_time(self, t_f, k, p):
        assert tt_epsilon(k * t_f, p) == pytest.approx(k * tt_epsilon(t_f, p), rel=1e-12)


class TestBenchmarkInstance:
    def test_single_successful_run(self):
        m = IsingModel.from_couplings(2, {(0, 1): 1.0}, ground_energy=-1.0)
        recs = benchmark_instance(m, SbmParams(n_steps=2), 1, [0.01],
                                  solver=stub_solver(lambda m, p: -1.0, 0.25, 0.1))
        assert recs[0].p_success == 1.0 and recs[0].tte_total == 0.25
        assert recs[0].tte_compute == 0.1

    def test_stub_at_ground_energy(self):
        m = IsingModel.from_couplings(2, {(0, 1): 1.0})
        recs = benchmark_instance(m, SbmParams(), 5, DEFAULT_EPSILONS, ground_energy=-1.0,
                                  solver=stub_solver(lambda m, p: -1.0))
        assert [r.p_success for r in recs] == [1.0] * 4
        assert all(r.tte_compute <= r.tte_total for r in recs)

    def test_missing_ground_energy(self):
        m = IsingModel.from_couplings(2, {(0, 1): 1.0})
        with pytest.raises(MissingGroundEnergy, match="oracle"):
            benchmark_instance(m, SbmParams(), 1, [0.01], solver=stub_solver(lambda m, p: -1.0))

    def test_run_seeds_distinct(self):
        seen = []
        def energy_fn(m, p):
            seen.append(p.seed)
            return 0.0
        benchmark_instance(IsingModel(2), SbmParams(), 20, [0.0], ground_energy=0.0,
                           solver=stub_solver(energy_fn))
        assert len(set(seen)) == 20

    def test_hit_rate_matches_oracle_recount(self):
        m = generate_sidon_instance(king_graph(4), seed=12)
        e0, _ = brute_force_ground_state(m)
        energies = []
        from sbmbench.engine import solve

        def recording(model, params):
            out = solve(model, params)
            energies.append(out.best_energy)
            return out
        params = SbmParams(n_steps=10, n_replicas=1)
        recs = benchmark_instance(m, params, 40, [0.0, 0.05], ground_energy=e0, solver=recording)
        hits = sum(abs(e - e0) <= 1e-9 for e in energies) / 40
        assert recs[0].p_success == hits
        assert 0 < hits < 1  # the regime is informative
        assert recs[1].p_success >= recs[0].p_success


class TestSummaries:
    def test_times_are_means(self):
        runs = [record(-1.0, 1.0, 0.5, 0), record(-1.0, 3.0, 1.5, 1)]
        rec = summarize_runs(runs, -1.0, [0.0])[0]
        assert rec.t_f_total == 2.0 and rec.t_f_compute == 1.0

    def test_compute_cannot_exceed_total(self):
        with pytest.raises(ValueError):
            record(-1.0, 1.0, 2.0)


class TestMedian:
    def test_odd(self):
        assert median_with_bootstrap([1, 2, 3], 10)[0] == 2

    def test_even_midpoint(self):
        assert median_with_bootstrap([4, 1, 3, 2], 10)[0] == 2.5

    def test_extended_reals(self):
        assert median_with_bootstrap([1, math.inf, math.inf], 10)[0] == math.inf
        assert median_with_bootstrap([1, 2, math.inf], 10)[0] == 2
        assert median_with_bootstrap([1, 2, 3, math.inf], 10)[0] == 2.5
        assert median_with_bootstrap([1, 2, math.inf, math.inf], 10)[0] == math.inf

    @pytest.mark.parametrize("B", [1, 7, 1000])
    def test_constant_has_zero_std(self, B):
        assert median_with_bootstrap([4.2] * 9, B) == (4.2, 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            median_with_bootstrap([], 10)

    def test_deterministic_given_seed(self):
        vals = np.random.default_rng(0).lognormal(size=31)
        assert median_with_bootstrap(vals, 200, 3) == median_with_bootstrap(vals, 200, 3)
        assert median_with_bootstrap(vals, 200, 3)[1] != median_with_bootstrap(vals, 200, 4)[1]

    def test_std_is_plausible(self):
        # std of the median of n normals is about 1.2533 / sqrt(n)
        vals = np.random.default_rng(1).normal(size=400)
        _, std = median_with_bootstrap(vals, 2000, 0)
        assert 0.6 * 1.2533 / 20 < std < 1.6 * 1.2533 / 20

    @settings(deadline=None)
    @given(vals=st.lists(st.one_of(st.floats(0.001, 1e3), st.just(math.inf)), min_size=1, max_size=25),
           seed=st.integers(0, 100))
    def test_permutation_invariant(self, vals, seed):
        perm = list(np.random.default_rng(seed).permutation(vals))
        assert median_with_bootstrap(vals, 50, seed) == median_with_bootstrap(perm, 50, seed)


def monotone_solver(model, params):
    # success probability grows with n_steps at a fixed cost per run
    p = min(1.0, params.n_steps / 400)
    u = (params.seed % 10007) / 10007
    return SimpleNamespace(best_energy=-1.0 if u < p else 0.0, t_total=1.0, t_compute=0.5)


class TestGridSearch:
    @pytest.fixture
    def instances(self):
        return [IsingModel.from_couplings(2, {(0, 1): 1.0}, name=f"i{k}") for k in range(5)]

    def test_one_cell(self, instances):
        pt = grid_search(instances, [50], [4], 10, 0.0, solver=monotone_solver,
                         ground_energies=[-1.0] * 5)
        assert (pt.n_steps, pt.n_replicas) == (50, 4)

    def test_monotone_stub_picks_largest_steps(self, instances):
        pt = grid_search(instances, [50, 100, 200, 400], [4], 30, 0.0, solver=monotone_solver,
                         ground_energies=[-1.0] * 5)
        assert pt.n_steps == 400 and pt.median == 1.0

    def test_ties_prefer_small_cells(self, instances):
        pt = grid_search(instances, [8, 4], [16, 2], 3, 0.0,
                         solver=stub_solver(lambda m, p: -1.0), ground_energies=[-1.0] * 5)
        assert (pt.n_steps, pt.n_replicas) == (4, 2)

    def test_all_infinite_is_unsolved(self, instances):
        pt = grid_search(instances, [8, 16], [2], 3, 0.0,
                         solver=stub_solver(lambda m, p: 0.0), ground_energies=[-1.0] * 5)
        assert pt.unsolved and pt.median == math.inf and pt.n_finite == 0

    def test_grid_order_invariant(self, instances):
        kw = dict(solver=monotone_solver, ground_energies=[-1.0] * 5)
        a = grid_search(instances, [50, 100, 200], [2, 4], 12, 0.0, **kw)
        b = grid_search(instances, [200, 50, 100], [4, 2], 12, 0.0, **kw)
        assert a == b

    def test_best_found_reference(self, instances):
        res = evaluate_grid(instances, [50, 400], [2], 5, solver=monotone_solver)
        assert res.ground_energies == [-1.0] * 5

    def test_mixed_sizes_rejected(self):
        with pytest.raises(ValueError):
            evaluate_grid([IsingModel(2), IsingModel(3)], [1], [1], 1)

    def test_matches_exhaustive_recomputation(self):
        models = [generate_sidon_instance(king_graph(4), seed=100 + k, name=f"k{k}") for k in range(10)]
        e0s = [brute_force_ground_state(m)[0] for m in models]
        steps, reps = [20, 40, 80], [1, 2, 4]
        res = evaluate_grid(models, steps, reps, 8, ground_energies=e0s, master_seed=5)
        eps = 0.0
        best = res.best(eps, "total", n_resamples=50)
        # recompute every cell median by hand from the raw runs
        meds = {}
        for cell in product(steps, reps):
            ttes = []
            for runs, e0 in zip(res.runs[cell], e0s):
                p = np.mean([r.energy <= e0 + 1e-9 for r in runs])
                t = max(np.mean([r.t_total for r in runs]), np.mean([r.t_compute for r in runs]))
                if p == 0:
                    ttes.append(math.inf)
                elif p == 1:
                    ttes.append(t)
                else:
                    ttes.append(t * max(1.0, math.log(0.01) / math.log(1 - p)))
            v = sorted(ttes)
            meds[cell] = math.inf if math.isinf(v[5]) else 0.5 * (v[4] + v[5])
        target = min(meds, key=lambda c: (meds[c], c))
        assert math.isfinite(meds[target])
        assert (best.n_steps, best.n_replicas) == target
        assert best.median == pytest.approx(meds[target], rel=1e-12)


def test_scaled_steps_grid():
    assert scaled_steps_grid(100, 8.0, 0.5, (1, 2)) == [80, 160]
    assert scaled_steps_grid(4, 1.0, 0.5, (0.1,)) == [1]
