import math

import numpy as np
import pytest

from kspread import (
    ModelSpec,
    OffspringLaw,
    classify_survival,
    extinction_probability,
    grow_tree,
    mean_matrix,
    predictions,
    realize_instance,
    run_coupled,
    run_epidemic,
    solve_theta,
    validate_spec,
)
from kspread.errors import ThetaUnavailable
from conftest import SIGMA_J2_SEED2, SIGMA_POIS2, THETA_MEAN2
from oracles import bisect_extinction


class TestGrowTree:
    def test_immediate_extinction(self):
        spec = validate_spec(
            ModelSpec(gamma=(1.0,), beta=(1.0,), offspring=(OffspringLaw.point_mass(0),), i0=0)
        )
        run = grow_tree(spec, 100, np.random.default_rng(0))
        assert run.extinct and not run.truncated
        assert run.total_population == 1
        assert run.generation_sizes[-1].tolist() == [0]

    def test_deterministic_binary_tree_truncates(self, spec_h1):
        run = grow_tree(spec_h1, 1000, np.random.default_rng(0))
        assert run.truncated and not run.extinct
        assert run.total_population >= 1000

    def test_extinction_frequency_matches_fixed_point(self, spec_pois2):
        # Fixed-point oracle: q = e^{2(q-1)}. The population cap only has to
        # exceed the scale at which extinct trees ever get (a subcritical
        # tail), so a cap of 1000 shifts the estimand by far less than the
        # tolerance while keeping 1e5 runs affordable.
        rng = np.random.default_rng(314)
        reps = 100_000
        extinct = sum(grow_tree(spec_pois2, 1000, rng).extinct for _ in range(reps))
        assert abs(extinct / reps - SIGMA_POIS2) < 0.005

    def test_generation_mean_property(self, spec_j2):
        # E[Z_{t+1} | Z_t] = Z_t M, checked one generation out from the seed
        m = mean_matrix(spec_j2).values
        rng = np.random.default_rng(77)
        reps = 40_000
        firsts = np.empty((reps, 2))
        for r in range(reps):
            run = grow_tree(spec_j2, 10, rng)
            firsts[r] = run.generation_sizes[1] if len(run.generation_sizes) > 1 else (0, 0)
        expected = m[spec_j2.i0]
        for j in range(2):
            se = firsts[:, j].std(ddof=1) / math.sqrt(reps)
            assert abs(firsts[:, j].mean() - expected[j]) < 4 * se

    def test_json_dict(self, spec_h1):
        run = grow_tree(spec_h1, 50, np.random.default_rng(1))
        doc = run.to_json_dict()
        assert set(doc) == {"generations", "total", "extinct", "truncated"}
        assert doc["total"] == run.total_population


class TestExtinctionProbability:
    def test_critical_dies_out(self, spec_critical):
        sigma, x = extinction_probability(spec_critical)
        assert sigma == 1.0 and x == 1.0

    def test_binary_tree_never_dies(self, spec_h1):
        sigma, _ = extinction_probability(spec_h1)
        assert sigma == 0.0

    def test_poisson2_fixed_point(self, spec_pois2):
        sigma, x = extinction_probability(spec_pois2)
        assert sigma == pytest.approx(SIGMA_POIS2, abs=1e-9)
        oracle_sigma, oracle_x = bisect_extinction(
            spec_pois2.alpha, [law.pgf for law in spec_pois2.offspring],
            spec_pois2.offspring[spec_pois2.i0].pgf,
        )
        assert sigma == pytest.approx(oracle_sigma, abs=1e-9)
        assert x == pytest.approx(oracle_x, abs=1e-9)

    def test_two_type_seed_matters(self, spec_j2):
        sigma, x = extinction_probability(spec_j2)
        assert sigma == pytest.approx(SIGMA_J2_SEED2, abs=1e-9)
        # the type-2 seed has point-mass-3 offspring, so extinction needs all
        # three subtrees dead: sigma = x^3
        assert sigma == pytest.approx(x**3, abs=1e-12)
        oracle_sigma, _ = bisect_extinction(
            spec_j2.alpha, [law.pgf for law in spec_j2.offspring],
            spec_j2.offspring[spec_j2.i0].pgf,
        )
        assert sigma == pytest.approx(oracle_sigma, abs=1e-8)

    def test_monotone_bracket(self, spec_pois2):
        # iterates from 0 are nondecreasing and stay in [0, x*]
        alpha = spec_pois2.alpha
        x = 0.0
        _, x_star = extinction_probability(spec_pois2)
        for _ in range(50):
            nxt = float(sum(a * law.pgf(x) for a, law in zip(alpha, spec_pois2.offspring)))
            assert nxt >= x - 1e-15
            assert nxt <= x_star + 1e-9
            x = nxt


class TestRunCoupled:
    def test_single_vertex_all_failures(self):
        spec = validate_spec(
            ModelSpec(gamma=(1.0,), beta=(1.0,), offspring=(OffspringLaw.point_mass(3),), i0=0)
        )
        inst = realize_instance(spec, 1)
        res = run_coupled(inst, np.random.default_rng(0))
        assert res.epidemic.tau == 3
        assert res.failures == 3
        assert res.infected_tree_size == 1

    def test_partition_invariant_pending_equals_capacity(self, spec_j2):
        # |pending(t)| must equal S_t = sum_i R^i_t - t at every step
        inst = realize_instance(spec_j2, 40)
        for seed in range(5):
            res = run_coupled(inst, np.random.default_rng(seed), record_pending=True)
            tau = res.epidemic.tau
            acq = res.epidemic.acquisition_times
            caps = res.revealed_capacities
            for t in range(tau + 1):
                revealed_total = sum(
                    int(caps[i][: np.searchsorted(acq[i], t, side="right")].sum())
                    for i in range(spec_j2.J)
                )
                assert res.pending_sizes[t] == revealed_total - t
            assert res.pending_sizes[tau] == 0
            assert res.infected_tree_size == res.epidemic.total_infected
            assert sum(res.per_type_infected) == res.infected_tree_size

    def test_matches_chain_law_small_instance(self):
        from kspread import chi_square_independence

        spec = validate_spec(
            ModelSpec(gamma=(1.0,), beta=(1.0,), offspring=(OffspringLaw.point_mass(1),), i0=0)
        )
        inst = realize_instance(spec, 2)
        reps = 30_000
        rng_a = np.random.default_rng(101)
        rng_b = np.random.default_rng(102)
        a = [run_epidemic(inst, rng_a) for _ in range(reps)]
        b = [run_coupled(inst, rng_b).epidemic for _ in range(reps)]
        cat = lambda r: (r.tau, r.total_infected)
        cats = {c: i for i, c in enumerate(sorted({cat(r) for r in a} | {cat(r) for r in b}))}
        source = np.array([0] * reps + [1] * reps)
        codes = np.array([cats[cat(r)] for r in a] + [cats[cat(r)] for r in b])
        _, p = chi_square_independence(source, codes)
        assert p > 0.001

    def test_capacity_pad_and_extension(self, spec_j2):
        inst = realize_instance(spec_j2, 30)
        res = run_coupled(
            inst, np.random.default_rng(3), capacity_pad=5, extend_acquisitions_to=2
        )
        for i in range(spec_j2.J):
            assert len(res.revealed_capacities[i]) >= 5
            assert len(res.epidemic.acquisition_times[i]) >= 2


class TestClassifySurvival:
    def test_macroscopic_duration(self, spec_h1):
        preds = predictions(spec_h1)
        theta = preds.theta
        from kspread import EpidemicResult

        res = EpidemicResult(
            n=10_000, tau=int(theta * 10_000), tau_tilde=0.0, final_counts=(5,),
            total_infected=5, full_transmission=False,
        )
        assert classify_survival(res, preds, kappa=0.5)
        tiny = EpidemicResult(
            n=10_000, tau=3, tau_tilde=0.0, final_counts=(3,),
            total_infected=3, full_transmission=False,
        )
        assert not classify_survival(tiny, preds, kappa=0.5)

    def test_kappa_domain(self, spec_h1):
        preds = predictions(spec_h1)
        from kspread import EpidemicResult

        res = EpidemicResult(n=10, tau=5, tau_tilde=0.0, final_counts=(5,),
                             total_infected=5, full_transmission=False)
        with pytest.raises(ValueError):
            classify_survival(res, preds, kappa=0.0)
        with pytest.raises(ValueError):
            classify_survival(res, preds, kappa=1.0)

    def test_theta_unavailable(self):
        from kspread import EpidemicResult

        res = EpidemicResult(n=10, tau=5, tau_tilde=0.0, final_counts=(5,),
                             total_infected=5, full_transmission=False)
        with pytest.raises(ThetaUnavailable):
            classify_survival(res, object(), kappa=0.5)

    def test_extinct_fraction_tracks_sigma(self, spec_pois2):
        preds = predictions(spec_pois2)
        inst = realize_instance(spec_pois2, 2000)
        rng = np.random.default_rng(88)
        reps = 3000
        extinct = 0
        for _ in range(reps):
            res = run_epidemic(inst, rng)
            extinct += not classify_survival(res, preds)
        se = math.sqrt(SIGMA_POIS2 * (1 - SIGMA_POIS2) / reps)
        assert abs(extinct / reps - SIGMA_POIS2) < 4 * se

    def test_theta_for_classification(self, spec_pois2):
        assert solve_theta(spec_pois2) == pytest.approx(THETA_MEAN2, abs=1e-10)
