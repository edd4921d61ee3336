import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kspread import (
    MeanMatrix,
    ModelSpec,
    OffspringLaw,
    mean_matrix,
    multinomial_split,
    realize_instance,
    spectral_radius,
    validate_spec,
)
from kspread.errors import (
    EmptySupport,
    NonFiniteMoment,
    NormalizationError,
    PopulationTooSmall,
)
from oracles import eig_spectral_radius, multinomial_pmf

ALL_FAMILIES = [
    OffspringLaw.point_mass(2),
    OffspringLaw.poisson(2.0),
    OffspringLaw.geometric(0.4),
    OffspringLaw.binomial(6, 0.3),
    OffspringLaw.empirical([0, 1, 3, 7], [0.1, 0.4, 0.3, 0.2]),
]


class TestOffspringLaw:
    @pytest.mark.parametrize("law", ALL_FAMILIES, ids=lambda l: l.family)
    def test_pgf_at_one(self, law):
        assert law.pgf(1.0) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("law", ALL_FAMILIES, ids=lambda l: l.family)
    def test_pmf_sums_to_one(self, law):
        total = math.fsum(law.pmf(k) for k in range(200))
        assert total == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("law", ALL_FAMILIES, ids=lambda l: l.family)
    def test_pmf_moments_match_cached(self, law):
        mean = math.fsum(k * law.pmf(k) for k in range(200))
        var = math.fsum((k - mean) ** 2 * law.pmf(k) for k in range(200))
        assert mean == pytest.approx(law.mean, abs=1e-9)
        assert var == pytest.approx(law.variance, abs=1e-8)

    @pytest.mark.parametrize("law", ALL_FAMILIES, ids=lambda l: l.family)
    def test_sample_moments(self, law):
        # empirical mean/variance of 1e6 draws within 4 standard errors
        rng = np.random.default_rng(314159)
        x = law.sample(rng, 1_000_000)
        assert x.min() >= 0
        se_mean = math.sqrt(max(law.variance, 1e-12) / len(x))
        assert abs(x.mean() - law.mean) < 4 * se_mean + 1e-12
        if law.variance > 0:
            m4 = np.mean((x - law.mean) ** 4)
            se_var = math.sqrt((m4 - law.variance**2) / len(x))
            assert abs(x.var() - law.variance) < 4 * se_var

    def test_empirical_guards(self):
        with pytest.raises(EmptySupport):
            OffspringLaw.empirical([], [])
        with pytest.raises(NormalizationError):
            OffspringLaw.empirical([0, 1], [0.5, 0.6])
        with pytest.raises(NonFiniteMoment):
            OffspringLaw.empirical([-1, 1], [0.5, 0.5])

    def test_bad_parameters(self):
        with pytest.raises(NonFiniteMoment):
            OffspringLaw.poisson(float("inf"))
        with pytest.raises(NonFiniteMoment):
            OffspringLaw.geometric(0.0)
        with pytest.raises(NonFiniteMoment):
            OffspringLaw.binomial(3, 1.5)

    def test_json_round_trip(self):
        for law in ALL_FAMILIES:
            clone = OffspringLaw.from_json_dict(law.to_json_dict())
            assert clone == law


class TestValidateSpec:
    def test_single_type_point_mass(self, spec_h1):
        assert validate_spec(spec_h1) is spec_h1

    def test_two_type_valid(self):
        spec = ModelSpec(
            gamma=(0.5, 0.5),
            beta=(1.2, 0.8),
            offspring=(OffspringLaw.poisson(2.0), OffspringLaw.point_mass(3)),
            i0=0,
        )
        assert validate_spec(spec) is spec  # 0.5*1.2 + 0.5*0.8 = 1

    def test_weight_normalization_rejected(self):
        spec = ModelSpec(
            gamma=(0.5, 0.5),
            beta=(1.0, 1.5),
            offspring=(OffspringLaw.point_mass(1), OffspringLaw.point_mass(1)),
            i0=0,
        )
        with pytest.raises(NormalizationError):
            validate_spec(spec)  # sum gamma*beta = 1.25

    def test_gamma_normalization_rejected(self):
        spec = ModelSpec(
            gamma=(0.6, 0.6),
            beta=(1.0, 1.0),
            offspring=(OffspringLaw.point_mass(1), OffspringLaw.point_mass(1)),
            i0=0,
        )
        with pytest.raises(NormalizationError):
            validate_spec(spec)

    def test_json_round_trip(self, spec_j2):
        doc = spec_j2.to_json_dict()
        assert doc["i0"] == 2  # JSON uses 1-based type indices
        clone = ModelSpec.from_json_dict(json.loads(json.dumps(doc)))
        assert clone == spec_j2


class TestRealizeInstance:
    def test_single_type(self, spec_h1):
        inst = realize_instance(spec_h1, 100)
        assert inst.n_i.tolist() == [100]

    def test_tie_breaks_to_lower_index(self):
        spec = validate_spec(
            ModelSpec(
                gamma=(0.5, 0.5),
                beta=(1.0, 1.0),
                offspring=(OffspringLaw.point_mass(1), OffspringLaw.point_mass(1)),
                i0=0,
            )
        )
        inst = realize_instance(spec, 101)
        assert inst.n_i.tolist() == [51, 50]

    def test_largest_remainder(self):
        spec = validate_spec(
            ModelSpec(
                gamma=(1 / 3, 2 / 3),
                beta=(1.0, 1.0),
                offspring=(OffspringLaw.point_mass(1), OffspringLaw.point_mass(1)),
                i0=0,
            )
        )
        inst = realize_instance(spec, 10)
        # floor gives (3, 6); the 0.666 remainder of type 2 wins the leftover
        assert inst.n_i.tolist() == [3, 7]

    def test_population_too_small(self):
        spec = validate_spec(
            ModelSpec(
                gamma=(0.9, 0.1),
                beta=(1.0, 1.0),
                offspring=(OffspringLaw.point_mass(1), OffspringLaw.point_mass(1)),
                i0=0,
            )
        )
        with pytest.raises(PopulationTooSmall):
            realize_instance(spec, 5)  # remainders tie; lower index wins -> (5, 0)
        with pytest.raises(PopulationTooSmall):
            realize_instance(spec, 1)

    @given(
        weights=st.lists(st.integers(1, 20), min_size=1, max_size=5),
        n=st.integers(1, 500),
    )
    @settings(max_examples=200, deadline=None)
    def test_rounding_invariants(self, weights, n):
        total = sum(weights)
        gamma = tuple(w / total for w in weights)
        if abs(sum(gamma) - 1.0) > 1e-12:
            gamma = gamma[:-1] + (1.0 - sum(gamma[:-1]),)
        beta = tuple(1.0 / g / len(gamma) for g in gamma)  # alpha_i = 1/J
        spec = validate_spec(
            ModelSpec(gamma=gamma, beta=beta,
                      offspring=tuple(OffspringLaw.point_mass(1) for _ in gamma), i0=0)
        )
        if n < len(gamma):
            with pytest.raises(PopulationTooSmall):
                realize_instance(spec, n)
            return
        try:
            inst = realize_instance(spec, n)
        except PopulationTooSmall:
            return  # legitimately unrepairable rounding
        assert int(inst.n_i.sum()) == n
        assert np.all(inst.n_i >= 1)
        assert np.all(np.abs(inst.n_i - np.asarray(gamma) * n) <= len(gamma))


class TestMultinomialSplit:
    def test_zero_attempts(self):
        rng = np.random.default_rng(0)
        assert multinomial_split(0, [0.3, 0.7], rng).tolist() == [0, 0]

    def test_degenerate_weight(self):
        rng = np.random.default_rng(0)
        assert multinomial_split(5, [1.0, 0.0, 0.0], rng).tolist() == [5, 0, 0]

    def test_component_sum_always_l(self):
        rng = np.random.default_rng(7)
        for l in (0, 1, 2, 9, 40):
            for _ in range(50):
                assert multinomial_split(l, [0.2, 0.5, 0.3], rng).sum() == l

    def test_frequencies_match_exact_pmf(self):
        # l=2, alpha=(.5,.5): exact probabilities 1/4, 1/2, 1/4
        rng = np.random.default_rng(2024)
        draws = rng.multinomial(2, [0.5, 0.5], size=1_000_000)
        for counts in ((2, 0), (1, 1), (0, 2)):
            p = multinomial_pmf(counts, (0.5, 0.5))
            freq = np.mean(np.all(draws == counts, axis=1))
            se = math.sqrt(p * (1 - p) / len(draws))
            assert abs(freq - p) < 3 * se

    @given(l=st.integers(0, 50), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_split_sum_property(self, l, seed):
        rng = np.random.default_rng(seed)
        out = multinomial_split(l, [0.1, 0.2, 0.3, 0.4], rng)
        assert out.sum() == l
        assert np.all(out >= 0)


class TestMeanMatrix:
    def test_single_type(self, spec_h1):
        assert mean_matrix(spec_h1).values.tolist() == [[2.0]]

    def test_product_formula(self):
        spec = validate_spec(
            ModelSpec(
                gamma=(0.5, 0.5),
                beta=(1.0, 1.0),
                offspring=(OffspringLaw.point_mass(1), OffspringLaw.point_mass(3)),
                i0=0,
            )
        )
        m = mean_matrix(spec).values
        assert m.tolist() == [[0.5, 0.5], [1.5, 1.5]]
        # cross-check the entries against a Monte Carlo estimate of the
        # per-type child counts
        rng = np.random.default_rng(99)
        draws1 = rng.multinomial(1, [0.5, 0.5], size=200_000)
        assert np.allclose(draws1.mean(axis=0), m[0], atol=0.005)

    def test_zero_offspring(self):
        spec = validate_spec(
            ModelSpec(gamma=(1.0,), beta=(1.0,), offspring=(OffspringLaw.point_mass(0),), i0=0)
        )
        assert mean_matrix(spec).values.tolist() == [[0.0]]


class TestSpectralRadius:
    def test_scalar(self):
        assert spectral_radius(np.array([[2.0]])) == pytest.approx(2.0, abs=1e-10)

    def test_rank_one_example(self):
        m = np.array([[0.5, 0.5], [1.5, 1.5]])
        assert spectral_radius(m) == pytest.approx(2.0, abs=1e-10)
        assert spectral_radius(m) == pytest.approx(eig_spectral_radius(m), abs=1e-8)

    def test_zero_matrix(self):
        assert spectral_radius(np.zeros((3, 3))) == 0.0

    def test_rank_one_identity_random_specs(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            J = int(rng.integers(1, 5))
            gamma = rng.dirichlet(np.ones(J))
            alpha = rng.dirichlet(np.ones(J))
            beta = alpha / gamma
            means = rng.uniform(0.0, 4.0, J)
            laws = tuple(OffspringLaw.poisson(float(m)) for m in means)
            spec = validate_spec(
                ModelSpec(gamma=tuple(gamma), beta=tuple(beta), offspring=laws, i0=0)
            )
            rho = spectral_radius(mean_matrix(spec))
            assert abs(rho - float(np.sum(alpha * means))) < 1e-8
            assert rho == pytest.approx(eig_spectral_radius(mean_matrix(spec).values), abs=1e-8)

    def test_mean_matrix_wrapper(self, spec_h1):
        assert spectral_radius(mean_matrix(spec_h1)) == pytest.approx(2.0, abs=1e-10)
