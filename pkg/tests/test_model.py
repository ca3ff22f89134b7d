import numpy as np
import pytest

from rankphase import (
    InputError,
    InteractionMatrix,
    ModelSpec,
    NoiseSpec,
    RankSpace,
    RankVector,
    beta_for_snr,
    build_mean_matrix,
    default_sum_budget,
    default_sumsq_budget,
    estimate_beta_squared,
    identity_rank,
    loss,
    position_mean_table,
    signal_gap,
    signal_gap_closed_form,
    snr,
    space_contains,
)
from rankphase.simulate import random_feasible_rank


class TestRankVector:
    def test_ties_allowed(self):
        r = RankVector(np.array([2, 2, 3]))
        assert r.n == 3
        assert list(r.entries) == [2, 2, 3]

    def test_out_of_range_rejected(self):
        with pytest.raises(InputError):
            RankVector(np.array([0, 1, 2]))
        with pytest.raises(InputError):
            RankVector(np.array([1, 2, 4]))

    def test_non_integer_rejected(self):
        with pytest.raises(InputError):
            RankVector(np.array([1.5, 2.0, 3.0]))

    def test_identity(self):
        assert list(identity_rank(4)) == [1, 2, 3, 4]


class TestRankSpace:
    def test_default_budgets_exact(self):
        assert default_sum_budget(16) == 2
        assert default_sum_budget(81) == 3
        assert default_sum_budget(100) == 4
        assert default_sumsq_budget(4) == 8
        assert default_sumsq_budget(100) == 1000

    def test_invariants(self):
        with pytest.raises(InputError):
            RankSpace(n=5, c_n=0)
        with pytest.raises(InputError):
            RankSpace(n=3, c_n=1, c_n_sq=27)
        RankSpace(n=3, c_n=1, c_n_sq=26)

    def test_contains_examples(self):
        assert space_contains(RankSpace(4, 1), [1, 2, 3, 4])
        assert space_contains(RankSpace(4, 1), [1, 2, 3, 3])
        assert not space_contains(RankSpace(4, 1), [1, 1, 1, 1])

    def test_restricted_subset_of_base(self):
        restricted = RankSpace.default_restricted(12)
        base = RankSpace.default(12)
        for seed in range(50):
            r = random_feasible_rank(restricted, seed)
            assert space_contains(base, r)


class TestMeanMatrix:
    def test_differential_example(self):
        m = ModelSpec.differential([1.0, 2.0, 3.0])
        mu = build_mean_matrix(m, [1, 2, 3])
        assert mu[0, 1] == -1.0
        assert mu[1, 0] == 1.0

    def test_additive_example(self):
        m = ModelSpec.additive([1.0, 2.0, 3.0])
        mu = build_mean_matrix(m, [1, 2, 3])
        assert mu[0, 1] == 3.0 == mu[1, 0]

    def test_poisson_example(self):
        m = ModelSpec.poisson_sqrt_linear(3, alpha=10.0, beta_tilde=1.0)
        mu = build_mean_matrix(m, [1, 2, 3])
        assert mu[0, 1] == 529.0

    def test_diagonal_masked(self):
        m = ModelSpec.differential([1.0, 2.0, 3.0])
        mu = build_mean_matrix(m, [1, 2, 3])
        assert np.all(np.isnan(np.diag(mu)))

    def test_dimension_mismatch(self):
        m = ModelSpec.differential([1.0, 2.0, 3.0])
        with pytest.raises(InputError):
            build_mean_matrix(m, [1, 2])

    def test_permutation_equivariance(self, rng):
        theta = rng.normal(0, 2, 7)
        m = ModelSpec.additive(theta)
        r = np.array([2, 2, 5, 1, 7, 3, 4])
        mu = build_mean_matrix(m, r)
        perm = rng.permutation(7)
        mu_relabelled = build_mean_matrix(m, r[perm])
        expected = mu[np.ix_(perm, perm)]
        off = ~np.eye(7, dtype=bool)
        np.testing.assert_array_equal(mu_relabelled[off], expected[off])

    def test_position_table_has_tie_means(self):
        m = ModelSpec.additive([1.0, 2.0, 3.0])
        table = position_mean_table(m)
        assert table[1, 1] == 4.0  # two objects sharing position 2

    def test_poisson_positivity_enforced(self):
        with pytest.raises(InputError):
            ModelSpec.poisson_sqrt_linear(5, alpha=-3.0, beta_tilde=1.0)


class TestLoss:
    def test_zero_on_equal(self):
        for q in (0.0, 0.5, 1.0, 2.0):
            assert loss(q, [1, 3, 2], [1, 3, 2]) == 0.0

    def test_single_unit_deviation(self):
        assert loss(0, [1, 2, 3, 4], [2, 2, 3, 4]) == 0.25
        assert loss(1, [1, 2, 3, 4], [2, 2, 3, 4]) == 0.25
        assert loss(2, [1, 2, 3, 4], [2, 2, 3, 4]) == 0.25

    def test_constant_shift(self):
        assert loss(2, [1, 1, 1], [3, 3, 3]) == 4.0
        assert loss(1, [1, 1, 1], [3, 3, 3]) == 2.0
        assert loss(0, [1, 1, 1], [3, 3, 3]) == 1.0

    def test_q_validation(self):
        with pytest.raises(InputError):
            loss(2.5, [1], [1])
        with pytest.raises(InputError):
            loss(-0.1, [1], [1])

    def test_ranges_and_nesting(self, rng):
        n = 9
        for _ in range(100):
            a = rng.integers(1, n + 1, n)
            b = rng.integers(1, n + 1, n)
            l0, l1, l2 = loss(0, a, b), loss(1, a, b), loss(2, a, b)
            assert 0.0 <= l0 <= 1.0
            assert l1 <= (n - 1) ** 1 and l2 <= (n - 1) ** 2
            assert l0 <= l1 <= l2


class TestSignalGap:
    def test_spec_example(self):
        m = ModelSpec.parametric("differential", 3, alpha=0.0, beta_tilde=1.0)
        assert signal_gap(m, [1, 2, 3], [2, 2, 3]) == pytest.approx(4.0)
        assert signal_gap_closed_form(m, [1, 2, 3], [2, 2, 3]) == pytest.approx(4.0)

    def test_closed_form_examples(self):
        m5 = ModelSpec.parametric("differential", 5, alpha=0.0, beta_tilde=2.0)
        assert signal_gap_closed_form(m5, [1, 2, 3, 4, 5], [2, 2, 3, 4, 4]) == pytest.approx(80.0)
        mp = ModelSpec.poisson_sqrt_linear(4, alpha=20.0, beta_tilde=1.0)
        assert signal_gap_closed_form(mp, [1, 2, 3, 4], [2, 2, 3, 4]) == pytest.approx(6.0)

    def test_zero_iff_same_mean_matrix(self):
        m = ModelSpec.differential([1.0, 1.0, 2.0])
        # distinct ranks, identical ability assignment -> identical means
        assert signal_gap(m, [1, 2, 3], [2, 1, 3]) == 0.0
        assert signal_gap(m, [1, 2, 3], [3, 2, 3]) > 0.0

    def test_symmetry(self, rng):
        theta = rng.normal(0, 1, 6)
        m = ModelSpec.additive(theta)
        a = rng.integers(1, 7, 6)
        b = rng.integers(1, 7, 6)
        assert signal_gap(m, a, b) == signal_gap(m, b, a)

    def test_identity_matches_direct(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 12))
            beta = float(rng.uniform(0.1, 3.0))
            md = ModelSpec.parametric("differential", n, alpha=1.0, beta_tilde=beta)
            mp = ModelSpec.poisson_sqrt_linear(n, alpha=beta * n * n, beta_tilde=beta)
            a = rng.integers(1, n + 1, n)
            b = rng.integers(1, n + 1, n)
            for m in (md, mp):
                direct = signal_gap(m, a, b)
                closed = signal_gap_closed_form(m, a, b)
                assert abs(direct - closed) <= 1e-9 * (1.0 + direct)

    def test_unsupported_kinds(self):
        ma = ModelSpec.parametric("additive", 4, alpha=0.0, beta_tilde=1.0)
        with pytest.raises(InputError):
            signal_gap_closed_form(ma, [1, 2, 3, 4], [1, 2, 3, 4])
        md = ModelSpec.differential([1.0, 4.0, 9.0])
        with pytest.raises(InputError):
            signal_gap_closed_form(md, [1, 2, 3], [1, 2, 3])


class TestSnr:
    def test_examples(self):
        assert snr(100, 0.2, 1.0) == pytest.approx(1.0)
        assert snr(100, 0.0, 1.0) == 0.0
        assert beta_for_snr(100, 1.0, 1.0) == pytest.approx(0.2)

    def test_roundtrip(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 1000))
            beta = float(rng.uniform(1e-4, 5.0))
            sigma = float(rng.uniform(1e-3, 4.0))
            back = beta_for_snr(n, snr(n, beta, sigma), sigma)
            assert abs(back - beta) <= 1e-12 * beta

    def test_validation(self):
        with pytest.raises(InputError):
            snr(100, 1.0, 0.0)
        with pytest.raises(InputError):
            beta_for_snr(1, 1.0, 1.0)


class TestInteractionMatrix:
    def test_diagonal_masked(self):
        X = InteractionMatrix(np.arange(9.0).reshape(3, 3))
        assert np.all(np.isnan(np.diag(X.values)))
        assert X.values[0, 1] == 1.0

    def test_offdiag_must_be_finite(self):
        bad = np.ones((3, 3))
        bad[0, 1] = np.inf
        with pytest.raises(InputError):
            InteractionMatrix(bad)

    def test_square_required(self):
        with pytest.raises(InputError):
            InteractionMatrix(np.ones((2, 3)))

    def test_values_read_only(self):
        X = InteractionMatrix(np.ones((3, 3)))
        with pytest.raises(ValueError):
            X.values[0, 1] = 5.0


class TestNoiseSpec:
    def test_validation(self):
        NoiseSpec(family="gaussian", sigma=1.0)
        NoiseSpec(family="poisson")
        with pytest.raises(InputError):
            NoiseSpec(family="gaussian", sigma=0.0)
        with pytest.raises(InputError):
            NoiseSpec(family="laplace")


def test_estimate_beta_squared_parametric(rng):
    n = 30
    beta = 1.7
    m = ModelSpec.parametric("differential", n, alpha=0.0, beta_tilde=beta)
    space = RankSpace.default(n)
    pairs = [
        (random_feasible_rank(space, 2 * i).entries, random_feasible_rank(space, 2 * i + 1).entries)
        for i in range(200)
    ]
    est = estimate_beta_squared(m, pairs)
    c = space.c_n
    assert est <= beta**2 * (1.0 + 1e-12)
    assert est >= beta**2 * (1.0 - 4.0 * c * c / n) - 1e-9
