import numpy as np
import pytest

from fermat.datasets import gmm3_model
from fermat.density import (
    GaussianMixture,
    GeneralizedGaussian,
    KdeModel,
    NnDensityField,
    StudentT,
    generalized_gaussian_score,
    gmm_fit_em,
    standard_normal,
    student_t_score,
)
from fermat.numerics import Rng, finite_diff_gradient


class TestGaussianMixtureDensity:
    def test_standard_normal_at_origin(self):
        m = standard_normal(2)
        assert m.log_density(np.zeros(2)) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)

    def test_three_component_peak_lower_bound(self):
        # value at the second mean is at least that component's own term
        m = gmm3_model()
        bound = np.log(0.5 / (2 * np.pi * 3.0))
        assert m.log_density(np.array([6.5, 6.3])) >= bound

    def test_matches_direct_summation(self):
        rng = Rng(3)
        m = GaussianMixture(
            [0.2, 0.5, 0.3],
            rng.standard_normal((3, 2)),
            [np.eye(2), 2.0 * np.eye(2), [[1.0, 0.3], [0.3, 0.7]]],
        )
        x = np.array([0.4, -0.2])
        direct = 0.0
        for w, mu, cov in zip(m.weights, m.means, m.covariances):
            diff = x - mu
            direct += (
                w
                * np.exp(-0.5 * diff @ np.linalg.solve(cov, diff))
                / (2 * np.pi * np.sqrt(np.linalg.det(cov)))
            )
        assert m.log_density(x) == pytest.approx(np.log(direct), abs=1e-12)

    def test_component_permutation_invariance(self):
        w = [0.2, 0.5, 0.3]
        mus = [[0.0, 0.0], [2.0, 1.0], [-1.0, 3.0]]
        covs = [np.eye(2), 2 * np.eye(2), 0.5 * np.eye(2)]
        m1 = GaussianMixture(w, mus, covs)
        perm = [2, 0, 1]
        m2 = GaussianMixture(
            [w[i] for i in perm], [mus[i] for i in perm], [covs[i] for i in perm]
        )
        x = np.array([0.3, 0.9])
        assert m1.log_density(x) == pytest.approx(m2.log_density(x), abs=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            standard_normal(2).log_density(np.zeros(3))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            GaussianMixture([0.5, 0.6], np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_non_positive_definite_rejected(self):
        with pytest.raises(ValueError, match="component 0"):
            GaussianMixture([1.0], np.zeros((1, 2)), [[[1.0, 2.0], [2.0, 1.0]]])


class TestGaussianMixtureScore:
    def test_standard_normal_score(self):
        m = standard_normal(3)
        x = np.array([0.5, -1.0, 2.0])
        assert np.allclose(m.score(x), -x, atol=1e-14)

    def test_symmetric_pair_zero_at_midpoint(self):
        m = GaussianMixture(
            [0.5, 0.5], [[1.5, 0.0], [-1.5, 0.0]], [np.eye(2), np.eye(2)]
        )
        assert np.allclose(m.score(np.zeros(2)), 0.0, atol=1e-14)

    def test_gmm3_score_matches_finite_differences(self):
        m = gmm3_model()
        x = np.array([4.0, 4.0])
        fd = finite_diff_gradient(m.log_density, x)
        assert np.linalg.norm(fd - m.score(x)) <= 1e-5


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        m = gmm3_model()
        f = tmp_path / "model.json"
        m.save(f)
        m2 = GaussianMixture.load(f)
        assert np.array_equal(m.weights, m2.weights)
        assert np.array_equal(m.means, m2.means)
        assert np.array_equal(m.covariances, m2.covariances)

    def test_sampling_deterministic(self):
        m = gmm3_model()
        a = m.sample(100, Rng(5))
        b = m.sample(100, Rng(5))
        assert np.array_equal(a, b)


class TestEmFitting:
    def test_single_component_closed_form(self):
        rng = Rng(0)
        X = rng.standard_normal((200, 2)) * np.array([1.5, 0.5]) + np.array([3.0, -1.0])
        reg = 1e-6
        m = gmm_fit_em(X, 1, reg=reg, seed=0)
        assert np.allclose(m.means[0], X.mean(axis=0), atol=1e-12)
        expected_cov = np.cov(X.T, bias=True) + reg * np.eye(2)
        assert np.allclose(m.covariances[0], expected_cov, atol=1e-12)
        assert m.weights[0] == 1.0

    def test_two_separated_clusters(self):
        rng = Rng(1)
        centers = np.array([[5.0, 0.0], [-5.0, 0.0]])
        X = np.concatenate(
            [c + 0.3 * rng.child(i).standard_normal((1000, 2)) for i, c in enumerate(centers)]
        )
        m = gmm_fit_em(X, 2, seed=7)
        found = m.means[np.argsort(m.means[:, 0])[::-1]]
        assert np.linalg.norm(found[0] - centers[0]) < 0.1
        assert np.linalg.norm(found[1] - centers[1]) < 0.1

    def test_log_likelihood_monotone_on_circle(self):
        from fermat.datasets import DatasetSpec, sample

        X = sample(DatasetSpec(kind="circle", n=4000, seed=2))
        _, trace = gmm_fit_em(X, 50, seed=3, return_trace=True)
        diffs = np.diff(trace)
        assert np.all(diffs >= -1e-9)

    def test_needs_more_samples_than_components(self):
        with pytest.raises(ValueError, match="more samples than components"):
            gmm_fit_em(np.zeros((3, 2)), 5)


class TestGeneralizedGaussian:
    def test_alpha_two_is_gaussian(self):
        x = np.array([0.3, -1.2])
        assert np.allclose(generalized_gaussian_score(x, 2.0), -x, atol=1e-14)

    def test_alpha_four_unit_vector(self):
        assert np.allclose(
            generalized_gaussian_score(np.array([1.0, 0.0]), 4.0), [-1.0, 0.0]
        )

    def test_singular_at_origin_for_small_alpha(self):
        with pytest.raises(ValueError, match="singular at origin"):
            generalized_gaussian_score(np.zeros(2), 1.0)

    @pytest.mark.parametrize("alpha,dim", [(1.0, 3), (2.0, 2), (4.0, 5)])
    def test_expected_alpha_norm_is_dimension(self, alpha, dim):
        # E[||x||^alpha] = D under the radial sampling law
        model = GeneralizedGaussian(alpha, dim)
        n = 1_000_000
        r_alpha = np.linalg.norm(model.sample(n, Rng(11)), axis=1) ** alpha
        se = r_alpha.std(ddof=1) / np.sqrt(n)
        assert abs(r_alpha.mean() - dim) <= 3 * se

    def test_score_is_gradient_of_log_density(self):
        model = GeneralizedGaussian(3.0, 2)
        pts = 0.5 + Rng(4).standard_normal((20, 2)) * 0.3
        for x in pts:
            fd = finite_diff_gradient(model.log_density, x)
            assert np.linalg.norm(fd - model.score(x)) <= 1e-5 * max(
                1.0, np.linalg.norm(model.score(x))
            )


class TestStudentT:
    def test_zero_at_origin(self):
        assert np.allclose(student_t_score(np.zeros(3), 5.0, 3), 0.0)

    def test_gaussian_limit(self):
        x = np.array([1.0, 1.0])
        s = student_t_score(x, 1e6, 2)
        assert np.linalg.norm(s - (-x)) <= 1e-5

    def test_direct_substitution(self):
        s = student_t_score(np.array([1.0, 0.0]), 3.0, 2)
        assert np.allclose(s, [-1.25, 0.0], atol=1e-14)

    def test_score_is_gradient_of_log_density(self):
        model = StudentT(4.0, 3)
        pts = Rng(9).standard_normal((20, 3))
        for x in pts:
            fd = finite_diff_gradient(model.log_density, x)
            assert np.linalg.norm(fd - model.score(x)) <= 1e-5 * max(
                1.0, np.linalg.norm(model.score(x))
            )


class TestKde:
    def test_single_kernel_peak(self):
        sigma = 0.4
        kde = KdeModel(np.array([[1.0, 2.0]]), sigma)
        expected = -np.log(2 * np.pi * sigma**2)
        assert kde.log_density(np.array([1.0, 2.0])) == pytest.approx(expected)

    def test_symmetric_pair_matches_single_kernel(self):
        sigma = 0.7
        kde = KdeModel(np.array([-1.0, 1.0]), sigma)
        single = -0.5 * np.log(2 * np.pi * sigma**2) - 1.0 / (2 * sigma**2)
        assert kde.log_density(np.array([0.0])) == pytest.approx(single, abs=1e-12)

    def test_single_kernel_score(self):
        sigma = 0.5
        x0 = np.array([1.0, -1.0])
        kde = KdeModel(x0.reshape(1, 2), sigma)
        x = np.array([2.0, 0.5])
        assert np.allclose(kde.score(x), -(x - x0) / sigma**2, atol=1e-12)

    def test_symmetric_pair_score_zero(self):
        kde = KdeModel(np.array([-1.0, 1.0]), 0.3)
        assert kde.score(np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)

    def test_score_matches_finite_differences(self):
        samples = Rng(2).standard_normal((50, 2))
        kde = KdeModel(samples, 0.35)
        for x in Rng(3).standard_normal((10, 2)):
            fd = finite_diff_gradient(kde.log_density, x)
            assert np.linalg.norm(fd - kde.score(x)) <= 1e-5 * max(
                1.0, np.linalg.norm(kde.score(x))
            )

    def test_bandwidth_limits_directional(self):
        samples = Rng(6).standard_normal(300)
        at_sample = samples[0]
        away = 7.5  # far from every sample
        sweep = [1e-1, 1e-3, 1e-5, 1e-7]
        at_vals = [KdeModel(samples, s).log_density(np.array([at_sample])) for s in sweep]
        away_vals = [KdeModel(samples, s).log_density(np.array([away])) for s in sweep]
        assert np.all(np.diff(at_vals) > 0)  # diverges upward at a sample point
        assert np.all(np.diff(away_vals) < 0)  # and downward away from data

    def test_invalid_bandwidth(self):
        with pytest.raises(ValueError, match="bandwidth"):
            KdeModel(np.zeros((3, 1)), 0.0)


class TestNnDensityField:
    def test_line_examples(self):
        field = NnDensityField(np.array([[0.0], [1.0], [3.0]]), intrinsic_dim=1)
        assert field.log_density_at(0) == pytest.approx(0.0)  # -1 * log 1
        assert field.log_density_at(2) == pytest.approx(-np.log(2.0))

    def test_scaling_homogeneity(self):
        pts = Rng(8).standard_normal((40, 2))
        c = 3.5
        d = 2
        base = NnDensityField(pts, d).node_log_densities()
        scaled = NnDensityField(c * pts, d).node_log_densities()
        assert np.allclose(scaled, base - d * np.log(c), atol=1e-10)

    def test_duplicate_point_is_degenerate(self):
        field = NnDensityField(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), 2)
        with pytest.raises(ValueError, match="degenerate nearest neighbor"):
            field.log_density_at(0)


class TestScoreDensityConsistency:
    """Finite-difference check on 100 random points per model."""

    @pytest.mark.parametrize(
        "model_factory",
        [
            lambda: standard_normal(2),
            gmm3_model,
            lambda: GeneralizedGaussian(3.0, 2),
            lambda: StudentT(5.0, 2),
            lambda: KdeModel(Rng(1).standard_normal((200, 2)), 0.4),
        ],
        ids=["standard_normal", "gmm3", "generalized_gaussian", "student_t", "kde"],
    )
    def test_score_equals_log_density_gradient(self, model_factory):
        model = model_factory()
        pts = Rng(17).standard_normal((100, model.dim))
        scores = np.stack([model.score(x) for x in pts])
        fds = np.stack([finite_diff_gradient(model.log_density, x) for x in pts])
        scale = np.maximum(1.0, np.linalg.norm(scores, axis=1))
        rel = np.linalg.norm(fds - scores, axis=1) / scale
        assert rel.max() <= 1e-5
