import numpy as np
import pytest
from conftest import finite_difference
from scipy import stats
from scipy.integrate import quad, trapezoid
from scipy.special import expit

from madmix.baselines import GibbsChain
from madmix.discrete import validate_target
from madmix.models import (
    GmmModel,
    IsingChain,
    SpikeSlabModel,
    ToyTarget,
    gmm_conditionals,
    gmm_score,
    ising_conditional,
    ising_exact_pmf,
    raw_weight_score,
    spikeslab_conditionals,
    spikeslab_score,
)
from madmix.utils.dataset import make_gmm_data, make_regression_data
from madmix.utils.linalg import (
    cholesky_product_jacobian,
    commutation_matrix,
    covariance_gradient_to_h,
    covariance_to_h,
    free_from_simplex,
    h_log_jacobian,
    h_to_cholesky,
    h_to_covariance,
    simplex_from_free,
    simplex_log_jacobian,
    tril_to_vector,
    vec,
    vector_to_tril,
)


def _random_h(D, rng):
    return np.tril(0.3 * rng.standard_normal((D, D)))


def _numeric_jacobian(func, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        columns.append((func(x + step) - func(x - step)) / (2 * h))
    return np.stack(columns, axis=1)


@pytest.fixture
def gmm_data():
    y, labels = make_gmm_data(n_observations=12, n_components=2, dimension=2, separation=3.0, seed=1)
    return y, labels


@pytest.fixture
def regression():
    X, y, beta = make_regression_data(n_observations=100, n_features=8, n_nonzero=3, snr=5.0, seed=0)
    return SpikeSlabModel(X, y), beta


def _spikeslab_state(model, gamma):
    x_c, _ = model.initial_point()
    return x_c, np.asarray(gamma, dtype=np.int64)


class TestToy:
    def test_rejects_zero_mass(self):
        with pytest.raises(ValueError):
            ToyTarget(np.array([0.5, 0.5, 0.0]))

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            ToyTarget.named("toy4d")

    def test_named_shapes(self):
        assert ToyTarget.named("toy3d").support_sizes == (10, 10, 10)
        assert ToyTarget.named("toy2d", seed=3).joint.sum() == pytest.approx(1.0, abs=1e-12)

    def test_normalizer(self, toy2d):
        assert toy2d.log_normalizer() == 0.0
        assert float(np.logaddexp.reduce(toy2d.log_mass_table().ravel())) == pytest.approx(0.0, abs=1e-12)

    def test_one_dimensional_conditional(self, figure_target):
        probs = figure_target.conditional_probs(0, np.array([[1], [4]]))
        np.testing.assert_allclose(probs, [[0.1, 0.4, 0.4, 0.1]] * 2)


class TestIsing:
    def test_end_spin_conditional(self):
        pmf = ising_conditional(0, [1, 2, 1, 1, 1], 1.0)
        assert pmf.probs[1] == pytest.approx(0.88080, abs=1e-5)

    def test_infinite_temperature(self):
        pmf = ising_conditional(2, [1, 2, 2, 2, 1], 0.0)
        np.testing.assert_allclose(pmf.probs, [0.5, 0.5])

    def test_opposite_neighbours_cancel(self):
        pmf = ising_conditional(2, [1, 1, 1, 2, 1], 1.0)
        np.testing.assert_allclose(pmf.probs, [0.5, 0.5])

    def test_two_spin_pmf(self):
        e = np.exp(1.0)
        expected = np.array([e, 1 / e, 1 / e, e]) / (2 * e + 2 / e)
        np.testing.assert_allclose(ising_exact_pmf(2, 1.0).probs, expected, atol=1e-14)

    def test_enumeration_limit(self):
        with pytest.raises(ValueError):
            ising_exact_pmf(21, 1.0)

    @pytest.mark.parametrize("kwargs", [{"n_spins": 1}, {"beta": -0.5}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            IsingChain(**kwargs)

    def test_closed_form_mean_field(self, ising5):
        rng = np.random.default_rng(0)
        factors = [rng.dirichlet([1.0, 1.0]) for _ in range(5)]
        generic = ToyTarget(ising5.exact_pmf().probs.reshape(ising5.support_sizes))
        for m in range(5):
            closed = ising5.mean_field_expectation(m, factors)
            enumerated = generic.mean_field_expectation(m, factors)
            np.testing.assert_allclose(np.diff(closed), np.diff(enumerated), atol=1e-12)
        log_z = ising5.log_normalizer()
        assert ising5.mean_field_energy(factors) - log_z == pytest.approx(generic.mean_field_energy(factors), abs=1e-12)


class TestLinalg:
    def test_commutation_matrix(self):
        A = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(commutation_matrix(3) @ vec(A), vec(A.T))

    def test_h_round_trip(self):
        rng = np.random.default_rng(0)
        for D in (1, 2, 3):
            H = _random_h(D, rng)
            np.testing.assert_allclose(covariance_to_h(h_to_covariance(H)), H, atol=1e-12)

    def test_tril_vector_round_trip(self):
        H = _random_h(3, np.random.default_rng(1))
        np.testing.assert_array_equal(vector_to_tril(tril_to_vector(H), 3), H)

    def test_cholesky_product_jacobian(self):
        rng = np.random.default_rng(2)
        L = h_to_cholesky(_random_h(3, rng))
        dL = np.tril(rng.standard_normal((3, 3)))
        np.testing.assert_allclose(cholesky_product_jacobian(L) @ vec(dL), vec(dL @ L.T + L @ dL.T), atol=1e-12)

    def test_covariance_gradient_chain_rule(self):
        rng = np.random.default_rng(3)
        H = _random_h(3, rng)
        A = rng.standard_normal((3, 3))
        A = A + A.T

        def trace_form(h):
            return np.trace(A @ h_to_covariance(vector_to_tril(h, 3)))

        numeric = finite_difference(trace_form, tril_to_vector(H), h=1e-6)
        np.testing.assert_allclose(covariance_gradient_to_h(A, H), numeric, rtol=1e-6, atol=1e-7)

    @pytest.mark.parametrize("D", [1, 2, 3])
    def test_h_log_jacobian(self, D):
        H = _random_h(D, np.random.default_rng(D))
        jacobian = _numeric_jacobian(lambda h: tril_to_vector(h_to_covariance(vector_to_tril(h, D))), tril_to_vector(H))
        assert np.log(abs(np.linalg.det(jacobian))) == pytest.approx(h_log_jacobian(H), abs=1e-6)

    def test_simplex(self):
        w = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(simplex_from_free(free_from_simplex(w)), w, atol=1e-15)
        jacobian = _numeric_jacobian(lambda v: simplex_from_free(v)[:-1], free_from_simplex(w))
        assert np.log(abs(np.linalg.det(jacobian))) == pytest.approx(simplex_log_jacobian(w), abs=1e-6)


class TestGmm:
    def test_weight_conditional(self):
        y = np.arange(10.0).reshape(5, 2)
        model = GmmModel(y, n_components=2)
        x_c, _ = model.initial_point()
        law = gmm_conditionals(model, "weights", x_c, [1, 1, 1, 2, 2])
        np.testing.assert_allclose(law.alpha, [4.0, 3.0])

    def test_raw_weight_score(self):
        np.testing.assert_allclose(raw_weight_score([0.5, 0.5], [3, 2], alpha=1.0), [6.0, 4.0])

    @pytest.mark.parametrize("prior", ["conjugate", "printed"])
    def test_score_matches_finite_difference(self, gmm_data, prior):
        model = GmmModel(gmm_data[0], n_components=2, covariance_prior=prior)
        x_c, x_d = model.initial_point()
        x_c = x_c + 0.1 * np.random.default_rng(0).standard_normal(x_c.size)
        numeric = finite_difference(lambda v: model.unnormalized_log_density(v, x_d), x_c)
        np.testing.assert_allclose(gmm_score(model, x_c, x_d), numeric, rtol=1e-5, atol=1e-5)

    def test_printed_mean_gradient_vanishes_at_cluster_mean(self, gmm_data):
        y, labels = gmm_data
        model = GmmModel(y, n_components=2, covariance_prior="printed")
        means = np.stack([y[labels == k].mean(axis=0) for k in (1, 2)])
        x_c = model.pack([0.4, 0.6], means, [np.eye(2), 2 * np.eye(2)])
        grad = model.score(x_c, labels)
        np.testing.assert_allclose(grad[model.n_weight : model.n_weight + 4], 0.0, atol=1e-10)

    def test_symmetric_observation(self):
        y = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
        model = GmmModel(y, n_components=2, m0=[[-1.0, 0.0], [1.0, 0.0]])
        x_c = model.pack([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], [np.eye(2), np.eye(2)])
        np.testing.assert_allclose(model.discrete_conditional_probs(2, x_c, [1, 2, 1]), [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(model.responsibilities(x_c).sum(axis=1), 1.0, atol=1e-12)

    def test_label_conditionals_are_consistent(self):
        y, _ = make_gmm_data(n_observations=6, n_components=2, dimension=2, separation=2.0, seed=2)
        model = GmmModel(y, n_components=2)
        x_c, _ = model.initial_point()
        assert validate_target(model.conditioned(x_c), n_states=30, seed=0).passed

    def test_label_law(self, gmm_data):
        model = GmmModel(gmm_data[0], n_components=2)
        x_c, x_d = model.initial_point()
        pmf = gmm_conditionals(model, "labels", x_c, x_d, index=3)
        np.testing.assert_allclose(pmf.probs, model.responsibilities(x_c)[3])
        assert len(gmm_conditionals(model, "labels", x_c, x_d)) == model.n_obs

    def test_printed_empty_cluster(self, gmm_data):
        model = GmmModel(gmm_data[0], n_components=2, covariance_prior="printed")
        x_c, _ = model.initial_point()
        with pytest.raises(ValueError):
            gmm_conditionals(model, "means", x_c, np.ones(model.n_obs, dtype=np.int64))

    def test_conjugate_conditionals(self, gmm_data):
        model = GmmModel(gmm_data[0], n_components=2)
        x_c, x_d = model.initial_point()
        means = gmm_conditionals(model, "means", x_c, x_d)
        covariances = gmm_conditionals(model, "covariances", x_c, x_d)
        assert len(means) == len(covariances) == 2
        assert covariances[0].df == pytest.approx(model.nu0 + np.sum(x_d == 1))

    def test_gibbs_update(self, gmm_data):
        model = GmmModel(gmm_data[0], n_components=2)
        x_c, x_d = model.initial_point()
        new_c, new_d = model.gibbs_update(x_c, x_d, np.random.default_rng(0))
        assert new_c.shape == (model.dim_continuous,)
        assert set(np.unique(new_d)) <= {1, 2}
        assert np.isfinite(model.unnormalized_log_density(new_c, new_d))

    def test_invalid_arguments(self, gmm_data):
        with pytest.raises(ValueError):
            GmmModel(gmm_data[0], covariance_prior="wishart")
        with pytest.raises(ValueError):
            GmmModel(gmm_data[0][:1], n_components=2)
        model = GmmModel(gmm_data[0])
        with pytest.raises(ValueError):
            gmm_conditionals(model, "labels_and_means", *model.initial_point())


class TestSpikeSlab:
    gamma = [2, 2, 2, 1, 2, 1, 1, 1]

    def test_augmented_score(self, regression):
        model, _ = regression
        x_c, x_d = _spikeslab_state(model, self.gamma)
        x_c = x_c + 0.05 * np.random.default_rng(0).standard_normal(x_c.size)
        numeric = finite_difference(lambda v: model.unnormalized_log_density(v, x_d), x_c)
        np.testing.assert_allclose(model.score(x_c, x_d), numeric, rtol=1e-5, atol=1e-4)

    def test_active_score(self, regression):
        model, _ = regression
        x_c, x_d = _spikeslab_state(model, self.gamma)
        coordinates = [0, 1, 2] + [3 + p for p in np.flatnonzero(x_d == 2)]
        numeric = finite_difference(lambda v: model.posterior_log_density(v, x_d), x_c, coordinates=coordinates)
        score = spikeslab_score(model, x_c, x_d)
        assert score.size == 3 + 4
        np.testing.assert_allclose(score, numeric, rtol=1e-5, atol=1e-4)

    def test_beta_gradient_vanishes_at_conditional_mean(self, regression):
        model, _ = regression
        x_c, x_d = _spikeslab_state(model, self.gamma)
        active = np.flatnonzero(x_d == 2)
        x_c[3 + active] = spikeslab_conditionals(model, "beta", x_c, x_d).mean
        np.testing.assert_allclose(spikeslab_score(model, x_c, x_d)[3:], 0.0, atol=1e-7)

    def test_empty_model(self, regression):
        model, _ = regression
        x_c, x_d = _spikeslab_state(model, np.ones(8))
        state = model.unpack(x_c, x_d)
        tau2 = spikeslab_conditionals(model, "tau2", x_c, x_d)
        assert tau2.args[0] == 0.5
        assert tau2.kwds["scale"] == pytest.approx(model.s2 / 2)
        theta = spikeslab_conditionals(model, "theta", x_c, x_d)
        assert theta.args == (model.a, model.b + 8)
        assert spikeslab_conditionals(model, "beta", x_c, x_d) is None
        assert spikeslab_score(model, x_c, x_d).size == 3
        assert state.n_active == 0

    def test_vanishing_inclusion_probability(self, regression):
        model, _ = regression
        x_c, x_d = _spikeslab_state(model, self.gamma)
        x_c[0] = -60.0
        probs = model.discrete_conditional_probs(3, x_c, x_d)
        assert probs.sum() == pytest.approx(1.0)
        assert 0.0 < probs[1] < 1e-15

    def test_collapsed_odds_match_quadrature(self, regression):
        model, _ = regression
        x_c, x_d = _spikeslab_state(model, self.gamma)
        state = model.unpack(x_c, x_d)
        for p in range(model.n_features):
            _, xz, precision = model.collapsed_inclusion_log_odds(p, state)
            g = model.gram_diag[p]
            peak = xz / precision
            sd = np.sqrt(state.sigma2 / precision)

            def log_integrand(b):
                slab = stats.norm.logpdf(b, scale=np.sqrt(state.sigma2 * state.tau2))
                return slab + (2 * b * xz - b**2 * g) / (2 * state.sigma2)

            area, _ = quad(lambda b: np.exp(log_integrand(b) - log_integrand(peak)), peak - 20 * sd, peak + 20 * sd)
            log_odds = np.log(state.theta) - np.log1p(-state.theta) + log_integrand(peak) + np.log(area)
            pmf = spikeslab_conditionals(model, "gamma", x_c, x_d, index=p)
            assert pmf.probs[1] == pytest.approx(expit(log_odds), abs=1e-3)

    @pytest.mark.parametrize("block", ["tau2", "sigma2"])
    def test_variance_conditional_mean(self, regression, block):
        model, _ = regression
        x_c, x_d = _spikeslab_state(model, self.gamma)
        index = {"tau2": 1, "sigma2": 2}[block]
        law = spikeslab_conditionals(model, block, x_c, x_d)
        grid = np.linspace(np.log(law.ppf(1e-14)), np.log(law.ppf(1 - 1e-14)), 20_001)

        def log_density(u):
            point = x_c.copy()
            point[index] = u
            return model.posterior_log_density(point, x_d)

        log_p = np.array([log_density(u) for u in grid])
        weights = np.exp(log_p - log_p.max())
        mean = trapezoid(weights * np.exp(grid), grid) / trapezoid(weights, grid)
        assert mean == pytest.approx(law.mean(), rel=1e-4)

    def test_gamma_noise_law(self, regression):
        model, _ = regression
        gamma_model = SpikeSlabModel(model.X, model.y, sigma2_law="gamma")
        law = spikeslab_conditionals(gamma_model, "sigma2", *_spikeslab_state(model, self.gamma))
        assert law.dist.name == "gamma"

    def test_conditionals_are_consistent(self, regression):
        model, _ = regression
        x_c, _ = _spikeslab_state(model, self.gamma)
        assert validate_target(model.conditioned(x_c), n_states=50, seed=0).passed

    def test_invalid_arguments(self, regression):
        model, _ = regression
        with pytest.raises(ValueError):
            SpikeSlabModel(model.X, model.y[:-1])
        with pytest.raises(ValueError):
            SpikeSlabModel(model.X, model.y, sigma2_law="half_cauchy")
        with pytest.raises(ValueError):
            SpikeSlabModel(model.X, model.y, s2=0.0)

    def test_gibbs_recovers_support(self, regression):
        model, beta = regression
        samples = GibbsChain(model, seed=0).run(n_sweeps=2000, burn_in=200)
        inclusion = np.mean([x_d - 1 for _, x_d in samples], axis=0)
        nonzero = beta != 0
        assert np.all(inclusion[nonzero] > 0.9)
        assert np.all(inclusion[~nonzero] < 0.5)
