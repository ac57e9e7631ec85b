import numpy as np
import pytest

from madmix import MadMixFlow
from madmix.baselines import cavi_fit, empirical_frequencies
from madmix.discrete import AugmentedState
from madmix.main import (
    CategoricalReference,
    UniformReference,
    WeightedPair,
    elbo_trace,
    optimize_weight,
    weight_gradient,
    weight_kl_estimate,
)
from madmix.models import ToyTarget
from madmix.report.experiment import build_two_mode_pair
from madmix.utils.metrics import kl_divergence, total_variation


@pytest.fixture
def toy1d():
    return ToyTarget.named("toy1d", seed=0)


def _component_draws(pair, n_samples, seed):
    rng = np.random.default_rng(seed)
    return pair.flow0.sample(n_samples, rng=rng), pair.flow1.sample(n_samples, rng=rng)


class TestReferences:
    def test_uniform_log_density(self, toy2d):
        reference = UniformReference(toy2d.support_sizes)
        state = reference.sample(10, np.random.default_rng(0))
        np.testing.assert_allclose(reference.log_density(state), -np.log(20.0))

    def test_categorical_allows_zero_atoms(self):
        reference = CategoricalReference([[0.5, 0.5, 0.0]])
        draws = reference.sample(1000, np.random.default_rng(0))
        assert np.all(draws.x <= 2)
        assert reference.log_mass(np.array([[3]]))[0] == -np.inf

    def test_categorical_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            CategoricalReference([[0.5, 0.6]])

    def test_mismatched_reference(self, toy2d):
        with pytest.raises(ValueError):
            MadMixFlow(toy2d, UniformReference((4, 4)), n_flow=2)

    def test_flow_length(self, toy2d):
        with pytest.raises(ValueError):
            MadMixFlow(toy2d, n_flow=0)


class TestLogDensity:
    def test_single_component_is_reference(self, ising5):
        flow = MadMixFlow(ising5, n_flow=1)
        state = flow.reference.sample(50, np.random.default_rng(0))
        np.testing.assert_allclose(flow.log_density(state), -5 * np.log(2.0))

    def test_cached_matches_direct(self, ising5):
        flow = MadMixFlow(ising5, n_flow=20)
        state = flow.reference.sample(30, np.random.default_rng(1))
        np.testing.assert_allclose(
            flow.orbit_log_weights(state, cached=True), flow.orbit_log_weights(state, cached=False), atol=1e-10
        )

    def test_single_state_returns_float(self, ising5):
        flow = MadMixFlow(ising5, n_flow=5)
        state = AugmentedState([1, 2, 1, 2, 1], [0.1, 0.2, 0.3, 0.4, 0.5])
        assert isinstance(flow.log_density(state), float)

    @pytest.mark.parametrize("n_flow", [1, 5])
    @pytest.mark.parametrize("bad", [1.5, -0.2, np.nan])
    def test_outside_unit_cube(self, ising5, n_flow, bad):
        flow = MadMixFlow(ising5, n_flow=n_flow)
        x, u = flow.reference.sample(2, np.random.default_rng(0)).as_batch()
        state = AugmentedState(x, u)
        state.u[0, 0] = bad
        log_q = flow.log_density(state)
        assert log_q[0] == -np.inf
        assert np.isfinite(log_q[1])

    def test_marginal_sums_to_one(self, toy2d):
        flow = MadMixFlow(toy2d, n_flow=10)
        pmf, total = flow.exact_marginal_pmf(n_u_samples=2000, seed=0)
        assert total == pytest.approx(1.0, abs=0.1)
        assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-12)
        frame = flow.pmf_frame(pmf)
        assert list(frame.columns) == ["x0", "x1", "probability"]

    @pytest.mark.parametrize("name", ["toy2d", "ising5"])
    def test_single_component_marginal_is_uniform(self, name, request):
        target = request.getfixturevalue(name)
        pmf, total = MadMixFlow(target, n_flow=1).exact_marginal_pmf(n_u_samples=50, seed=0)
        np.testing.assert_allclose(pmf.probs, 1.0 / pmf.probs.size, rtol=1e-12)
        assert total == pytest.approx(1.0, rel=1e-12)


class TestSampling:
    def test_sampler_matches_density(self, toy1d):
        flow = MadMixFlow(toy1d, n_flow=10)
        draws = flow.sample(1_000_000, seed=0)
        freqs = empirical_frequencies(draws.x, toy1d.support_sizes)
        pmf, _ = flow.exact_marginal_pmf(n_u_samples=100_000, seed=1)
        assert total_variation(freqs, pmf) < 0.01

    def test_seed_reproducible(self, toy2d):
        flow = MadMixFlow(toy2d, n_flow=50)
        first, second = flow.sample(100, seed=3), flow.sample(100, seed=3)
        np.testing.assert_array_equal(first.x, second.x)
        np.testing.assert_array_equal(first.u, second.u)

    def test_single_draw(self, toy2d):
        state = MadMixFlow(toy2d, n_flow=5).sample(seed=0)
        assert not state.is_batch
        toy2d.check_state(state.x)

    def test_push_zero_steps(self, toy2d):
        flow = MadMixFlow(toy2d, n_flow=5)
        state = flow.reference.sample(10, np.random.default_rng(0))
        pushed = flow.push(state, np.zeros(10, dtype=int))
        np.testing.assert_array_equal(pushed.x, state.x)


class TestConvergence:
    def test_toy1d_kl(self, toy1d):
        kls = []
        for n_flow in (1, 10, 100, 500):
            pmf, _ = MadMixFlow(toy1d, n_flow=n_flow).exact_marginal_pmf(n_u_samples=1000, seed=0)
            kls.append(kl_divergence(pmf, toy1d.exact_pmf()))
        assert kls[-1] < 0.01
        assert kls[-1] < kls[0]
        assert np.all(np.diff(kls) < 0.01)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_toy2d_kl_decreases(self, seed):
        target = ToyTarget.named("toy2d", seed=seed)
        kls = []
        for n_flow in (1, 10, 100):
            pmf, _ = MadMixFlow(target, n_flow=n_flow).exact_marginal_pmf(n_u_samples=1000, seed=0)
            kls.append(kl_divergence(pmf, target.exact_pmf()))
        assert kls[-1] < kls[0]

    def test_ising_beats_mean_field(self, ising5):
        exact = ising5.exact_pmf()
        pmf, _ = MadMixFlow(ising5, n_flow=1000).exact_marginal_pmf(n_u_samples=500, seed=0)
        assert total_variation(pmf, exact) < 0.05
        mean_field = cavi_fit(ising5, seed=0).flattened_pmf()
        assert kl_divergence(mean_field, exact) > kl_divergence(pmf, exact)


class TestElbo:
    def test_matching_reference(self):
        target = ToyTarget(np.full(10, 0.1))
        estimate, se = MadMixFlow(target, n_flow=1).elbo(n_samples=200, seed=0)
        assert estimate == pytest.approx(0.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-12)

    def test_needs_two_samples(self, ising5):
        with pytest.raises(ValueError):
            MadMixFlow(ising5, n_flow=2).elbo(n_samples=1)

    def test_deterministic(self, ising5):
        flow = MadMixFlow(ising5, n_flow=20)
        assert flow.elbo(n_samples=100, seed=5) == flow.elbo(n_samples=100, seed=5)

    def test_normalized_elbo_is_negative_kl(self, ising5):
        estimate, se = MadMixFlow(ising5, n_flow=50).elbo(n_samples=2000, seed=0)
        assert estimate <= 3 * se

    def test_unnormalized_below_log_normalizer(self, ising5):
        estimate, se = MadMixFlow(ising5, n_flow=50).elbo(n_samples=2000, seed=0, normalized=False)
        assert estimate <= ising5.log_normalizer() + 3 * se

    @pytest.mark.slow
    def test_ising_elbo_bounds_marginal_kl(self, ising5):
        flow = MadMixFlow(ising5, n_flow=1000)
        pmf, _ = flow.exact_marginal_pmf(n_u_samples=500, seed=0)
        kl = kl_divergence(pmf, ising5.exact_pmf())
        estimate, se = flow.elbo(n_samples=1000, seed=0)
        # the augmented KL dominates the marginal one
        assert kl <= -estimate + 3 * se + 0.01
        assert estimate <= 3 * se
        trace = elbo_trace(ising5, [1, 1000], n_samples=1000, seed=0)
        assert trace["elbo"].iloc[-1] > trace["elbo"].iloc[0]
        assert trace["elbo"].iloc[-1] == estimate

    def test_trace_columns(self, ising5):
        frame = elbo_trace(ising5, [1, 5], n_samples=50, seed=0)
        assert list(frame.columns) == ["n", "elbo", "se"]
        assert frame["n"].tolist() == [1, 5]


class TestWeighting:
    def test_pair_validation(self, ising5, toy2d):
        with pytest.raises(ValueError):
            WeightedPair(MadMixFlow(ising5, n_flow=2), MadMixFlow(ising5, n_flow=3))
        with pytest.raises(ValueError):
            WeightedPair(MadMixFlow(ising5, n_flow=2), MadMixFlow(toy2d, n_flow=2))
        with pytest.raises(ValueError):
            WeightedPair(MadMixFlow(ising5, n_flow=2), MadMixFlow(ising5, n_flow=2), w=1.0)

    def test_disjoint_gradient_is_exact(self):
        pair = build_two_mode_pair(10, n_flow=1, xi=np.pi / 16)
        for alpha in (0.2, 0.5, 0.8):
            gradient, se = weight_gradient(pair, alpha, n_samples=50, rng=np.random.default_rng(0))
            assert gradient == pytest.approx(np.log(alpha / (1 - alpha)), abs=1e-10)
            assert se == pytest.approx(0.0, abs=1e-10)

    def test_gradient_matches_finite_difference(self):
        pair = build_two_mode_pair(10, n_flow=1, xi=np.pi / 16)
        draws = _component_draws(pair, 200, seed=0)
        alpha, h = 0.3, 1e-5
        numeric = (weight_kl_estimate(pair, alpha + h, draws) - weight_kl_estimate(pair, alpha - h, draws)) / (2 * h)
        gradient, _ = weight_gradient(pair, alpha, draws=draws)
        assert gradient == pytest.approx(numeric, abs=1e-6)

    @pytest.mark.parametrize("n_flow", [1, 5])
    def test_optimum_is_one_half(self, n_flow):
        pair = build_two_mode_pair(10, n_flow=n_flow, xi=np.pi / 16, w=0.2)
        alpha = optimize_weight(pair, step_size=0.05, n_iters=500, n_samples=100, seed=0)
        assert 0.45 <= alpha <= 0.55

    def test_gradient_overlapping_references(self, toy1d):
        lower = np.r_[np.full(7, 1.0 / 7), np.zeros(3)]
        upper = np.r_[np.zeros(3), np.full(7, 1.0 / 7)]
        flows = [MadMixFlow(toy1d, CategoricalReference([p]), n_flow=5) for p in (lower, upper)]
        pair = WeightedPair(*flows, w=0.5)
        alpha, h = 0.4, 1e-4
        gradient, se = weight_gradient(pair, alpha, n_samples=500, rng=np.random.default_rng(0))

        draws = _component_draws(pair, 100_000, seed=1)
        numeric = (weight_kl_estimate(pair, alpha + h, draws) - weight_kl_estimate(pair, alpha - h, draws)) / (2 * h)
        assert se > 0
        assert abs(gradient - numeric) <= 3 * se + 0.02

    def test_identical_components_have_zero_gradient(self, toy1d):
        flows = [MadMixFlow(toy1d, UniformReference(toy1d.support_sizes), n_flow=5) for _ in range(2)]
        pair = WeightedPair(*flows)
        draws = pair.flow0.sample(200, rng=np.random.default_rng(0))
        gradient, _ = weight_gradient(pair, 0.3, draws=(draws, draws))
        assert gradient == 0.0
        gradient, se = weight_gradient(pair, 0.3, n_samples=500, rng=np.random.default_rng(1))
        assert abs(gradient) <= 4 * se

    @pytest.mark.parametrize("w", [0.0, 1.5, np.nan])
    def test_two_mode_pair_rejects_weight(self, w):
        with pytest.raises(ValueError):
            build_two_mode_pair(10, n_flow=1, xi=np.pi / 16, w=w)

    def test_mixture_density(self):
        pair = build_two_mode_pair(10, n_flow=1, xi=np.pi / 16)
        state = AugmentedState(np.array([[1], [10]]), np.array([[0.5], [0.5]]))
        np.testing.assert_allclose(pair.log_density(state), np.log(0.1))
