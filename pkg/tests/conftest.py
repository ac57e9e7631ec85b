import numpy as np
import pytest
from scipy import stats
from scipy.special import softmax

from madmix.discrete import DiscretePMF
from madmix.mixed import MixedTarget
from madmix.models import IsingChain, ToyTarget

FIGURE_PROBS = (0.1, 0.4, 0.4, 0.1)


class GaussianTarget(MixedTarget):
    """Standard normal on ``R^dim`` with no discrete coordinates."""

    def __init__(self, dim=2):
        super().__init__(dim, ())

    def unnormalized_log_density(self, x_c, x_d):
        return float(-0.5 * np.sum(np.asarray(x_c) ** 2))

    def score(self, x_c, x_d):
        return -np.asarray(x_c, dtype=float)

    def discrete_conditional_probs(self, m, x_c, x_d):
        raise ValueError("No discrete coordinates.")

    def initial_point(self):
        return np.zeros(self.dim_continuous), np.zeros(0, dtype=np.int64)


class TwoStateGaussian(MixedTarget):
    """``x_d`` uniform on {1, 2} and ``x_c | x_d ~ N(mu_{x_d}, 1)``."""

    means = np.array([-1.0, 2.0])

    def __init__(self):
        super().__init__(1, (2,))

    def unnormalized_log_density(self, x_c, x_d):
        mu = self.means[np.asarray(x_d)[0] - 1]
        return float(np.log(0.5) + stats.norm.logpdf(np.asarray(x_c)[0], loc=mu))

    def score(self, x_c, x_d):
        return -(np.asarray(x_c, dtype=float) - self.means[np.asarray(x_d)[0] - 1])

    def discrete_conditional_probs(self, m, x_c, x_d):
        return softmax(stats.norm.logpdf(np.asarray(x_c)[0], loc=self.means))

    def initial_point(self):
        return np.array([0.5]), np.array([1], dtype=np.int64)


class IsingBlock(MixedTarget):
    """An Ising chain seen as a mixed target without continuous coordinates."""

    def __init__(self, n_spins=5, beta=1.0):
        self.chain = IsingChain(n_spins, beta)
        super().__init__(0, self.chain.support_sizes)

    def unnormalized_log_density(self, x_c, x_d):
        return float(self.chain.unnormalized_log_mass(np.asarray(x_d)[np.newaxis])[0])

    def score(self, x_c, x_d):
        return np.zeros(0)

    def discrete_conditional_probs(self, m, x_c, x_d):
        return self.chain.conditional_probs(m, np.asarray(x_d)[np.newaxis])[0]

    def initial_point(self):
        return np.zeros(0), np.ones(self.chain.dim, dtype=np.int64)


def finite_difference(func, x, h=1e-5, coordinates=None):
    """Central differences of a scalar function along the requested coordinates."""
    x = np.asarray(x, dtype=float)
    coordinates = range(x.size) if coordinates is None else coordinates
    grad = []
    for i in coordinates:
        step = np.zeros_like(x)
        step[i] = h
        grad.append((func(x + step) - func(x - step)) / (2 * h))
    return np.array(grad)


def exact_draws(target, n_samples, rng):
    """Exact draws from an enumerable discrete target."""
    states = target.enumerate_states()
    index = rng.choice(states.shape[0], size=n_samples, p=target.exact_pmf().probs)
    return states[index]


@pytest.fixture
def figure_pmf():
    return DiscretePMF(FIGURE_PROBS)


@pytest.fixture
def figure_target():
    return ToyTarget(np.array(FIGURE_PROBS))


@pytest.fixture
def ising5():
    return IsingChain(n_spins=5, beta=1.0)


@pytest.fixture
def toy2d():
    return ToyTarget.named("toy2d", seed=0)


@pytest.fixture
def gaussian_target():
    return GaussianTarget(dim=2)


@pytest.fixture
def two_state_gaussian():
    return TwoStateGaussian()
