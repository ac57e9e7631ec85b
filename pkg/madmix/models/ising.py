import numpy as np
from scipy.special import expit

from madmix.discrete import DiscretePMF, FullConditionalTarget

MAX_EXACT_SPINS = 20


def spins(x):
    """Atom ``1 -> -1`` and atom ``2 -> +1``."""
    return 2 * np.asarray(x) - 3


class IsingChain(FullConditionalTarget):
    """
    One-dimensional Ising chain, ``log p(x) = beta * sum_m s_m s_{m+1}`` with free boundaries.
    """

    def __init__(self, n_spins=5, beta=1.0):
        if n_spins < 2:
            raise ValueError(f"An Ising chain needs at least 2 spins, got {n_spins}.")
        if beta < 0:
            raise ValueError(f"Inverse temperature must be nonnegative, got {beta}.")
        super().__init__((2,) * int(n_spins))
        self.beta = float(beta)

    def _field(self, m, s):
        field = np.zeros(s.shape[0])
        if m > 0:
            field += s[:, m - 1]
        if m < self.dim - 1:
            field += s[:, m + 1]
        return self.beta * field

    def conditional_probs(self, m, x):
        h = self._field(m, spins(np.atleast_2d(x)))
        return np.stack([expit(-2 * h), expit(2 * h)], axis=1)

    def unnormalized_log_mass(self, x):
        s = spins(np.atleast_2d(x))
        return self.beta * np.sum(s[:, :-1] * s[:, 1:], axis=1)

    def mean_field_expectation(self, m, factors):
        # E[s_j] under factor j is q_j(+1) - q_j(-1)
        means = np.array([f[1] - f[0] for f in factors])
        field = 0.0
        if m > 0:
            field += means[m - 1]
        if m < self.dim - 1:
            field += means[m + 1]
        return self.beta * field * np.array([-1.0, 1.0])

    def mean_field_energy(self, factors):
        means = np.array([f[1] - f[0] for f in factors])
        return float(self.beta * np.sum(means[:-1] * means[1:]))


def ising_conditional(m, x, beta) -> DiscretePMF:
    """Full conditional of spin ``m`` (0-based) given the atoms ``x`` of the whole chain."""
    x = np.asarray(x)
    return IsingChain(x.size, beta).conditional(m, x)


def ising_exact_pmf(n_spins, beta) -> DiscretePMF:
    """Exact flattened PMF over ``2^M`` states in ascending binary order (spin -1 first)."""
    if n_spins > MAX_EXACT_SPINS:
        raise ValueError(f"Exact enumeration is limited to {MAX_EXACT_SPINS} spins, got {n_spins}.")
    return IsingChain(n_spins, beta).exact_pmf()
