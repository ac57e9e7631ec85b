"""
Discrete core
====================================
Finite PMFs with CDF / quantile access and the full-conditional target abstraction
shared by the MAD map, the MixFlow family and the baselines.

Atoms are indexed ``1..K`` with the convention ``F(0) = 0``; coordinates are indexed
``0..M-1`` like any numpy axis.
"""
import abc
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

ONE_MINUS = np.nextafter(1.0, 0.0)
MAX_ENUMERABLE_STATES = 2**20
_NORMALIZATION_TOL = 1e-12


def clamp_uniform(u):
    """Keeps uniforms in the half-open interval [0, 1)."""
    return np.clip(u, 0.0, ONE_MINUS)


def checked_uniform(u):
    """Rejects uniforms outside [0, 1] or non-finite ones, then maps ``u == 1`` just below 1."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("Uniform coordinates must be finite.")
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise ValueError("Uniform coordinates must lie in [0, 1).")
    return clamp_uniform(u)


def padded_cdf(probs):
    """
    Cumulative sums of a batch of probability rows with a leading zero column.

    Parameters
    ----------
    probs: array-like of shape (n_rows, K)
        Normalized probability rows.

    Returns
    -------
    cdf: np.ndarray of shape (n_rows, K + 1)
        ``cdf[:, l] = F(l)`` with ``F(0) = 0`` and ``F(K)`` pinned to exactly 1.
    """
    probs = np.atleast_2d(probs)
    cdf = np.zeros((probs.shape[0], probs.shape[1] + 1))
    np.cumsum(probs, axis=1, out=cdf[:, 1:])
    cdf[:, -1] = 1.0
    return cdf


def batch_quantile(cdf, p):
    """Row-wise ``Q(p) = min{l : F(l) > p}`` on padded CDF rows; returns atoms in 1..K."""
    n_atoms = cdf.shape[1] - 1
    atoms = np.sum(cdf[:, 1:] <= p[:, np.newaxis], axis=1) + 1
    return np.minimum(atoms, n_atoms)


@dataclass(frozen=True, eq=False)
class DiscretePMF:
    """Finite, strictly positive, normalized probability vector over atoms 1..K."""

    probs: np.ndarray
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float).ravel()
        if probs.size == 0:
            raise ValueError("A DiscretePMF needs at least one atom.")
        if np.any(~np.isfinite(probs)) or np.any(probs <= 0):
            raise ValueError(
                "DiscretePMF atoms must have strictly positive mass; prune zero-mass atoms from the support first."
            )
        if abs(probs.sum() - 1.0) > _NORMALIZATION_TOL:
            raise ValueError(f"DiscretePMF probabilities must sum to 1 (got {probs.sum():.15f}).")

        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        probs.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "cdf", cdf)

    @classmethod
    def from_weights(cls, weights):
        """Builds a PMF by normalizing nonnegative weights."""
        weights = np.asarray(weights, dtype=float)
        return cls(weights / weights.sum())

    @classmethod
    def from_log_weights(cls, log_weights):
        """Builds a PMF from unnormalized log-weights with a stable softmax."""
        return cls(softmax(np.asarray(log_weights, dtype=float)))

    @property
    def size(self):
        return self.probs.size

    def pmf(self, atom):
        """Mass of ``atom`` (1-based)."""
        if not 1 <= atom <= self.size:
            raise ValueError(f"Atom {atom} outside support 1..{self.size}.")
        return float(self.probs[atom - 1])

    def to_json(self):
        return [float(p) for p in self.probs]

    def __len__(self):
        return self.size


def cdf_eval(pmf: DiscretePMF, l: int) -> float:
    """
    Evaluates the CDF ``F(l)`` with ``F(0) = 0`` and ``F(K) = 1``.

    Parameters
    ----------
    pmf: DiscretePMF
        The distribution.

    l: int
        Atom index or zero.

    Returns
    -------
    value: float
        ``F(l)``.
    """
    if not 0 <= l <= pmf.size:
        raise ValueError(f"CDF index {l} outside 0..{pmf.size}.")
    if l == 0:
        return 0.0
    return float(pmf.cdf[l - 1])


def quantile(pmf: DiscretePMF, p: float) -> int:
    """Smallest atom ``l`` with ``F(l) > p`` for ``p`` in [0, 1)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"Quantile level must lie in [0, 1), got {p}.")
    return int(np.searchsorted(pmf.cdf, p, side="right")) + 1


@dataclass
class AugmentedState:
    """
    Discrete coordinates paired with their auxiliary uniforms.

    ``x`` and ``u`` have shape ``(M,)`` for a single state or ``(n, M)`` for a batch.
    """

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.u = checked_uniform(self.u)
        if self.x.shape != self.u.shape:
            raise ValueError(f"x and u shapes differ: {self.x.shape} vs {self.u.shape}.")

    @property
    def is_batch(self):
        return self.x.ndim == 2

    def __len__(self):
        return self.x.shape[0] if self.is_batch else 1

    def as_batch(self):
        """Returns 2D copies of ``(x, u)``."""
        return np.atleast_2d(self.x).copy(), np.atleast_2d(self.u).copy()

    def like(self, x, u):
        """Wraps batch arrays back into a state with this state's dimensionality."""
        if self.is_batch:
            return AugmentedState(x, u)
        return AugmentedState(x[0], u[0])

    def copy(self):
        return AugmentedState(self.x.copy(), self.u.copy())


class FullConditionalTarget(abc.ABC):
    """
    A discrete target on ``{1..K_1} x ... x {1..K_M}`` accessed through its full conditionals.

    Subclasses implement :meth:`conditional_probs` and, when the joint mass is tractable up to a
    constant, :meth:`unnormalized_log_mass`.
    """

    has_log_mass = True

    def __init__(self, support_sizes: Sequence[int]):
        self.support_sizes: Tuple[int, ...] = tuple(int(k) for k in support_sizes)
        if not self.support_sizes or any(k < 1 for k in self.support_sizes):
            raise ValueError(f"Invalid support sizes {support_sizes}.")
        self._log_mass_table = None

    @property
    def dim(self):
        return len(self.support_sizes)

    @property
    def n_states(self):
        return int(np.prod(self.support_sizes, dtype=object))

    @property
    def is_enumerable(self):
        return self.n_states <= MAX_ENUMERABLE_STATES

    @abc.abstractmethod
    def conditional_probs(self, m: int, x: np.ndarray) -> np.ndarray:
        """
        Full conditional of coordinate ``m`` for a batch of states.

        Parameters
        ----------
        m: int
            Coordinate index in ``0..M-1``.

        x: np.ndarray of shape (n, M)
            Batch of states (atoms in ``1..K``). The value of ``x[:, m]`` is ignored.

        Returns
        -------
        probs: np.ndarray of shape (n, K_m)
            Normalized conditional probabilities, one row per state.
        """

    def unnormalized_log_mass(self, x: np.ndarray) -> np.ndarray:
        """Log of the joint mass up to an additive constant, for a batch of states."""
        raise ValueError(f"{type(self).__name__} does not expose a tractable log-mass.")

    def conditional(self, m: int, x) -> DiscretePMF:
        """Full conditional of coordinate ``m`` given a single state ``x``."""
        x = np.asarray(x, dtype=np.int64).reshape(1, -1)
        return DiscretePMF(self.conditional_probs(m, x)[0])

    def check_state(self, x):
        """Raises if any coordinate of ``x`` is outside its support."""
        x = np.atleast_2d(x)
        if x.shape[-1] != self.dim:
            raise ValueError(f"Expected states with {self.dim} coordinates, got {x.shape[-1]}.")
        if np.any(x < 1) or np.any(x > np.array(self.support_sizes)):
            raise ValueError("State coordinates outside of the target support.")

    def enumerate_states(self) -> np.ndarray:
        """All states in ascending mixed-radix order (first coordinate most significant)."""
        if not self.is_enumerable:
            raise ValueError(f"State space of size {self.n_states} is too large to enumerate.")
        idx = np.arange(self.n_states)
        return np.stack(np.unravel_index(idx, self.support_sizes), axis=1) + 1

    def state_index(self, x) -> np.ndarray:
        """Flattened (mixed-radix) index of each state in a batch."""
        x = np.atleast_2d(x)
        return np.ravel_multi_index(tuple((x - 1).T), self.support_sizes)

    def log_mass_table(self) -> np.ndarray:
        """Unnormalized log-mass of every state, shaped like the support."""
        if self._log_mass_table is None:
            states = self.enumerate_states()
            self._log_mass_table = self.unnormalized_log_mass(states).reshape(self.support_sizes)
        return self._log_mass_table

    def log_normalizer(self) -> float:
        """``log Z`` by exhaustive enumeration."""
        return float(logsumexp(self.log_mass_table()))

    def exact_pmf(self) -> DiscretePMF:
        """Normalized flattened PMF over all states in ascending mixed-radix order."""
        return DiscretePMF.from_log_weights(self.log_mass_table().ravel())

    def mean_field_expectation(self, m: int, factors: List[np.ndarray]) -> np.ndarray:
        """
        ``E_{q_{-m}}[log p(x) | x_m = a]`` for every atom ``a`` of coordinate ``m``.

        The default contracts the enumerated log-mass table with the other factors.
        """
        table = np.moveaxis(self.log_mass_table(), m, -1)
        others = [f for j, f in enumerate(factors) if j != m]
        for factor in others:
            table = np.tensordot(factor, table, axes=(0, 0))
        return np.asarray(table)

    def mean_field_energy(self, factors: List[np.ndarray]) -> float:
        """``E_q[log p(x)]`` under a fully factorized ``q``."""
        table = self.log_mass_table()
        for factor in factors:
            table = np.tensordot(factor, table, axes=(0, 0))
        return float(table)


@dataclass
class TargetDiagnostic:
    """Outcome of :func:`validate_target`."""

    max_deviation: float
    n_states_checked: int
    failures: List[Tuple[int, int, float]] = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def validate_target(
    target: FullConditionalTarget, n_states=100, tol=1e-9, seed=None, logger=None, verbose=False
) -> TargetDiagnostic:
    """
    Checks that each full conditional matches the normalized log-mass slice through the state and
    does not depend on the coordinate being updated.

    Parameters
    ----------
    target: FullConditionalTarget
        Target to check. It must expose :meth:`FullConditionalTarget.unnormalized_log_mass`.

    n_states: int, default=100
        Number of uniformly drawn states to check.

    tol: float, default=1e-9
        Deviations above this threshold are reported as failures.

    seed: int, default=None
        Seed for the random states.

    Returns
    -------
    report: TargetDiagnostic
        Maximum absolute deviation and the ``(state, coordinate, deviation)`` failures.
    """
    log = logger.log if logger else print
    rng = np.random.default_rng(seed)
    states = np.stack([rng.integers(1, k + 1, size=n_states) for k in target.support_sizes], axis=1)

    max_dev = 0.0
    failures = []
    for m, n_atoms in enumerate(target.support_sizes):
        replicated = np.repeat(states, n_atoms, axis=0)
        replicated[:, m] = np.tile(np.arange(1, n_atoms + 1), n_states)

        log_mass = target.unnormalized_log_mass(replicated).reshape(n_states, n_atoms)
        expected = softmax(log_mass, axis=1)
        reported = target.conditional_probs(m, replicated).reshape(n_states, n_atoms, n_atoms)

        deviation = np.max(np.abs(reported - expected[:, np.newaxis, :]), axis=(1, 2))
        max_dev = max(max_dev, float(deviation.max()))
        failures.extend((int(i), m, float(deviation[i])) for i in np.flatnonzero(deviation > tol))

    if verbose:
        log(f"Checked {n_states} states of {type(target).__name__}: max deviation {max_dev:.3e}")

    return TargetDiagnostic(max_deviation=max_dev, n_states_checked=n_states, failures=failures)
