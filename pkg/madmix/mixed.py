"""
Mixed MAD Mix
====================================
MixFlow over a discrete-continuous target. One flow step applies an uncorrected Hamiltonian map
(leapfrog followed by an inverse-CDF momentum refresh driven by a single uniform) to the
continuous block, then a MAD pass to the discrete block with conditionals given the updated
continuous values.
"""
import abc
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import logsumexp

from madmix.discrete import (
    AugmentedState,
    DiscretePMF,
    FullConditionalTarget,
    ONE_MINUS,
    checked_uniform,
    clamp_uniform,
)
from madmix.mad import DEFAULT_XI, as_shift, mad_forward, mad_inverse
from madmix.utils.dataset import convert_to_df
from madmix.utils.metrics import mean_and_standard_error

MAX_INTEGRATION_TIME = 10.0
_QUANTILE_FLOOR = 1e-300
_MOMENTA = {"laplace": stats.laplace(), "gaussian": stats.norm()}


@dataclass
class MixedState:
    """
    Continuous latents ``x_c`` with momenta ``m`` and refresh uniform ``u_c``; discrete ``x_d`` with
    uniforms ``u_d``.
    """

    x_c: np.ndarray
    m: np.ndarray
    u_c: float
    x_d: np.ndarray
    u_d: np.ndarray

    def __post_init__(self):
        self.x_c = np.asarray(self.x_c, dtype=float).ravel()
        self.m = np.asarray(self.m, dtype=float).ravel()
        self.u_c = float(checked_uniform(self.u_c))
        self.x_d = np.asarray(self.x_d, dtype=np.int64).ravel()
        self.u_d = checked_uniform(np.asarray(self.u_d, dtype=float).ravel())
        if self.x_c.shape != self.m.shape:
            raise ValueError(f"Continuous state and momentum shapes differ: {self.x_c.shape} vs {self.m.shape}.")
        if self.x_d.shape != self.u_d.shape:
            raise ValueError(f"Discrete state and uniform shapes differ: {self.x_d.shape} vs {self.u_d.shape}.")

    def copy(self):
        return MixedState(self.x_c.copy(), self.m.copy(), self.u_c, self.x_d.copy(), self.u_d.copy())


@dataclass
class HamiltonianConfig:
    """
    Settings of the uncorrected Hamiltonian map.

    Parameters
    ----------
    leapfrog_steps: int, default=10
        Number of leapfrog steps ``L`` per flow step.

    step_size: float, default=0.05
        Leapfrog step ``eps``. ``eps * L`` must not exceed 10.

    momentum: str, default="laplace"
        Momentum base distribution, ``"laplace"`` or ``"gaussian"`` (unit scale).

    xi_h: float, default=pi/16
        Shift of the refresh uniform.

    offsets: array-like, default=None
        Per-coordinate refresh offsets ``c_i``; defaults to ``frac(i * sqrt(2))`` for ``i = 1..M_c``.
    """

    leapfrog_steps: int = 10
    step_size: float = 0.05
    momentum: str = "laplace"
    xi_h: float = DEFAULT_XI
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.leapfrog_steps) < 1:
            raise ValueError(f"Leapfrog steps must be a positive integer, got {self.leapfrog_steps}.")
        if self.step_size < 0 or not np.isfinite(self.step_size):
            raise ValueError(f"Step size must be a nonnegative real, got {self.step_size}.")
        if self.step_size * self.leapfrog_steps > MAX_INTEGRATION_TIME:
            raise ValueError(f"eps * L = {self.step_size * self.leapfrog_steps} exceeds {MAX_INTEGRATION_TIME}.")
        if self.momentum not in _MOMENTA:
            raise ValueError(f"Unknown momentum family '{self.momentum}'. Choose one of {sorted(_MOMENTA)}.")
        self.leapfrog_steps = int(self.leapfrog_steps)
        if self.offsets is not None:
            self.offsets = np.asarray(self.offsets, dtype=float)

    @property
    def distribution(self):
        return _MOMENTA[self.momentum]

    def offsets_for(self, dim):
        if self.offsets is not None:
            if self.offsets.size != dim:
                raise ValueError(f"Expected {dim} refresh offsets, got {self.offsets.size}.")
            return self.offsets
        return np.mod(np.arange(1, dim + 1) * np.sqrt(2.0), 1.0)

    def kinetic_gradient(self, m):
        return np.sign(m) if self.momentum == "laplace" else m

    def momentum_log_density(self, m):
        return float(np.sum(self.distribution.logpdf(m)))

    def to_dict(self):
        return {
            "leapfrog_steps": self.leapfrog_steps,
            "step_size": self.step_size,
            "momentum": self.momentum,
            "xi_h": self.xi_h,
            "offsets": None if self.offsets is None else self.offsets.tolist(),
        }


class MixedTarget(abc.ABC):
    """
    Density ``pi(x_c, x_d)`` on ``R^{M_c} x prod {1..K_m}``, with ``x_c`` already in unconstrained
    coordinates (log-Jacobians of the reparametrization included in the density).
    """

    def __init__(self, dim_continuous: int, support_sizes: Sequence[int]):
        self.dim_continuous = int(dim_continuous)
        self.support_sizes = tuple(int(k) for k in support_sizes)

    @property
    def dim_discrete(self):
        return len(self.support_sizes)

    @abc.abstractmethod
    def unnormalized_log_density(self, x_c: np.ndarray, x_d: np.ndarray) -> float:
        """Log-density up to an additive constant."""

    @abc.abstractmethod
    def score(self, x_c: np.ndarray, x_d: np.ndarray) -> np.ndarray:
        """Gradient of :meth:`unnormalized_log_density` with respect to ``x_c``."""

    @abc.abstractmethod
    def discrete_conditional_probs(self, m: int, x_c: np.ndarray, x_d: np.ndarray) -> np.ndarray:
        """Normalized full conditional of discrete coordinate ``m``."""

    @abc.abstractmethod
    def initial_point(self) -> Tuple[np.ndarray, np.ndarray]:
        """``(x_c, x_d)`` at which flows, references and chains start."""

    def discrete_conditional(self, m, x_c, x_d) -> DiscretePMF:
        return DiscretePMF(self.discrete_conditional_probs(m, x_c, x_d))

    def reference_discrete_probs(self, x_c, x_d) -> List[np.ndarray]:
        """Per-coordinate categorical probabilities of the default reference on ``x_d``."""
        return [np.full(k, 1.0 / k) for k in self.support_sizes]

    def summary_statistics(self, x_c, x_d) -> dict:
        """Named scalar functionals of one state, averaged into posterior summaries."""
        return {f"xc{i}": float(v) for i, v in enumerate(np.asarray(x_c))}

    def gibbs_update(self, x_c, x_d, rng) -> Tuple[np.ndarray, np.ndarray]:
        """One systematic-scan Gibbs sweep over every block."""
        raise ValueError(f"{type(self).__name__} has no Gibbs sampler.")

    def conditioned(self, x_c) -> "ConditionedTarget":
        return ConditionedTarget(self, x_c)


class ConditionedTarget(FullConditionalTarget):
    """The discrete block of a :class:`MixedTarget` with ``x_c`` held fixed."""

    def __init__(self, target: MixedTarget, x_c):
        super().__init__(target.support_sizes)
        self.mixed_target = target
        self.x_c = np.asarray(x_c, dtype=float)

    def conditional_probs(self, m, x):
        return np.stack([self.mixed_target.discrete_conditional_probs(m, self.x_c, row) for row in np.atleast_2d(x)])

    def unnormalized_log_mass(self, x):
        return np.array([self.mixed_target.unnormalized_log_density(self.x_c, row) for row in np.atleast_2d(x)])


def _checked_score(target, x_c, x_d):
    grad = np.asarray(target.score(x_c, x_d), dtype=float)
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad)).tolist()
        raise FloatingPointError(f"Non-finite score at continuous coordinates {bad}.")
    return grad


def leapfrog(state: MixedState, target: MixedTarget, cfg: HamiltonianConfig, reverse=False) -> MixedState:
    """
    ``L`` leapfrog steps on ``(x_c, m)`` with potential ``-log pi(x_c | x_d)`` and kinetic energy
    ``-log r_0(m)``. Volume preserving; ``reverse=True`` integrates with ``-eps`` and undoes a forward call.
    """
    eps = -cfg.step_size if reverse else cfg.step_size
    x, m = state.x_c.copy(), state.m.copy()
    grad = _checked_score(target, x, state.x_d)
    for _ in range(cfg.leapfrog_steps):
        m = m + 0.5 * eps * grad
        x = x + eps * cfg.kinetic_gradient(m)
        grad = _checked_score(target, x, state.x_d)
        m = m + 0.5 * eps * grad
    return replace(state, x_c=x, m=m)


def momentum_refresh(state: MixedState, cfg: HamiltonianConfig) -> Tuple[MixedState, float]:
    """
    Inverse-CDF refresh ``m'_i = Q_0((R_0(m_i) + u_c + c_i) mod 1)`` followed by ``u_c' = (u_c + xi_h) mod 1``.

    Returns the refreshed state and ``sum_i log r_0(m_i) - log r_0(m'_i)``.
    """
    dist = cfg.distribution
    rho = clamp_uniform(dist.cdf(state.m))
    shifted = np.clip(np.mod(rho + state.u_c + cfg.offsets_for(state.m.size), 1.0), _QUANTILE_FLOOR, ONE_MINUS)
    m_new = dist.ppf(shifted)
    u_c = float(clamp_uniform(np.mod(state.u_c + cfg.xi_h, 1.0)))
    log_jac = float(np.sum(dist.logpdf(state.m)) - np.sum(dist.logpdf(m_new)))
    return replace(state, m=m_new, u_c=u_c), log_jac


def refresh_inverse(state: MixedState, cfg: HamiltonianConfig) -> Tuple[MixedState, float]:
    """Undoes :func:`momentum_refresh`; the log-Jacobian returned is that of the inverse map."""
    dist = cfg.distribution
    u_c = float(clamp_uniform(np.mod(state.u_c - cfg.xi_h, 1.0)))
    rho = clamp_uniform(dist.cdf(state.m))
    shifted = np.clip(np.mod(rho - u_c - cfg.offsets_for(state.m.size), 1.0), _QUANTILE_FLOOR, ONE_MINUS)
    m_old = dist.ppf(shifted)
    log_jac = float(np.sum(dist.logpdf(state.m)) - np.sum(dist.logpdf(m_old)))
    return replace(state, m=m_old, u_c=u_c), log_jac


def hamiltonian_forward(state, target, cfg):
    return momentum_refresh(leapfrog(state, target, cfg), cfg)


def hamiltonian_inverse(state, target, cfg):
    state, log_jac = refresh_inverse(state, cfg)
    return leapfrog(state, target, cfg, reverse=True), log_jac


def _discrete_step(state, target, xi, inverse):
    step = mad_inverse if inverse else mad_forward
    result = step(AugmentedState(state.x_d, state.u_d), target.conditioned(state.x_c), xi)
    return replace(state, x_d=result.state.x, u_d=result.state.u), result.log_jacobian


def mixed_forward(state: MixedState, target: MixedTarget, cfg: HamiltonianConfig, xi=DEFAULT_XI):
    """
    One flow step: the Hamiltonian map on ``(x_c, m, u_c)`` then a MAD pass on ``(x_d, u_d)``.

    Each block map touches only its own fields. Returns the new state and the total log-Jacobian.
    """
    log_jac = 0.0
    if target.dim_continuous:
        state, lj = hamiltonian_forward(state, target, cfg)
        log_jac += lj
    if target.dim_discrete:
        state, lj = _discrete_step(state, target, as_shift(xi), inverse=False)
        log_jac += lj
    return state, log_jac


def mixed_inverse(state: MixedState, target: MixedTarget, cfg: HamiltonianConfig, xi=DEFAULT_XI):
    """Inverse of :func:`mixed_forward`; returns the preimage and the inverse map's log-Jacobian."""
    log_jac = 0.0
    if target.dim_discrete:
        state, lj = _discrete_step(state, target, as_shift(xi), inverse=True)
        log_jac += lj
    if target.dim_continuous:
        state, lj = hamiltonian_inverse(state, target, cfg)
        log_jac += lj
    return state, log_jac


class MixedReference:
    """
    Diagonal Gaussian on ``x_c``, the momentum base on ``m``, uniforms on ``u_c`` and ``u_d``
    and independent categoricals on ``x_d``.
    """

    def __init__(
        self, target: MixedTarget, cfg: HamiltonianConfig, mean=None, scale=0.5, discrete_probs=None, floor=1e-3
    ):
        x_c0, x_d0 = target.initial_point()
        self.mean = np.asarray(x_c0 if mean is None else mean, dtype=float)
        self.scale = np.broadcast_to(np.asarray(scale, dtype=float), self.mean.shape).copy()
        if np.any(self.scale <= 0):
            raise ValueError("Reference scales must be positive.")
        probs = target.reference_discrete_probs(x_c0, x_d0) if discrete_probs is None else discrete_probs
        self.discrete_probs = []
        for p in probs:
            p = np.maximum(np.asarray(p, dtype=float), floor)
            self.discrete_probs.append(p / p.sum())
        self.cfg = cfg

    def sample(self, rng) -> MixedState:
        x_c = self.mean + self.scale * rng.standard_normal(self.mean.size)
        m = self.cfg.distribution.rvs(size=self.mean.size, random_state=rng)
        x_d = np.array([rng.choice(p.size, p=p) + 1 for p in self.discrete_probs], dtype=np.int64)
        return MixedState(x_c, m, rng.random(), x_d, rng.random(x_d.size))

    def log_density(self, state: MixedState) -> float:
        log_q = float(np.sum(stats.norm.logpdf(state.x_c, loc=self.mean, scale=self.scale)))
        log_q += self.cfg.momentum_log_density(state.m)
        log_q += float(sum(np.log(p[x - 1]) for p, x in zip(self.discrete_probs, state.x_d)))
        return log_q


class MixedMadMixFlow:
    """Uniform mixture of ``N`` repeated mixed flow steps applied to a :class:`MixedReference`."""

    def __init__(
        self, target: MixedTarget, reference=None, n_flow=100, config=None, xi=DEFAULT_XI, logger=None, verbose=False
    ):
        """
        MixedMadMixFlow constructor.

        Parameters
        ----------
        target: MixedTarget
            Discrete-continuous target.

        reference: MixedReference, default=None
            Reference distribution; built around ``target.initial_point()`` when None.

        n_flow: int, default=100
            Flow length ``N``.

        config: HamiltonianConfig, default=None
            Leapfrog and refresh settings.

        xi: float, default=pi/16
            Shift of the MAD map on the discrete block.

        logger: Logger object, default=None
            A logger object to log messages to. If none is given, the print() method will be used to log messages.

        verbose: bool, default=False
            Whether to log progress messages.
        """
        if int(n_flow) < 1:
            raise ValueError(f"Flow length must be at least 1, got {n_flow}.")
        self.target = target
        self.config = config if config is not None else HamiltonianConfig()
        self.reference = reference if reference is not None else MixedReference(target, self.config)
        self.n_flow = int(n_flow)
        self.xi = as_shift(xi)
        self.logger = logger
        self.verbose = verbose

    def log_density(self, state: MixedState) -> float:
        weights = np.empty(self.n_flow)
        weights[0] = self.reference.log_density(state)
        cumulative = 0.0
        for n in range(1, self.n_flow):
            state, log_jac = mixed_inverse(state, self.target, self.config, self.xi)
            cumulative -= log_jac
            weights[n] = self.reference.log_density(state) - cumulative
        return float(logsumexp(weights) - np.log(self.n_flow))

    def sample(self, seed=None, rng=None) -> MixedState:
        rng = rng if rng is not None else np.random.default_rng(seed)
        steps = rng.integers(0, self.n_flow)
        state = self.reference.sample(rng)
        for _ in range(steps):
            state, _ = mixed_forward(state, self.target, self.config, self.xi)
        return state

    def sample_many(self, n_samples, seed=None) -> List[MixedState]:
        rng = np.random.default_rng(seed)
        return [self.sample(rng=rng) for _ in range(n_samples)]

    def augmented_log_target(self, state: MixedState) -> float:
        """``log pi(x_c, x_d) + log r(m)``; the uniforms contribute nothing."""
        return self.target.unnormalized_log_density(state.x_c, state.x_d) + self.config.momentum_log_density(state.m)

    def elbo(self, n_samples=100, seed=None):
        """Monte Carlo ELBO with its standard error."""
        if n_samples < 2:
            raise ValueError("The ELBO standard error needs at least 2 samples.")
        draws = self.sample_many(n_samples, seed=seed)
        terms = [self.augmented_log_target(s) - self.log_density(s) for s in draws]
        estimate, se = mean_and_standard_error(terms)
        if self.verbose:
            (self.logger.log if self.logger else print)(f"Mixed ELBO (N={self.n_flow}): {estimate:.4f} +/- {se:.4f}")
        return estimate, se

    def samples_frame(self, samples: List[MixedState]) -> pd.DataFrame:
        """Continuous coordinates as float columns ``xc*``, discrete ones as integer columns ``xd*``."""
        x_c = np.array([s.x_c for s in samples], dtype=float).reshape(len(samples), self.target.dim_continuous)
        x_d = np.array([s.x_d for s in samples], dtype=np.int64).reshape(len(samples), self.target.dim_discrete)
        frame = convert_to_df(x_c, prefix="xc")
        for j in range(x_d.shape[1]):
            frame[f"xd{j}"] = x_d[:, j]
        return frame


def mixed_log_density(flow: MixedMadMixFlow, state: MixedState) -> float:
    return flow.log_density(state)


def mixed_sample(flow: MixedMadMixFlow, seed=None) -> MixedState:
    return flow.sample(seed=seed)
