"""
MAD Mix
====================================
The core module of the MadMix project: the MixFlow variational family built on the MAD map,
with exact density evaluation, i.i.d. sampling, ELBO estimation, marginal PMF extraction and
KL-optimal weighting of two flows.
"""
import abc
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from madmix.discrete import AugmentedState, DiscretePMF, FullConditionalTarget
from madmix.mad import DEFAULT_XI, as_shift, mad_forward, mad_inverse
from madmix.utils.dataset import convert_to_df
from madmix.utils.metrics import mean_and_standard_error

ALPHA_CLIP = 1e-3
_PMF_CHUNK_ROWS = 200_000


class Reference(abc.ABC):
    """Reference distribution ``q_0`` on the augmented space ``X x [0, 1)^M``."""

    def __init__(self, support_sizes: Sequence[int]):
        self.support_sizes = tuple(int(k) for k in support_sizes)

    @property
    def dim(self):
        return len(self.support_sizes)

    @abc.abstractmethod
    def sample(self, n_samples: int, rng: np.random.Generator) -> AugmentedState:
        """Draws a batch of ``n_samples`` augmented states."""

    @abc.abstractmethod
    def log_mass(self, x: np.ndarray) -> np.ndarray:
        """Log-mass of the discrete part for a batch of states."""

    def log_density(self, state: AugmentedState):
        """Augmented log-density; uniforms contribute zero inside ``[0, 1)``."""
        x, u = state.as_batch()
        out = self.log_mass(x)
        out = np.where(np.all((u >= 0) & (u < 1), axis=1), out, -np.inf)
        return out if state.is_batch else float(out[0])


class UniformReference(Reference):
    """Uniform over the product support times independent uniforms."""

    def sample(self, n_samples, rng):
        x = np.stack([rng.integers(1, k + 1, size=n_samples) for k in self.support_sizes], axis=1)
        return AugmentedState(x, rng.random((n_samples, self.dim)))

    def log_mass(self, x):
        return np.full(np.atleast_2d(x).shape[0], -np.sum(np.log(self.support_sizes)))


class CategoricalReference(Reference):
    """Independent categorical coordinates times independent uniforms. Zero-probability atoms are allowed."""

    def __init__(self, probs: Sequence[Sequence[float]]):
        self.probs = []
        for p in probs:
            p = np.asarray(p, dtype=float)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("Each reference factor must be a normalized, nonnegative probability vector.")
            self.probs.append(p)
        super().__init__([p.size for p in self.probs])
        with np.errstate(divide="ignore"):
            self._log_probs = [np.log(p) for p in self.probs]

    def sample(self, n_samples, rng):
        x = np.stack([rng.choice(p.size, size=n_samples, p=p) + 1 for p in self.probs], axis=1)
        return AugmentedState(x, rng.random((n_samples, self.dim)))

    def log_mass(self, x):
        x = np.atleast_2d(x)
        return np.sum([lp[x[:, m] - 1] for m, lp in enumerate(self._log_probs)], axis=0)


class MadMixFlow:
    """
    Uniform mixture of ``N`` repeated MAD pushforwards of a reference,
    ``q_N = (1/N) sum_{n<N} T^n q_0``.
    """

    def __init__(
        self,
        target: FullConditionalTarget,
        reference: Optional[Reference] = None,
        n_flow=500,
        xi=DEFAULT_XI,
        logger=None,
        verbose=False,
    ):
        """
        MadMixFlow constructor.

        Parameters
        ----------
        target: FullConditionalTarget
            Discrete target whose full conditionals drive the MAD map.

        reference: Reference, default=None
            Reference ``q_0``. Defaults to :class:`UniformReference` over the target support.

        n_flow: int, default=500
            Number of mixture components ``N`` (flow length).

        xi: float or ShiftParam, default=pi/16
            Shift of the MAD map.

        logger: Logger object, default=None
            A logger object to log messages to. If none is given, the print() method will be used to log messages.

        verbose: bool, default=False
            Whether to log progress messages.
        """
        if int(n_flow) < 1:
            raise ValueError(f"Flow length must be at least 1, got {n_flow}.")
        self.target = target
        self.reference = reference if reference is not None else UniformReference(target.support_sizes)
        if self.reference.support_sizes != target.support_sizes:
            raise ValueError("Reference and target supports differ.")
        self.n_flow = int(n_flow)
        self.xi = as_shift(xi)
        self.logger = logger
        self.verbose = verbose

    def _log(self, *args):
        if self.verbose:
            (self.logger.log if self.logger else print)(*args)

    def orbit_log_weights(self, state: AugmentedState, cached=True) -> np.ndarray:
        """
        The ``N`` orbit terms ``log q_0(T^{-n} s) - sum_{j<=n} log J(T^{-j} s)``, shape ``(N, n_states)``.

        With ``cached=False`` every term is recomputed from ``s`` by ``n`` fresh inverse passes. States whose
        uniforms leave ``[0, 1)`` get ``-inf`` everywhere.
        """
        x, u = state.as_batch()
        inside = np.all((u >= 0) & (u < 1), axis=1)
        u = np.where(inside[:, np.newaxis], u, 0.5)
        weights = self._orbit_terms(x, u, cached)
        weights[:, ~inside] = -np.inf
        return weights

    def _orbit_terms(self, x, u, cached):
        weights = np.empty((self.n_flow, x.shape[0]))
        if cached:
            current = AugmentedState(x, u)
            cumulative = np.zeros(x.shape[0])
            weights[0] = self.reference.log_density(current)
            for n in range(1, self.n_flow):
                result = mad_inverse(current, self.target, self.xi)
                current = result.state
                cumulative -= result.log_jacobian
                weights[n] = self.reference.log_density(current) - cumulative
            return weights

        for n in range(self.n_flow):
            current = AugmentedState(x, u)
            cumulative = np.zeros(x.shape[0])
            for _ in range(n):
                result = mad_inverse(current, self.target, self.xi)
                current = result.state
                cumulative -= result.log_jacobian
            weights[n] = self.reference.log_density(current) - cumulative
        return weights

    def log_density(self, state: AugmentedState):
        """
        Exact ``log q_N(x, u)`` from ``N - 1`` inverse passes and a log-sum-exp over the orbit.

        Parameters
        ----------
        state: AugmentedState
            Single state or batch.

        Returns
        -------
        log_q: float or np.ndarray of shape (n_states,)
        """
        out = logsumexp(self.orbit_log_weights(state), axis=0) - np.log(self.n_flow)
        return out if state.is_batch else float(out[0])

    def push(self, state: AugmentedState, steps: np.ndarray) -> AugmentedState:
        """Pushes row ``i`` of a batch through ``steps[i]`` forward passes."""
        x, u = state.as_batch()
        steps = np.broadcast_to(np.asarray(steps), (x.shape[0],))
        for k in range(int(steps.max(initial=0))):
            active = steps > k
            result = mad_forward(AugmentedState(x[active], u[active]), self.target, self.xi)
            x[active], u[active] = result.state.x, result.state.u
        return state.like(x, u)

    def sample(self, n_samples=None, seed=None, rng=None) -> AugmentedState:
        """
        Exact i.i.d. draws from ``q_N``: ``n ~ Unif{0..N-1}``, ``s ~ q_0``, then ``T^n s``.

        Returns a single state when ``n_samples`` is None and a batch otherwise.
        """
        rng = rng if rng is not None else np.random.default_rng(seed)
        n = 1 if n_samples is None else int(n_samples)
        steps = rng.integers(0, self.n_flow, size=n)
        batch = self.push(self.reference.sample(n, rng), steps)
        return AugmentedState(batch.x[0], batch.u[0]) if n_samples is None else batch

    def _target_log_mass(self, x, normalized):
        log_mass = self.target.unnormalized_log_mass(x)
        if normalized is None:
            normalized = self.target.has_log_mass and self.target.is_enumerable
        if normalized:
            log_mass = log_mass - self.target.log_normalizer()
        return log_mass

    def elbo(self, n_samples=1000, seed=None, normalized=None):
        """
        Monte Carlo ELBO ``E_q[log p(x) - log q_N(x, u)]``.

        Parameters
        ----------
        n_samples: int, default=1000
            Number of draws from ``q_N``. Must be at least 2.

        seed: int, default=None
            Seed for the draws.

        normalized: bool, default=None
            Whether to subtract ``log Z``. When None, the exact normalizer is used whenever the
            state space is enumerable, so that the ELBO equals ``-KL(q_N || pi)``.

        Returns
        -------
        (estimate, standard_error): tuple of float
        """
        if n_samples < 2:
            raise ValueError("The ELBO standard error needs at least 2 samples.")
        if not self.target.has_log_mass:
            raise ValueError(f"{type(self.target).__name__} has no tractable log-mass; the ELBO is unavailable.")

        draws = self.sample(n_samples, seed=seed)
        terms = self._target_log_mass(draws.x, normalized) - self.log_density(draws)
        estimate, se = mean_and_standard_error(terms)
        self._log(f"ELBO (N={self.n_flow}, {n_samples} samples): {estimate:.5f} +/- {se:.5f}")
        return estimate, se

    def exact_marginal_pmf(self, n_u_samples=1000, seed=None):
        """
        Discrete marginal ``q_N(x)`` for every state, averaging the joint density over uniform draws of ``u``.

        Parameters
        ----------
        n_u_samples: int, default=1000
            Number of ``u`` draws per state (shared across states).

        seed: int, default=None
            Seed for the ``u`` draws.

        Returns
        -------
        pmf: DiscretePMF
            Renormalized flattened PMF in ascending mixed-radix order.

        total: float
            Estimated total mass before renormalization.
        """
        states = self.target.enumerate_states()
        rng = np.random.default_rng(seed)
        u_draws = rng.random((n_u_samples, self.target.dim))

        per_chunk = max(1, _PMF_CHUNK_ROWS // n_u_samples)
        mass = np.empty(states.shape[0])
        for start in range(0, states.shape[0], per_chunk):
            chunk = states[start : start + per_chunk]
            x = np.repeat(chunk, n_u_samples, axis=0)
            u = np.tile(u_draws, (chunk.shape[0], 1))
            log_q = self.log_density(AugmentedState(x, u)).reshape(chunk.shape[0], n_u_samples)
            mass[start : start + chunk.shape[0]] = np.exp(logsumexp(log_q, axis=1) - np.log(n_u_samples))

        total = float(mass.sum())
        self._log(f"Marginal PMF over {states.shape[0]} states, pre-normalization mass {total:.6f}")
        return DiscretePMF(mass / total), total

    def pmf_frame(self, pmf: DiscretePMF) -> pd.DataFrame:
        """Flattened PMF as a frame with one column per coordinate plus ``probability``."""
        states = self.target.enumerate_states()
        frame = convert_to_df(states)
        frame["probability"] = pmf.probs
        return frame


def flow_length_grid(n_flow, n_points=5):
    """Up to ``n_points`` geometrically spaced flow lengths from 1 to ``n_flow``, both ends included."""
    if int(n_flow) < 1:
        raise ValueError(f"Flow length must be at least 1, got {n_flow}.")
    grid = np.geomspace(1, int(n_flow), num=min(int(n_flow), n_points))
    return np.unique(np.rint(grid).astype(int)).tolist()


def elbo_trace(target, flow_lengths, reference=None, xi=DEFAULT_XI, n_samples=1000, seed=None, normalized=None):
    """ELBO of ``q_N`` over a grid of flow lengths, as a frame with columns ``n, elbo, se``."""
    rows = []
    for n in flow_lengths:
        estimate, se = MadMixFlow(target, reference, n_flow=n, xi=xi).elbo(n_samples, seed=seed, normalized=normalized)
        rows.append({"n": int(n), "elbo": estimate, "se": se})
    return pd.DataFrame(rows, columns=["n", "elbo", "se"])


@dataclass
class WeightedPair:
    """Two-component mixture ``w q_{N,0} + (1 - w) q_{N,1}`` of flows sharing target and length."""

    flow0: MadMixFlow
    flow1: MadMixFlow
    w: float = 0.5

    def __post_init__(self):
        if self.flow0.target is not self.flow1.target:
            raise ValueError("Both flows of a WeightedPair must share the same target.")
        if self.flow0.n_flow != self.flow1.n_flow:
            raise ValueError("Both flows of a WeightedPair must share the same flow length.")
        if not 0.0 < self.w < 1.0:
            raise ValueError(f"Mixture weight must lie in (0, 1), got {self.w}.")

    @property
    def target(self):
        return self.flow0.target

    def log_density(self, state, w=None, cache=None):
        """Mixture log-density; ``cache`` may hold the precomputed component log-densities."""
        w = self.w if w is None else w
        lq0, lq1 = cache if cache is not None else (self.flow0.log_density(state), self.flow1.log_density(state))
        return np.logaddexp(np.log(w) + lq0, np.log1p(-w) + lq1)


def _kl_integrand(pair, draws, alpha):
    """Component log-densities and ``log q_alpha - log p`` at fixed draws."""
    cache = (pair.flow0.log_density(draws), pair.flow1.log_density(draws))
    return cache, pair.log_density(draws, w=alpha, cache=cache) - pair.target.unnormalized_log_mass(draws.x)


def weight_gradient(pair: WeightedPair, alpha, n_samples=100, rng=None, draws=None):
    """
    Monte Carlo estimate of ``d/d alpha KL(alpha q_0 + (1 - alpha) q_1 || pi)``, i.e.
    ``E_{q_0}[h] - E_{q_1}[h]`` with ``h = log(alpha q_0 + (1 - alpha) q_1) - log p``.

    Returns
    -------
    (gradient, standard_error): tuple of float
    """
    if draws is None:
        rng = rng if rng is not None else np.random.default_rng()
        draws = (pair.flow0.sample(n_samples, rng=rng), pair.flow1.sample(n_samples, rng=rng))
    _, h0 = _kl_integrand(pair, draws[0], alpha)
    _, h1 = _kl_integrand(pair, draws[1], alpha)
    gradient = float(h0.mean() - h1.mean())
    se = float(np.sqrt(h0.var(ddof=1) / h0.size + h1.var(ddof=1) / h1.size))
    if not np.isfinite(gradient):
        raise FloatingPointError(f"Non-finite weight gradient at alpha={alpha}.")
    return gradient, se


def weight_kl_estimate(pair: WeightedPair, alpha, draws):
    """Up-to-a-constant KL estimate ``alpha E_{q_0}[h] + (1 - alpha) E_{q_1}[h]`` at fixed draws."""
    _, h0 = _kl_integrand(pair, draws[0], alpha)
    _, h1 = _kl_integrand(pair, draws[1], alpha)
    return float(alpha * h0.mean() + (1 - alpha) * h1.mean())


def optimize_weight(
    pair: WeightedPair, step_size=0.01, n_iters=500, n_samples=100, seed=None, logger=None, verbose=False
):
    """
    Projected stochastic gradient descent on the mixture weight, fresh samples every iteration.

    Parameters
    ----------
    pair: WeightedPair
        Flows to mix; ``pair.w`` is the initial weight.

    step_size: float, default=0.01
        Fixed step size.

    n_iters: int, default=500
        Number of iterations.

    n_samples: int, default=100
        Draws per component per iteration.

    seed: int, default=None
        Seed for the draws.

    Returns
    -------
    alpha: float
        Final weight, within ``[1e-3, 1 - 1e-3]``.
    """
    log = logger.log if logger else print
    rng = np.random.default_rng(seed)
    alpha = float(np.clip(pair.w, ALPHA_CLIP, 1 - ALPHA_CLIP))
    pinned = 0
    for i in range(n_iters):
        gradient, _ = weight_gradient(pair, alpha, n_samples=n_samples, rng=rng)
        proposal = alpha - step_size * gradient
        if not np.isfinite(proposal):
            raise FloatingPointError(f"Weight iterate diverged at iteration {i} (alpha={alpha}, step={step_size}).")
        alpha = float(np.clip(proposal, ALPHA_CLIP, 1 - ALPHA_CLIP))
        pinned += alpha in (ALPHA_CLIP, 1 - ALPHA_CLIP)
        if verbose and (i + 1) % 100 == 0:
            log(f"Weight iteration {i + 1}: alpha={alpha:.4f}, gradient={gradient:.4f}")

    if pinned > n_iters // 2:
        log(
            f"Weight iterate pinned at the clip boundary in {pinned}/{n_iters} iterations; "
            "the step size may be too large."
        )
    return alpha
