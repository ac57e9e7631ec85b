"""
Gibbs sampling
====================================
Systematic-scan Gibbs sampler for discrete targets (vectorized over independent chains) and for
mixed targets (one chain, each block drawn from its exact conditional).
"""
from typing import List, Optional

import numpy as np
import pandas as pd

from madmix.discrete import FullConditionalTarget, batch_quantile, padded_cdf
from madmix.mixed import MixedTarget
from madmix.utils.dataset import convert_to_df


class GibbsChain:
    """Gibbs sampler state machine."""

    def __init__(self, target, init=None, n_chains=1, seed=None, logger=None, verbose=False):
        """
        GibbsChain constructor.

        Parameters
        ----------
        target: FullConditionalTarget or MixedTarget
            Target to sample.

        init: array-like or tuple, default=None
            Initial state: a batch of shape (n_chains, M) (or a single state broadcast to every chain)
            for discrete targets, ``(x_c, x_d)`` for mixed targets. Uniform random states and
            ``target.initial_point()`` are used when None.

        n_chains: int, default=1
            Number of independent chains for discrete targets. Mixed targets run a single chain.

        seed: int, default=None
            Seed of the chain's generator.

        logger: Logger object, default=None
            A logger object to log messages to. If none is given, the print() method will be used to log messages.

        verbose: bool, default=False
            Whether to log progress messages.
        """
        self.target = target
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.n_sweeps = 0
        self.logger = logger
        self.verbose = verbose
        self.is_mixed = isinstance(target, MixedTarget)

        if self.is_mixed:
            x_c, x_d = target.initial_point() if init is None else init
            self.state = (np.asarray(x_c, dtype=float).copy(), np.asarray(x_d, dtype=np.int64).copy())
            self.n_chains = 1
        else:
            self.n_chains = int(n_chains)
            if init is None:
                init = np.stack([self.rng.integers(1, k + 1, size=self.n_chains) for k in target.support_sizes], axis=1)
            init = np.array(np.broadcast_to(np.asarray(init, dtype=np.int64), (self.n_chains, target.dim)))
            target.check_state(init)
            self.state = init

    def sweep(self, visit_order: Optional[List[int]] = None):
        """One sweep over coordinates ``0..M-1`` using the latest values; returns the new state."""
        if self.is_mixed:
            self.state = self.target.gibbs_update(*self.state, self.rng)
        else:
            x = self.state
            for m in range(self.target.dim):
                if visit_order is not None:
                    visit_order.append(m)
                cdf = padded_cdf(self.target.conditional_probs(m, x))
                x[:, m] = batch_quantile(cdf, self.rng.random(self.n_chains))
        self.n_sweeps += 1
        return self.state

    def run(self, n_sweeps, burn_in=0, thin=1):
        """
        Runs the chain and collects states.

        Returns
        -------
        samples: np.ndarray of shape (n_kept * n_chains, M) for discrete targets, or a list of
            ``(x_c, x_d)`` tuples for mixed targets.
        """
        kept = []
        for i in range(burn_in + n_sweeps):
            state = self.sweep()
            if i >= burn_in and (i - burn_in) % thin == 0:
                kept.append((state[0].copy(), state[1].copy()) if self.is_mixed else state.copy())
            if self.verbose and (i + 1) % 1000 == 0:
                (self.logger.log if self.logger else print)(f"Gibbs sweep {i + 1}/{burn_in + n_sweeps}")
        if self.is_mixed:
            return kept
        return np.concatenate(kept, axis=0) if kept else np.empty((0, self.target.dim), dtype=np.int64)

    def samples_frame(self, samples) -> pd.DataFrame:
        """Discrete samples as integer columns ``x*``; mixed samples as ``xc*`` floats and ``xd*`` integers."""
        if not self.is_mixed:
            return convert_to_df(np.asarray(samples))
        x_c = np.array([s[0] for s in samples], dtype=float)
        frame = convert_to_df(x_c, prefix="xc")
        x_d = np.array([s[1] for s in samples], dtype=np.int64)
        for j in range(x_d.shape[1]):
            frame[f"xd{j}"] = x_d[:, j]
        return frame


def gibbs_sweep(chain: GibbsChain):
    return chain.sweep()
