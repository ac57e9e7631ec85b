"""
Spike-and-slab linear regression
====================================
``y ~ N(X beta, sigma^2 I)`` with ``beta_p = 0`` when ``gamma_p = 0`` and ``beta_p ~ N(0, sigma^2 tau^2)``
otherwise; ``gamma_p ~ Bern(theta)``, ``theta ~ Beta(a, b)``, ``tau^2 ~ InvGam(1/2, s^2/2)`` and
``sigma^2 ~ InvGam(alpha1, alpha2)``.

The continuous block is ``(theta_u, tau2_u, sigma2_u, beta_1..beta_P)`` with ``theta = expit(theta_u)``,
``tau^2 = exp(tau2_u)`` and ``sigma^2 = exp(sigma2_u)``. For the mixed flow every ``beta_p`` is kept;
coefficients whose indicator is off carry the slab as a pseudo-prior, which leaves the marginal
posterior of the active model unchanged.
"""
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve
from scipy.special import betaln, expit, log_expit, logit

from madmix.discrete import DiscretePMF
from madmix.mixed import MixedTarget

SIGMA2_LAWS = ("inverse_gamma", "gamma")
SPIKESLAB_BLOCKS = ("tau2", "sigma2", "theta", "beta", "gamma")
_MAX_LOG_ODDS = 700.0


@dataclass
class SpikeSlabState:
    theta: float
    tau2: float
    sigma2: float
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def active(self):
        return self.gamma.astype(bool)

    @property
    def n_active(self):
        return int(self.gamma.sum())


def _binary_probs(log_odds):
    """``(1 - xi, xi)`` with ``xi = expit(log_odds)``, both strictly positive."""
    log_odds = np.clip(log_odds, -_MAX_LOG_ODDS, _MAX_LOG_ODDS)
    return np.array([np.exp(log_expit(-log_odds)), np.exp(log_expit(log_odds))])


class SpikeSlabModel(MixedTarget):
    """Spike-and-slab regression with indicators ``gamma`` as discrete coordinates (atom 1 off, atom 2 on)."""

    def __init__(self, X, y, alpha1=0.1, alpha2=0.1, s2=0.5, a=1.0, b=1.0, sigma2_law="inverse_gamma"):
        """
        SpikeSlabModel constructor.

        Parameters
        ----------
        X: array-like of shape (N, P)
            Design matrix.

        y: array-like of shape (N,)
            Responses.

        alpha1, alpha2: float, default=0.1
            Shape and scale of the noise-variance prior.

        s2: float, default=0.5
            Scale of the slab-variance prior.

        a, b: float, default=1.0
            Beta prior on the inclusion probability.

        sigma2_law: str, default="inverse_gamma"
            Law used for the noise-variance conditional: ``"inverse_gamma"`` (conjugate) or ``"gamma"``
            with rate ``alpha2 + RSS/2`` and shape ``alpha1 + N/2``.
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"Design matrix of shape {X.shape} does not match {y.size} responses.")
        if sigma2_law not in SIGMA2_LAWS:
            raise ValueError(f"Unknown sigma^2 law '{sigma2_law}'. Choose one of {SIGMA2_LAWS}.")
        if min(alpha1, alpha2, s2, a, b) <= 0:
            raise ValueError("Spike-and-slab hyperparameters must be positive.")

        self.X, self.y = X, y
        self.n_obs, self.n_features = X.shape
        self.alpha1, self.alpha2, self.s2, self.a, self.b = float(alpha1), float(alpha2), float(s2), float(a), float(b)
        self.sigma2_law = sigma2_law
        self.gram_diag = np.sum(X**2, axis=0)
        super().__init__(3 + self.n_features, (2,) * self.n_features)

    def unpack(self, x_c, x_d) -> SpikeSlabState:
        x_c = np.asarray(x_c, dtype=float)
        return SpikeSlabState(
            theta=float(expit(x_c[0])),
            tau2=float(np.exp(x_c[1])),
            sigma2=float(np.exp(x_c[2])),
            beta=x_c[3:].copy(),
            gamma=np.asarray(x_d, dtype=np.int64) - 1,
        )

    def pack(self, theta, tau2, sigma2, beta):
        return np.concatenate([[logit(theta), np.log(tau2), np.log(sigma2)], np.asarray(beta, dtype=float)])

    def summary_statistics(self, x_c, x_d):
        s = self.unpack(x_c, x_d)
        out = {"theta": s.theta, "tau2": s.tau2, "sigma2": s.sigma2}
        out.update({f"gamma{p}": float(s.gamma[p]) for p in range(self.n_features)})
        out.update({f"beta{p}": float(s.beta[p] * s.gamma[p]) for p in range(self.n_features)})
        return out

    def residual(self, state: SpikeSlabState):
        return self.y - self.X @ (state.beta * state.gamma)

    def _log_posterior(self, x_c, x_d, augmented):
        s = self.unpack(x_c, x_d)
        G = s.n_active
        slab = s.beta if augmented else s.beta[s.active]
        n_slab = slab.size
        rss = float(np.sum(self.residual(s) ** 2))

        log_p = (self.a - 1 + G) * np.log(s.theta) + (self.b - 1 + self.n_features - G) * np.log1p(-s.theta)
        log_p -= betaln(self.a, self.b)
        log_p += stats.invgamma.logpdf(s.tau2, 0.5, scale=self.s2 / 2)
        log_p += stats.invgamma.logpdf(s.sigma2, self.alpha1, scale=self.alpha2)
        log_p += -0.5 * n_slab * np.log(2 * np.pi * s.sigma2 * s.tau2) - np.sum(slab**2) / (2 * s.sigma2 * s.tau2)
        log_p += -0.5 * self.n_obs * np.log(2 * np.pi * s.sigma2) - rss / (2 * s.sigma2)
        # logit and log reparametrizations
        log_p += np.log(s.theta) + np.log1p(-s.theta) + np.log(s.tau2) + np.log(s.sigma2)
        return float(log_p)

    def _score(self, x_c, x_d, augmented):
        s = self.unpack(x_c, x_d)
        G = s.n_active
        slab = s.beta if augmented else s.beta[s.active]
        n_slab, slab_sq = slab.size, float(np.sum(slab**2))
        resid = self.residual(s)
        rss = float(np.sum(resid**2))

        grad_theta = (self.a + G) * (1 - s.theta) - (self.b + self.n_features - G) * s.theta
        grad_tau2 = -(1 + n_slab) / 2 + (self.s2 / 2 + slab_sq / (2 * s.sigma2)) / s.tau2
        sigma2_scale = self.alpha2 + rss / 2 + slab_sq / (2 * s.tau2)
        grad_sigma2 = -self.alpha1 - (self.n_obs + n_slab) / 2 + sigma2_scale / s.sigma2

        grad_beta = (self.X.T @ resid) / s.sigma2 * s.gamma - s.beta / (s.sigma2 * s.tau2)
        if not augmented:
            grad_beta = grad_beta[s.active]
        gradient = np.concatenate([[grad_theta, grad_tau2, grad_sigma2], grad_beta])
        if not np.all(np.isfinite(gradient)):
            bad = np.flatnonzero(~np.isfinite(gradient)).tolist()
            raise FloatingPointError(f"Non-finite spike-and-slab score at coordinates {bad}.")
        return gradient

    def unnormalized_log_density(self, x_c, x_d):
        return self._log_posterior(x_c, x_d, augmented=True)

    def posterior_log_density(self, x_c, x_d):
        """Log posterior over ``(theta_u, tau2_u, sigma2_u, beta_active, gamma)``; inactive ``beta`` are ignored."""
        return self._log_posterior(x_c, x_d, augmented=False)

    def score(self, x_c, x_d):
        return self._score(x_c, x_d, augmented=True)

    def discrete_conditional_probs(self, m, x_c, x_d):
        """Indicator conditional given ``beta_m`` (used by the MAD map on the augmented density)."""
        s = self.unpack(x_c, x_d)
        partial = s.gamma.copy()
        partial[m] = 0
        z = self.y - self.X @ (s.beta * partial)
        x_m, b_m = self.X[:, m], s.beta[m]
        log_odds = logit(s.theta) + (2 * b_m * (x_m @ z) - b_m**2 * self.gram_diag[m]) / (2 * s.sigma2)
        return _binary_probs(log_odds)

    def collapsed_inclusion_log_odds(self, m, state: SpikeSlabState):
        """Log-odds of ``gamma_m = 1`` with ``beta_m`` integrated out, plus ``(x_m^T z_m, precision)``."""
        partial = state.gamma.copy()
        partial[m] = 0
        z = self.y - self.X @ (state.beta * partial)
        xz = float(self.X[:, m] @ z)
        precision = self.gram_diag[m] + 1.0 / state.tau2
        log_odds = (
            logit(state.theta)
            - 0.5 * np.log(state.tau2)
            - 0.5 * np.log(precision)
            + xz**2 / (2 * state.sigma2 * precision)
        )
        return log_odds, xz, precision

    def initial_point(self):
        beta, *_ = np.linalg.lstsq(self.X, self.y, rcond=None)
        resid = self.y - self.X @ beta
        dof = max(self.n_obs - self.n_features, 1)
        sigma2 = max(float(resid @ resid) / dof, 1e-6)
        return self.pack(0.5, 1.0, sigma2, beta), np.full(self.n_features, 2, dtype=np.int64)

    def gibbs_update(self, x_c, x_d, rng):
        s = self.unpack(x_c, x_d)
        for p in range(self.n_features):
            log_odds, xz, precision = self.collapsed_inclusion_log_odds(p, s)
            s.gamma[p] = int(rng.random() < expit(log_odds))
            if s.gamma[p]:
                s.beta[p] = xz / precision + np.sqrt(s.sigma2 / precision) * rng.standard_normal()
            else:
                # pseudo-prior draw keeps the augmented chain on the same joint as the flow
                s.beta[p] = np.sqrt(s.sigma2 * s.tau2) * rng.standard_normal()

        x_c, x_d = self.pack(s.theta, s.tau2, s.sigma2, s.beta), s.gamma + 1
        if s.n_active:
            s.beta[s.active] = np.atleast_1d(spikeslab_conditionals(self, "beta", x_c, x_d).rvs(random_state=rng))
        x_c = self.pack(s.theta, s.tau2, s.sigma2, s.beta)
        s.tau2 = float(spikeslab_conditionals(self, "tau2", x_c, x_d).rvs(random_state=rng))
        x_c = self.pack(s.theta, s.tau2, s.sigma2, s.beta)
        s.sigma2 = float(spikeslab_conditionals(self, "sigma2", x_c, x_d).rvs(random_state=rng))
        x_c = self.pack(s.theta, s.tau2, s.sigma2, s.beta)
        theta = float(spikeslab_conditionals(self, "theta", x_c, x_d).rvs(random_state=rng))
        s.theta = float(np.clip(theta, 1e-12, 1 - 1e-12))
        return self.pack(s.theta, s.tau2, s.sigma2, s.beta), x_d


def spikeslab_score(model: SpikeSlabModel, x_c, x_d) -> np.ndarray:
    """
    Gradient of the reparametrized log posterior over ``(theta_u, tau2_u, sigma2_u, beta_active)``.

    The ``beta`` part has one entry per active coefficient and is empty when no indicator is on.
    """
    return model._score(x_c, x_d, augmented=False)


def spikeslab_conditionals(model: SpikeSlabModel, block, x_c, x_d, index=None):
    """
    Exact full conditional of one block.

    Parameters
    ----------
    model: SpikeSlabModel
        The regression model.

    block: str
        One of ``"tau2"``, ``"sigma2"``, ``"theta"``, ``"beta"`` or ``"gamma"``.

    x_c, x_d: array-like
        Current state.

    index: int, default=None
        Coefficient index for ``"gamma"``; all coefficients when None.

    Returns
    -------
    law: scipy frozen distribution, DiscretePMF or list of DiscretePMF
        ``"beta"`` gives a multivariate normal over the active coefficients (None when none is active);
        ``"gamma"`` gives ``(1 - xi_p, xi_p)`` with ``beta_p`` integrated out.
    """
    if block not in SPIKESLAB_BLOCKS:
        raise ValueError(f"Unknown spike-and-slab block '{block}'. Choose one of {SPIKESLAB_BLOCKS}.")
    s = model.unpack(x_c, x_d)
    G = s.n_active
    slab_sq = float(np.sum(s.beta[s.active] ** 2))

    if block == "tau2":
        return stats.invgamma(0.5 + G / 2, scale=model.s2 / 2 + slab_sq / (2 * s.sigma2))
    if block == "sigma2":
        rss = float(np.sum(model.residual(s) ** 2))
        if model.sigma2_law == "gamma":
            return stats.gamma(model.alpha1 + model.n_obs / 2, scale=1.0 / (model.alpha2 + rss / 2))
        shape = model.alpha1 + model.n_obs / 2 + G / 2
        return stats.invgamma(shape, scale=model.alpha2 + rss / 2 + slab_sq / (2 * s.tau2))
    if block == "theta":
        return stats.beta(model.a + G, model.b + model.n_features - G)
    if block == "beta":
        if G == 0:
            return None
        X_g = model.X[:, s.active]
        try:
            chol = cho_factor(X_g.T @ X_g + np.eye(G) / s.tau2, lower=True)
        except np.linalg.LinAlgError as err:
            raise FloatingPointError("Ridge matrix X_g^T X_g + I / tau^2 is numerically singular.") from err
        ridge = s.sigma2 * cho_solve(chol, np.eye(G))
        return stats.multivariate_normal(ridge @ X_g.T @ model.y / s.sigma2, ridge)

    indices = range(model.n_features) if index is None else [index]
    laws = [DiscretePMF(_binary_probs(model.collapsed_inclusion_log_odds(p, s)[0])) for p in indices]
    return laws[0] if index is not None else laws
