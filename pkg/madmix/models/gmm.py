"""
Bayesian Gaussian mixture
====================================
Labels are discrete coordinates; weights, means and covariances form the continuous block in
unconstrained coordinates (additive log-ratio weights, Cholesky factors with log diagonal).
"""
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp, softmax
from sklearn.cluster import kmeans_plusplus

from madmix.discrete import DiscretePMF, batch_quantile, padded_cdf
from madmix.mixed import MixedTarget
from madmix.utils.linalg import (
    covariance_gradient_to_h,
    covariance_to_h,
    free_from_simplex,
    h_log_jacobian,
    h_log_jacobian_gradient,
    h_to_covariance,
    simplex_from_free,
    simplex_log_jacobian,
    tril_size,
    tril_to_vector,
    vector_to_tril,
)

COVARIANCE_PRIORS = ("conjugate", "printed")
GMM_BLOCKS = ("labels", "weights", "means", "covariances")


@dataclass
class GmmParameters:
    """Natural-space view of the continuous block."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    h_matrices: np.ndarray


@dataclass
class SufficientStatistics:
    counts: np.ndarray
    sums: np.ndarray
    centered_scatter: np.ndarray

    def cluster_mean(self, k):
        if self.counts[k] == 0:
            raise ValueError(f"Cluster {k} is empty; its mean and covariance conditionals are undefined.")
        return self.sums[k] / self.counts[k]


class GmmModel(MixedTarget):
    """
    ``y_n | x_n ~ N(mu_{x_n}, Sigma_{x_n})``, ``x_n ~ Cat(w)``, ``w ~ Dir(alpha)``.

    With ``covariance_prior="conjugate"`` the component parameters get a normal-inverse-Wishart prior
    ``mu_k | Sigma_k ~ N(m0_k, Sigma_k)``, ``Sigma_k ~ IW(S0_k, nu0)``. With ``"printed"`` the prior on
    ``(mu_k, Sigma_k)`` is the improper ``|Sigma_k|^{-1/2}``, whose conditionals are
    ``mu_k ~ N(ybar_k, Sigma_k / N_k)`` and ``Sigma_k ~ IW(S_k, N_k - D - 1)``.
    """

    def __init__(self, y, n_components=2, alpha=1.0, m0=None, S0=None, nu0=1.0, covariance_prior="conjugate", seed=0):
        """
        GmmModel constructor.

        Parameters
        ----------
        y: array-like of shape (n_observations, D)
            Observations.

        n_components: int, default=2
            Number of mixture components ``K``.

        alpha: float or array-like of shape (K,), default=1.0
            Dirichlet concentration.

        m0: array-like of shape (K, D), default=None
            Prior means; k-means++ centroids when None.

        S0: array-like of shape (D, D) or (K, D, D), default=None
            Inverse-Wishart scales; pooled within-cluster covariance around ``m0`` when None.

        nu0: float, default=1.0
            Inverse-Wishart degrees of freedom.

        covariance_prior: str, default="conjugate"
            ``"conjugate"`` or ``"printed"``.

        seed: int, default=0
            Seed for the k-means++ initialization.
        """
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, np.newaxis]
        if covariance_prior not in COVARIANCE_PRIORS:
            raise ValueError(f"Unknown covariance prior '{covariance_prior}'. Choose one of {COVARIANCE_PRIORS}.")
        K = int(n_components)
        if K < 1 or y.shape[0] < K:
            raise ValueError(f"Need 1 <= K <= number of observations, got K={K} with {y.shape[0]} observations.")

        self.y = y
        self.n_obs, self.D = y.shape
        self.K = K
        self.alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (K,)).copy()
        self.nu0 = float(nu0)
        self.covariance_prior = covariance_prior
        self.conjugate = covariance_prior == "conjugate"

        if m0 is None:
            m0, _ = kmeans_plusplus(y, n_clusters=K, random_state=seed)
        self.m0 = np.asarray(m0, dtype=float).reshape(K, self.D)

        nearest = self._nearest_centroid(self.m0)
        if S0 is None:
            centered = y - self.m0[nearest]
            S0 = centered.T @ centered / max(self.n_obs - K, 1) + 1e-6 * np.eye(self.D)
        S0 = np.asarray(S0, dtype=float)
        self.S0 = np.broadcast_to(S0, (K, self.D, self.D)).copy()
        self._initial_labels = nearest + 1

        self.n_weight = K - 1
        self.n_tril = tril_size(self.D)
        super().__init__(self.n_weight + K * self.D + K * self.n_tril, (K,) * self.n_obs)

        self._cache_key = None
        self._cache_log_resp = None

    def _nearest_centroid(self, centroids):
        distances = ((self.y[:, np.newaxis, :] - centroids[np.newaxis, :, :]) ** 2).sum(-1)
        return np.argmin(distances, axis=1)

    def pack(self, weights, means, covariances) -> np.ndarray:
        """Unconstrained vector from natural parameters."""
        h = [tril_to_vector(covariance_to_h(S)) for S in np.asarray(covariances)]
        return np.concatenate([free_from_simplex(weights), np.asarray(means, dtype=float).ravel(), np.concatenate(h)])

    def unpack(self, x_c) -> GmmParameters:
        x_c = np.asarray(x_c, dtype=float)
        weights = simplex_from_free(x_c[: self.n_weight])
        offset = self.n_weight + self.K * self.D
        means = x_c[self.n_weight : offset].reshape(self.K, self.D)
        h_mats = np.stack(
            [
                vector_to_tril(x_c[offset + k * self.n_tril : offset + (k + 1) * self.n_tril], self.D)
                for k in range(self.K)
            ]
        )
        covariances = np.stack([h_to_covariance(H) for H in h_mats])
        return GmmParameters(weights, means, covariances, h_mats)

    def summary_statistics(self, x_c, x_d):
        params = self.unpack(x_c)
        out = {f"w{k}": float(params.weights[k]) for k in range(self.K)}
        out.update({f"mu{k}_{d}": float(params.means[k, d]) for k in range(self.K) for d in range(self.D)})
        return out

    def sufficient_statistics(self, x_d) -> SufficientStatistics:
        labels = np.asarray(x_d) - 1
        counts = np.bincount(labels, minlength=self.K).astype(float)
        sums = np.zeros((self.K, self.D))
        np.add.at(sums, labels, self.y)
        scatter = np.zeros((self.K, self.D, self.D))
        for k in range(self.K):
            members = self.y[labels == k]
            if members.shape[0]:
                centered = members - members.mean(axis=0)
                scatter[k] = centered.T @ centered
        return SufficientStatistics(counts, sums, scatter)

    def _log_responsibilities(self, x_c):
        """``log w_k + log N(y_n | mu_k, Sigma_k)`` normalized over ``k``, cached for the last ``x_c``."""
        x_c = np.asarray(x_c, dtype=float)
        key = x_c.tobytes()
        if key != self._cache_key:
            params = self.unpack(x_c)
            log_joint = np.stack(
                [
                    np.log(params.weights[k])
                    + stats.multivariate_normal.logpdf(self.y, params.means[k], params.covariances[k])
                    for k in range(self.K)
                ],
                axis=1,
            ).reshape(self.n_obs, self.K)
            self._cache_log_resp = log_joint - logsumexp(log_joint, axis=1, keepdims=True)
            self._cache_key = key
        return self._cache_log_resp

    def responsibilities(self, x_c):
        return np.exp(self._log_responsibilities(x_c))

    def discrete_conditional_probs(self, m, x_c, x_d):
        return softmax(self._log_responsibilities(x_c)[m])

    def reference_discrete_probs(self, x_c, x_d):
        return list(self.responsibilities(x_c))

    def _cluster_terms(self, params, x_d):
        """Per-cluster ``(c_k, B_k, residual sum, mu - m0)`` of ``-(c_k/2) log|Sigma_k| - tr(Sigma_k^{-1} B_k)/2``."""
        labels = np.asarray(x_d) - 1
        terms = []
        for k in range(self.K):
            members = self.y[labels == k]
            residuals = members - params.means[k]
            B = residuals.T @ residuals
            c = members.shape[0]
            prior_shift = params.means[k] - self.m0[k]
            if self.conjugate:
                B = B + self.S0[k] + np.outer(prior_shift, prior_shift)
                c += 1 + self.nu0 + self.D + 1
            else:
                c += 1
            terms.append((c, B, residuals.sum(axis=0), prior_shift))
        return terms

    def unnormalized_log_density(self, x_c, x_d):
        params = self.unpack(x_c)
        counts = np.bincount(np.asarray(x_d) - 1, minlength=self.K)
        log_w = np.log(params.weights)

        log_p = float(np.sum((counts + self.alpha - 1) * log_w)) + simplex_log_jacobian(params.weights)
        log_p -= 0.5 * self.n_obs * self.D * np.log(2 * np.pi)
        for k, (c, B, _, _) in enumerate(self._cluster_terms(params, x_d)):
            chol = cho_factor(params.covariances[k], lower=True)
            log_det = 2.0 * np.sum(np.log(np.diag(chol[0])))
            log_p += -0.5 * c * log_det - 0.5 * np.trace(cho_solve(chol, B))
            log_p += h_log_jacobian(params.h_matrices[k])
        return float(log_p)

    def score(self, x_c, x_d):
        return gmm_score(self, x_c, x_d)

    def initial_point(self):
        labels = self._initial_labels.copy()
        counts = np.bincount(labels - 1, minlength=self.K) + self.alpha
        covariances = self.S0.copy()
        return self.pack(counts / counts.sum(), self.m0, covariances), labels

    def gibbs_update(self, x_c, x_d, rng):
        params = self.unpack(x_c)
        probs = self.responsibilities(x_c)
        labels = batch_quantile(padded_cdf(probs), rng.random(self.n_obs))

        weights = gmm_conditionals(self, "weights", x_c, labels).rvs(random_state=rng)[0]
        weights = np.maximum(weights, np.finfo(float).tiny)
        weights = weights / weights.sum()
        covariances = np.empty_like(params.covariances)
        means = np.empty_like(params.means)
        for k, law in enumerate(gmm_conditionals(self, "covariances", x_c, labels)):
            covariances[k] = np.atleast_2d(law.rvs(random_state=rng))
        interim = self.pack(weights, params.means, covariances)
        for k, law in enumerate(gmm_conditionals(self, "means", interim, labels)):
            means[k] = law.rvs(random_state=rng)
        return self.pack(weights, means, covariances), labels


def raw_weight_score(weights, counts, alpha=1.0):
    """Gradient of ``sum_k (N_k + alpha_k - 1) log w_k`` with respect to ``w`` itself."""
    return (np.asarray(counts, dtype=float) + np.asarray(alpha, dtype=float) - 1.0) / np.asarray(weights, dtype=float)


def gmm_score(model: GmmModel, x_c, x_d) -> np.ndarray:
    """
    Gradient of the unnormalized log posterior in unconstrained coordinates.

    Parameters
    ----------
    model: GmmModel
        The mixture model.

    x_c: array-like
        Continuous block ``(v, mu_1..mu_K, h_1..h_K)``.

    x_d: array-like of shape (n_observations,)
        Labels in ``1..K``.

    Returns
    -------
    gradient: np.ndarray
        Concatenated gradient in the layout of ``x_c``.
    """
    params = model.unpack(x_c)
    counts = np.bincount(np.asarray(x_d) - 1, minlength=model.K)
    totals = counts + model.alpha
    grad_v = totals[:-1] - params.weights[:-1] * totals.sum()

    grad_mu = np.empty((model.K, model.D))
    grad_h = []
    for k, (c, B, residual_sum, prior_shift) in enumerate(model._cluster_terms(params, x_d)):
        try:
            chol = cho_factor(params.covariances[k], lower=True)
        except np.linalg.LinAlgError as err:
            raise FloatingPointError(f"Covariance of component {k} is numerically singular.") from err
        precision = cho_solve(chol, np.eye(model.D))
        grad_mu[k] = precision @ (residual_sum - model.conjugate * prior_shift)

        G = -0.5 * c * precision + 0.5 * precision @ B @ precision
        g_h = covariance_gradient_to_h(G, params.h_matrices[k])
        diagonal = tril_to_vector(np.diag(h_log_jacobian_gradient(model.D)))
        grad_h.append(g_h + diagonal)

    gradient = np.concatenate([grad_v, grad_mu.ravel(), np.concatenate(grad_h)])
    if not np.all(np.isfinite(gradient)):
        bad = np.flatnonzero(~np.isfinite(gradient)).tolist()
        raise FloatingPointError(f"Non-finite GMM score at coordinates {bad}.")
    return gradient


def gmm_conditionals(model: GmmModel, block, x_c, x_d, index=None):
    """
    Exact full conditional of one block.

    Parameters
    ----------
    model: GmmModel
        The mixture model.

    block: str
        One of ``"labels"``, ``"weights"``, ``"means"`` or ``"covariances"``.

    x_c, x_d: array-like
        Current state.

    index: int, default=None
        Observation index for ``"labels"``; all observations when None.

    Returns
    -------
    law: DiscretePMF, list of DiscretePMF, or scipy frozen distribution(s)
        Labels give DiscretePMF; weights a Dirichlet; means and covariances a list with one law per component.
    """
    if block not in GMM_BLOCKS:
        raise ValueError(f"Unknown GMM block '{block}'. Choose one of {GMM_BLOCKS}.")
    x_d = np.asarray(x_d)
    if block == "labels":
        probs = model.responsibilities(x_c)
        if index is not None:
            return DiscretePMF(probs[index] / probs[index].sum())
        return [DiscretePMF(p / p.sum()) for p in probs]

    stats_ = model.sufficient_statistics(x_d)
    if block == "weights":
        return stats.dirichlet(model.alpha + stats_.counts)

    params = model.unpack(x_c)
    laws = []
    for k in range(model.K):
        n_k = stats_.counts[k]
        if not model.conjugate and n_k == 0:
            raise ValueError(f"Cluster {k} is empty; its mean and covariance conditionals are undefined.")
        ybar = stats_.sums[k] / n_k if n_k else model.m0[k]
        if block == "means":
            if model.conjugate:
                mean = (model.m0[k] + stats_.sums[k]) / (1 + n_k)
                laws.append(stats.multivariate_normal(mean, params.covariances[k] / (1 + n_k)))
            else:
                laws.append(stats.multivariate_normal(ybar, params.covariances[k] / n_k))
        else:
            if model.conjugate:
                shift = ybar - model.m0[k]
                scale = model.S0[k] + stats_.centered_scatter[k] + n_k / (1 + n_k) * np.outer(shift, shift)
                df = model.nu0 + n_k
            else:
                scale = stats_.centered_scatter[k]
                df = n_k - model.D - 1
            if df <= model.D - 1:
                raise ValueError(f"Cluster {k} has too few members ({int(n_k)}) for an inverse-Wishart conditional.")
            laws.append(stats.invwishart(df=df, scale=scale))
    return laws
