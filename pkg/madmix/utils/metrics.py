""" Divergences between flattened PMFs and Monte Carlo standard errors """
import numpy as np


def _as_probs(p):
    return np.asarray(getattr(p, "probs", p), dtype=float)


def total_variation(p, q):
    """Total variation between two PMFs (DiscretePMF objects or arrays) on the same support."""
    p, q = _as_probs(p), _as_probs(q)
    if p.shape != q.shape:
        raise ValueError(f"PMFs live on different supports: {p.shape} vs {q.shape}.")
    return 0.5 * float(np.abs(p - q).sum())


def kl_divergence(q, p):
    """``KL(q || p)`` with the ``0 log 0 = 0`` convention; ``p`` must be strictly positive where ``q`` is."""
    q, p = _as_probs(q), _as_probs(p)
    if q.shape != p.shape:
        raise ValueError(f"PMFs live on different supports: {q.shape} vs {p.shape}.")
    support = q > 0
    if np.any(p[support] <= 0):
        raise ValueError("KL(q || p) is infinite: p has zero mass where q does not.")
    return float(np.sum(q[support] * (np.log(q[support]) - np.log(p[support]))))


def mean_and_standard_error(values):
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("At least two values are needed for a standard error.")
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("Non-finite values in Monte Carlo estimate.")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))
