"""Empirical PMFs of sample sets, smoothed so that KL to a target stays finite."""
import numpy as np

from madmix.discrete import DiscretePMF
from madmix.utils.metrics import kl_divergence


def empirical_frequencies(samples, support_sizes) -> np.ndarray:
    """Raw frequency estimate over the flattened support (zeros allowed)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.int64))
    if samples.size == 0:
        raise ValueError("Cannot estimate a PMF from an empty sample set.")
    if samples.shape[1] != len(support_sizes):
        raise ValueError(f"Samples have {samples.shape[1]} coordinates, the support has {len(support_sizes)}.")
    index = np.ravel_multi_index(tuple((samples - 1).T), tuple(support_sizes))
    counts = np.bincount(index, minlength=int(np.prod(support_sizes)))
    return counts / samples.shape[0]


def empirical_pmf(samples, support_sizes) -> DiscretePMF:
    """Frequencies with ``1 / (2 n)`` added to empty atoms, renormalized."""
    freqs = empirical_frequencies(samples, support_sizes)
    n = np.atleast_2d(samples).shape[0]
    smoothed = np.where(freqs > 0, freqs, 1.0 / (2 * n))
    return DiscretePMF.from_weights(smoothed)


def kl_to_target(pmf, exact: DiscretePMF) -> float:
    """``KL(pmf || exact)``; ``pmf`` may be a DiscretePMF or a raw frequency vector."""
    return kl_divergence(pmf, exact)
