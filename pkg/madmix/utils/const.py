import os

from madmix.enums import Experiment
from madmix.mad import DEFAULT_XI

OUTPUT_DIR_ENV = "MADMIX_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "res"
TIMING_REPETITIONS = 10


def default_output_dir():
    return os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)


TOY1D_META = {
    "name": Experiment.TOY1D,
    "n_flow": 500,
    "n_samples": 10000,
    "n_u_samples": 1000,
    "params": {"support_sizes": [10], "seed": 0},
}

TOY2D_META = {
    "name": Experiment.TOY2D,
    "n_flow": 500,
    "n_samples": 10000,
    "n_u_samples": 1000,
    "params": {"support_sizes": [4, 5], "seed": 0},
}

TOY3D_META = {
    "name": Experiment.TOY3D,
    "n_flow": 100,
    "n_samples": 10000,
    "n_u_samples": 200,
    "params": {"support_sizes": [10, 10, 10], "seed": 0},
}

# chains longer than 20 spins use large_n_flow
ISING_META = {
    "name": Experiment.ISING,
    "n_flow": 1000,
    "n_samples": 10000,
    "n_u_samples": 1000,
    "params": {"n_spins": 5, "beta": 1.0},
    "large_n_flow": 500,
}

GMM_META = {
    "name": Experiment.GMM,
    "n_flow": 100,
    "n_samples": 100,
    "params": {
        "n_components": 2,
        "n_observations": 50,
        "dimension": 2,
        "alpha": 1.0,
        "nu0": 1.0,
        "covariance_prior": "conjugate",
    },
}

SPIKESLAB_META = {
    "name": Experiment.SPIKESLAB,
    "n_flow": 500,
    "n_samples": 100,
    "params": {
        "n_observations": 100,
        "n_features": 8,
        "n_nonzero": 3,
        "snr": 5.0,
        "alpha1": 0.1,
        "alpha2": 0.1,
        "s2": 0.5,
        "a": 1.0,
        "b": 1.0,
        "sigma2_law": "inverse_gamma",
    },
}

EXPERIMENT_META = {
    meta["name"]: meta for meta in (TOY1D_META, TOY2D_META, TOY3D_META, ISING_META, GMM_META, SPIKESLAB_META)
}
