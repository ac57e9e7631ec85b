""" Experiment, method and metric enums """
from enum import Enum


class Experiment(Enum):
    """ Built-in targets the harness can run """

    TOY1D = "toy1d"
    TOY2D = "toy2d"
    TOY3D = "toy3d"
    ISING = "ising"
    GMM = "gmm"
    SPIKESLAB = "spikeslab"


class Method(Enum):
    """ Approximation methods """

    MADMIX = "madmix"
    GIBBS = "gibbs"
    MEANFIELD = "meanfield"


class Metric(Enum):
    """ Names of the recorded metrics """

    KL = "kl"
    NEG_ELBO = "neg_elbo"
    TV = "tv"
    SECONDS_DENSITY = "seconds_density"
    SECONDS_SAMPLE = "seconds_sample"
    WEIGHT = "weight"
