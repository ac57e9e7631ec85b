from madmix.models.gmm import GmmModel, gmm_conditionals, gmm_score, raw_weight_score
from madmix.models.ising import IsingChain, ising_conditional, ising_exact_pmf
from madmix.models.spikeslab import SpikeSlabModel, spikeslab_conditionals, spikeslab_score
from madmix.models.toy import ToyTarget
