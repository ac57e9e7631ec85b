from madmix.baselines.empirical import empirical_frequencies, empirical_pmf, kl_to_target
from madmix.baselines.gibbs import GibbsChain, gibbs_sweep
from madmix.baselines.meanfield import MeanFieldApprox, cavi_fit, mean_field_elbo
