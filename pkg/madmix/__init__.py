from .main import *
from .discrete import AugmentedState, DiscretePMF, FullConditionalTarget, cdf_eval, quantile, validate_target
from .mad import FlowResult, ShiftParam, mad_forward, mad_inverse, rho_to_xu, shift_rho, u_to_rho
from .mixed import HamiltonianConfig, MixedMadMixFlow, MixedState, MixedTarget, mixed_forward, mixed_inverse
from ._version import __version__
