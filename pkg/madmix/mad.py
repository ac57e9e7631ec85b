"""
MAD map
====================================
Measure-preserving, invertible map on discrete states augmented with uniforms. One pass
updates every coordinate in turn: the pair ``(x_m, u_m)`` is turned into a position
``rho`` on the unit circle under the full conditional, shifted by an irrational amount and
read back into an atom and a uniform.
"""
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Tuple, Union

import numpy as np

from madmix.discrete import (
    AugmentedState,
    DiscretePMF,
    FullConditionalTarget,
    batch_quantile,
    clamp_uniform,
    padded_cdf,
    quantile,
)

DEFAULT_XI = np.pi / 16
_MAX_SUSPICIOUS_DENOMINATOR = 4
_RATIONAL_TOL = 1e-12


@dataclass(frozen=True)
class ShiftParam:
    """
    Shift applied on the unit circle at every coordinate update.

    Shifts close to a rational with a small denominator make the map periodic, and such
    values trigger a ``RuntimeWarning``. They remain usable, e.g. ``xi=0`` gives the identity.
    """

    xi: float = DEFAULT_XI

    def __post_init__(self):
        if not np.isfinite(self.xi):
            raise ValueError(f"Shift must be finite, got {self.xi}.")
        if not self.is_irrational_like:
            warnings.warn(
                f"Shift {self.xi} is within {_RATIONAL_TOL} of a rational with denominator <= "
                f"{_MAX_SUSPICIOUS_DENOMINATOR}; the MAD map will not be ergodic.",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def is_irrational_like(self):
        frac = float(np.mod(self.xi, 1.0))
        approx = Fraction(frac).limit_denominator(_MAX_SUSPICIOUS_DENOMINATOR)
        return abs(frac - float(approx)) > _RATIONAL_TOL and abs(frac - 1.0) > _RATIONAL_TOL


def as_shift(xi: Union[float, ShiftParam, None]) -> float:
    if xi is None:
        return DEFAULT_XI
    if isinstance(xi, ShiftParam):
        return xi.xi
    return float(ShiftParam(float(xi)).xi)


@dataclass
class FlowResult:
    """Image of a state under a map, with the log-Jacobian of that map evaluated at the input."""

    state: AugmentedState
    log_jacobian: Union[float, np.ndarray]


def u_to_rho(x_m: int, u_m: float, pmf: DiscretePMF) -> float:
    """``rho = F(x_m - 1) + u_m * pi(x_m)``."""
    if not 1 <= x_m <= pmf.size:
        raise ValueError(f"Atom {x_m} outside support 1..{pmf.size}.")
    if not 0.0 <= u_m < 1.0:
        raise ValueError(f"Uniform coordinate must lie in [0, 1), got {u_m}.")
    lower = 0.0 if x_m == 1 else pmf.cdf[x_m - 2]
    return float(clamp_uniform(lower + u_m * pmf.probs[x_m - 1]))


def shift_rho(rho, xi):
    """Rotation ``(rho + xi) mod 1`` kept strictly below 1."""
    return clamp_uniform(np.mod(rho + xi, 1.0))


def rho_to_xu(rho: float, pmf: DiscretePMF) -> Tuple[int, float]:
    """Reads a point of the unit interval back into ``(atom, uniform)``."""
    atom = quantile(pmf, rho)
    lower = 0.0 if atom == 1 else pmf.cdf[atom - 2]
    return atom, float(clamp_uniform((rho - lower) / pmf.probs[atom - 1]))


def _mad_step(target: FullConditionalTarget, x: np.ndarray, u: np.ndarray, m: int, xi: float) -> np.ndarray:
    """Updates coordinate ``m`` of a batch in place and returns the per-row log-Jacobian."""
    rows = np.arange(x.shape[0])
    probs = target.conditional_probs(m, x)
    cdf = padded_cdf(probs)

    current = x[:, m] - 1
    mass = probs[rows, current]
    if np.any(mass <= 0):
        bad = int(np.flatnonzero(mass <= 0)[0])
        raise ValueError(f"Coordinate {m} of state {x[bad].tolist()} sits on a zero-mass atom.")

    rho = clamp_uniform(cdf[rows, current] + u[:, m] * mass)
    rho = shift_rho(rho, xi)

    updated = batch_quantile(cdf, rho) - 1
    new_mass = probs[rows, updated]
    x[:, m] = updated + 1
    u[:, m] = clamp_uniform((rho - cdf[rows, updated]) / new_mass)
    return np.log(mass) - np.log(new_mass)


def _mad_pass(state, target, xi, order, visit_order):
    x, u = state.as_batch()
    target.check_state(x)
    log_jac = np.zeros(x.shape[0])
    for m in order:
        if visit_order is not None:
            visit_order.append(m)
        log_jac += _mad_step(target, x, u, m, xi)
    return FlowResult(state=state.like(x, u), log_jacobian=log_jac if state.is_batch else float(log_jac[0]))


def mad_forward(
    state: AugmentedState,
    target: FullConditionalTarget,
    xi: Union[float, ShiftParam, None] = None,
    visit_order: Optional[List[int]] = None,
) -> FlowResult:
    """
    One forward pass of the MAD map, coordinates ``0..M-1`` in order.

    Parameters
    ----------
    state: AugmentedState
        Single state or batch.

    target: FullConditionalTarget
        Supplies the full conditionals.

    xi: float or ShiftParam, default=pi/16
        Shift on the unit circle.

    visit_order: list, default=None
        When given, receives the coordinate indices in the order they are updated.

    Returns
    -------
    result: FlowResult
        Image state and ``log pi(x) - log pi(x')``.
    """
    return _mad_pass(state, target, as_shift(xi), range(target.dim), visit_order)


def mad_inverse(
    state: AugmentedState,
    target: FullConditionalTarget,
    xi: Union[float, ShiftParam, None] = None,
    visit_order: Optional[List[int]] = None,
) -> FlowResult:
    """
    Inverse pass: coordinates ``M-1..0`` with shift ``-xi``.

    The returned log-Jacobian is that of the inverse map, i.e. the negative of the forward
    log-Jacobian evaluated at the returned preimage.
    """
    return _mad_pass(state, target, -as_shift(xi), range(target.dim - 1, -1, -1), visit_order)
