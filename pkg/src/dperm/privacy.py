"""Gaussian noise calibration and the moments accountant behind it.

The calibration closed form is

    sigma^2 = c * G^2 * T * ln(1/delta) / (n(n-1) * sqrt(m) * eps^2)

in the strongly convex regime (m is the curvature modulus) and the same
expression without the sqrt(m) factor in the Polyak-Lojasiewicz regime.
Soundness is checked by an explicit accountant pipeline: a per-step bound
on the log moment-generating function of the privacy loss, additive
composition over the training steps, and the standard tail conversion

    eps_realized = min_order (alpha(order) + ln(1/delta)) / order.

All logarithms are natural. Every function here is pure; nothing reads
the data, so calibrated parameters are data-independent by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .losses import PolyakLojasiewicz, StronglyConvex

__all__ = [
    "PrivacyParams",
    "NoiseScale",
    "MomentsLedger",
    "CalibrationReport",
    "DEFAULT_ORDERS",
    "calibrate_sigma",
    "gaussian_renyi",
    "per_step_moment_bound",
    "compose_and_convert",
    "verify_calibration",
    "pair_sensitivity",
    "coefficient_floor",
    "default_moment_constant",
    "minimum_calibration_constant",
]

Regime = StronglyConvex | PolyakLojasiewicz

# Moment orders the accountant sweeps. Realized epsilon at desk scale is
# insensitive to orders beyond 64.
DEFAULT_ORDERS: tuple[int, ...] = tuple(range(1, 65))


@dataclass(frozen=True)
class PrivacyParams:
    """Target budget: epsilon > 0, delta strictly inside (0, 1)."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0,1), got {self.delta}")


@dataclass(frozen=True)
class NoiseScale:
    """Calibrated per-coordinate Gaussian variance plus its provenance.

    Produced by `calibrate_sigma`; sigma_sq then equals the closed form
    at the stored fields. The dataclass itself does not re-enforce that
    (verification deliberately probes tampered scales).
    """

    sigma_sq: float
    c: float
    regime: Regime
    steps: int
    n: int
    lipschitz: float


def _check_calibration_inputs(steps: int, n: int, lipschitz: float, regime: Regime, c: float):
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not lipschitz > 0.0:
        raise ValueError(f"lipschitz must be > 0, got {lipschitz}")
    if not c > 0.0:
        raise ValueError(f"c must be > 0, got {c}")
    if not isinstance(regime, (StronglyConvex, PolyakLojasiewicz)):
        raise TypeError(f"regime must be StronglyConvex or PolyakLojasiewicz, got {regime!r}")


def calibrate_sigma(
    params: PrivacyParams,
    steps: int,
    n: int,
    lipschitz: float,
    regime: Regime,
    c: float = 1.0,
) -> NoiseScale:
    """Per-coordinate noise variance for the input-perturbation mechanism.

    The strongly convex regime divides the PL expression by the square
    root of the curvature modulus; the two share every other factor, so
    sigma_sq(PL) == sigma_sq(SC) * sqrt(modulus) exactly.
    """
    _check_calibration_inputs(steps, n, lipschitz, regime, c)
    base = (
        c
        * lipschitz**2
        * steps
        * math.log(1.0 / params.delta)
        / (n * (n - 1) * params.epsilon**2)
    )
    if isinstance(regime, StronglyConvex):
        sigma_sq = base / math.sqrt(regime.modulus)
    else:
        sigma_sq = base
    return NoiseScale(
        sigma_sq=sigma_sq, c=c, regime=regime, steps=steps, n=n, lipschitz=lipschitz
    )


def gaussian_renyi(order: float, mean_gap: float, sigma_sq: float) -> float:
    """Renyi divergence of given order between N(a, s^2) and N(b, s^2)
    with |a-b| = mean_gap: order * mean_gap^2 / (2 sigma_sq)."""
    if not order > 1.0:
        raise ValueError(f"order must be > 1, got {order}")
    if not sigma_sq > 0.0:
        raise ValueError(f"sigma_sq must be > 0, got {sigma_sq}")
    if mean_gap < 0.0:
        raise ValueError(f"mean_gap must be >= 0, got {mean_gap}")
    return order * mean_gap**2 / (2.0 * sigma_sq)


def pair_sensitivity(lipschitz: float, n: int) -> float:
    """Worst-case gap 2G/n between the averaged-gradient contributions of
    two datasets differing in one record."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return 2.0 * lipschitz / n


def coefficient_floor(n: int, modulus: float, loss_gap: float = 0.5) -> float:
    """Lower bound on the summed slope coefficient that scales the
    mechanism's Gaussian: (n-1)/n * sqrt(2 * modulus * loss_gap).

    `loss_gap` stands in for the terminal loss-minus-infimum term, which
    must not be estimated from data at calibration time; 0.5 makes the
    floor exactly (n-1)/n * sqrt(modulus).
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not (modulus > 0.0 and loss_gap > 0.0):
        raise ValueError("modulus and loss_gap must be > 0")
    return (n - 1) / n * math.sqrt(2.0 * modulus * loss_gap)


def default_moment_constant(loss_gap: float = 0.5) -> float:
    """Per-step constant c1 implied by the 2G/n sensitivity and the
    coefficient floor: 2 / sqrt(2 * loss_gap) (= 2 at the default)."""
    if not loss_gap > 0.0:
        raise ValueError("loss_gap must be > 0")
    return 2.0 / math.sqrt(2.0 * loss_gap)


def per_step_moment_bound(
    order: int,
    lipschitz: float,
    sigma_sq: float,
    n: int,
    regime: Regime,
    c1: float = 1.0,
) -> float:
    """Bound on the order-th log moment of one training step's privacy loss:

        c1 * order * (order + 1) * G^2 / (sqrt(m) * sigma_sq * n(n-1))

    in the strongly convex regime; the PL regime drops the sqrt(m) factor
    (the curvature term is folded into c1 there).
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not sigma_sq > 0.0:
        raise ValueError(f"sigma_sq must be > 0, got {sigma_sq}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not c1 > 0.0:
        raise ValueError(f"c1 must be > 0, got {c1}")
    base = c1 * order * (order + 1) * lipschitz**2 / (sigma_sq * n * (n - 1))
    if isinstance(regime, StronglyConvex):
        return base / math.sqrt(regime.modulus)
    if isinstance(regime, PolyakLojasiewicz):
        return base
    raise TypeError(f"regime must be StronglyConvex or PolyakLojasiewicz, got {regime!r}")


@dataclass(frozen=True)
class MomentsLedger:
    """Per-step log-moment bounds keyed by order, plus the step count
    already composed in. Composition is additive, so the composed bound
    at each order is steps_composed times the per-step value."""

    per_step_bounds: Mapping[int, float]
    steps_composed: int = 0

    def __post_init__(self):
        if not self.per_step_bounds:
            raise ValueError("ledger needs at least one moment order")
        bounds = dict(self.per_step_bounds)
        for order, bound in bounds.items():
            if order < 1:
                raise ValueError(f"moment orders must be >= 1, got {order}")
            if bound < 0.0:
                raise ValueError(f"moment bounds must be >= 0, got {bound} at order {order}")
        if self.steps_composed < 0:
            raise ValueError("steps_composed must be >= 0")
        object.__setattr__(self, "per_step_bounds", bounds)

    def composed_bound(self, order: int) -> float:
        return self.steps_composed * self.per_step_bounds[order]


def compose_and_convert(ledger: MomentsLedger, steps: int, delta: float) -> float:
    """Compose the ledger over `steps` queries and convert to epsilon.

    For each order: alpha = steps * per_step_bound, then
    eps(order) = (alpha + ln(1/delta)) / order; returns the minimum over
    the grid. `steps` may be 0 (nothing composed; the tail term alone).
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0,1), got {delta}")
    tail = math.log(1.0 / delta)
    return min(
        (steps * bound + tail) / order
        for order, bound in ledger.per_step_bounds.items()
    )


def minimum_calibration_constant(
    params: PrivacyParams,
    c1: float | None = None,
    orders: Sequence[int] = DEFAULT_ORDERS,
) -> float:
    """Smallest calibration constant c that the accountant can certify.

    With sigma_sq from `calibrate_sigma`, the composed moment at each
    order reduces to (c1/c) * order*(order+1) * eps^2 / ln(1/delta); the
    steps, n, Lipschitz and curvature factors cancel. Inverting the tail
    conversion per order and minimizing gives the tightest sound c.
    Returns inf when no order in the grid can certify the target (i.e.
    eps <= ln(1/delta)/max(orders)).
    """
    if c1 is None:
        c1 = default_moment_constant()
    tail = math.log(1.0 / params.delta)
    best = math.inf
    for order in orders:
        slack = params.epsilon - tail / order
        if slack <= 0.0:
            continue
        best = min(best, c1 * (order + 1) * params.epsilon**2 / (tail * slack))
    return best


@dataclass(frozen=True)
class CalibrationReport:
    """Outcome of replaying the accountant against a calibrated scale."""

    target_epsilon: float
    realized_epsilon: float
    best_order: int
    passed: bool
    per_order_epsilon: Mapping[int, float]


def verify_calibration(
    params: PrivacyParams,
    scale: NoiseScale,
    c1: float | None = None,
    orders: Sequence[int] = DEFAULT_ORDERS,
) -> CalibrationReport:
    """Replay per_step_moment_bound + compose_and_convert against a scale.

    Passes when the realized epsilon is at most the target. With the
    default c1 the check succeeds exactly when scale.c is at least
    `minimum_calibration_constant(params, c1)`.
    """
    if c1 is None:
        c1 = default_moment_constant()
    bounds = {
        order: per_step_moment_bound(
            order, scale.lipschitz, scale.sigma_sq, scale.n, scale.regime, c1=c1
        )
        for order in orders
    }
    ledger = MomentsLedger(bounds, steps_composed=scale.steps)
    tail = math.log(1.0 / params.delta)
    per_order = {
        order: (scale.steps * bound + tail) / order for order, bound in bounds.items()
    }
    realized = compose_and_convert(ledger, scale.steps, params.delta)
    best_order = min(per_order, key=lambda o: (per_order[o], o))
    return CalibrationReport(
        target_epsilon=params.epsilon,
        realized_epsilon=realized,
        best_order=best_order,
        passed=realized <= params.epsilon,
        per_order_epsilon=per_order,
    )
