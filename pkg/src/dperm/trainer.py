"""Full-batch projected gradient descent, the non-private oracle optimum,
and the two benchmark metrics (test accuracy, training optimality gap)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import Dataset
from .losses import ErmObjective, LossSpec, ModelParams, project_vector

__all__ = [
    "TrainConfig",
    "RunRecord",
    "train_gd",
    "oracle_optimum",
    "evaluate",
]


@dataclass(frozen=True)
class TrainConfig:
    """Fixed-horizon training recipe.

    init is "zeros" or "gaussian"; the gaussian scale defaults to
    0.1/sqrt(dim) (symmetry breaking for the MLP, whose zero point is a
    saddle). radius is the projection ball applied after every step.
    """

    steps: int
    alpha: float
    seed: int = 0
    init: str = "zeros"
    init_scale: float | None = None
    radius: float = 10.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.init not in ("zeros", "gaussian"):
            raise ValueError(f"init must be 'zeros' or 'gaussian', got {self.init!r}")
        if not self.radius > 0.0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def initial_theta(config: TrainConfig, dim: int) -> np.ndarray:
    if config.init == "zeros":
        return np.zeros(dim)
    scale = config.init_scale if config.init_scale is not None else 0.1 / np.sqrt(dim)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0x1217]))
    return scale * rng.normal(size=dim)


def train_gd(
    objective,
    config: TrainConfig,
    grad_noise: Optional[Callable[[int], np.ndarray]] = None,
) -> tuple[ModelParams, np.ndarray]:
    """Run `steps` full-batch updates, projecting after each one.

    `objective` is anything exposing value/gradient/dim. `grad_noise`,
    when given, is called with the step index and its return value is
    added to the gradient before the update (the hook the gradient
    perturbation mechanism uses; None and an all-zero noise vector
    produce identical trajectories).

    Returns the final parameters and the length-`steps` curve of the
    objective value after each update.
    """
    theta = project_vector(initial_theta(config, objective.dim), config.radius)
    curve = np.empty(config.steps)
    for t in range(config.steps):
        grad = objective.gradient(theta)
        if not np.all(np.isfinite(grad)):
            raise ArithmeticError(f"non-finite gradient at iteration {t}")
        if grad_noise is not None:
            grad = grad + grad_noise(t)
        theta = project_vector(theta - config.alpha * grad, config.radius)
        value = objective.value(theta)
        if not np.isfinite(value):
            raise ArithmeticError(f"non-finite loss at iteration {t}")
        curve[t] = value
    return ModelParams(theta, config.radius), curve


def oracle_optimum(
    dataset: Dataset,
    spec: LossSpec,
    tolerance: float,
    max_iters: int = 200_000,
) -> tuple[ModelParams, float]:
    """Unconstrained minimizer of the non-private objective, to a
    gradient-norm tolerance.

    Plain gradient descent at the safe step size 1/smoothness, run until
    ||grad|| <= tolerance. For a strongly convex objective with modulus m
    this certifies a value gap of at most tolerance^2 / (2m). The
    returned value is the objective at the found point (an overestimate
    of the true minimum by at most that bound).
    """
    if not tolerance > 0.0:
        raise ValueError(f"tolerance must be > 0, got {tolerance}")
    if spec.family == "mlp":
        raise ValueError("oracle_optimum needs a convex family (logistic or logistic_l2)")
    objective = ErmObjective(spec, dataset)
    alpha = 1.0 / objective.smoothness_bound
    theta = np.zeros(objective.dim)
    for _ in range(max_iters):
        grad = objective.gradient(theta)
        if float(np.linalg.norm(grad)) <= tolerance:
            break
        theta = theta - alpha * grad
    else:
        raise RuntimeError(
            f"oracle did not reach ||grad|| <= {tolerance:g} within {max_iters} "
            f"iterations (final norm {float(np.linalg.norm(grad)):.3e})"
        )
    return ModelParams(theta, radius=np.inf), objective.value(theta)


def evaluate(
    params: ModelParams,
    test: Dataset,
    train: Dataset,
    spec: LossSpec,
    objective_min: float,
) -> tuple[float, float]:
    """Test accuracy and training optimality gap.

    Accuracy counts sign agreement of the classifier score with the test
    label, with sign(0) fixed to +1. The gap is the original (never
    perturbed) training objective at `params` minus `objective_min` from
    the oracle, so it can dip below zero only by the oracle's tolerance.
    """
    from .losses import decision_scores  # local to keep module import light

    scores = decision_scores(spec, params.theta, test.features)
    predicted = np.where(scores >= 0.0, 1.0, -1.0)
    accuracy = float(np.mean(predicted == test.labels))
    gap = ErmObjective(spec, train).value(params.theta) - objective_min
    return accuracy, gap


@dataclass(frozen=True)
class RunRecord:
    """One training run's outputs plus enough context to reproduce it."""

    mechanism: str
    theta_final: ModelParams
    train_loss_curve: np.ndarray
    accuracy: float
    optimality_gap: float
    trained_objective_gap: float
    realized_epsilon: float
    epsilon: float
    noise_variance: float
    noise_seed: int
    config: TrainConfig
    wall_ms: float = 0.0

    def __post_init__(self):
        curve = np.asarray(self.train_loss_curve, dtype=np.float64)
        if curve.shape != (self.config.steps,):
            raise ValueError(
                f"loss curve has length {curve.shape[0]}, expected {self.config.steps}"
            )
        curve.setflags(write=False)
        object.__setattr__(self, "train_loss_curve", curve)
