"""The four perturbation mechanisms.

Input perturbation adds fresh Gaussian noise to every training record
once, before training, and is the mechanism the calibration in
`privacy` is written for. The three classical central baselines --
output, objective and gradient perturbation -- are provided with their
published variance shapes (unit leading constants) for comparison runs.

Randomness is hierarchical: every draw is keyed by (seed, sub-key), so
rows and steps get independent, order-independent, reproducible noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .losses import ErmObjective, LossSpec, ModelParams, project_to_ball
from .privacy import NoiseScale
from .trainer import TrainConfig, train_gd

__all__ = [
    "MechanismKind",
    "MECHANISM_LABELS",
    "NoiseDraw",
    "gaussian_noise",
    "perturb_inputs",
    "output_perturb",
    "objective_perturb",
    "gradient_perturb_step",
    "gradient_perturb_train",
    "LinearlyPerturbedObjective",
    "output_noise_variance",
    "objective_noise_variance",
    "gradient_tight_noise_variance",
    "gradient_loose_noise_variance",
]


@dataclass(frozen=True)
class MechanismKind:
    """Which perturbation runs, and (for gradient) which variance formula.

    The two gradient baselines differ only in their published noise
    bound: "tight" composes over the step count (variance ~ T/n^2),
    "loose" is the older n^2-scaled bound.
    """

    kind: str  # "none" | "input" | "output" | "objective" | "gradient"
    variant: str | None = None

    def __post_init__(self):
        if self.kind not in ("none", "input", "output", "objective", "gradient"):
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        if self.kind == "gradient":
            if self.variant not in ("tight", "loose"):
                raise ValueError("gradient mechanism needs variant 'tight' or 'loose'")
        elif self.variant is not None:
            raise ValueError(f"{self.kind} mechanism takes no variant")

    @property
    def label(self) -> str:
        return self.kind if self.variant is None else f"{self.kind}_{self.variant}"

    @classmethod
    def parse(cls, label: str) -> "MechanismKind":
        kind, _, variant = label.strip().partition("_")
        return cls(kind, variant or None)


MECHANISM_LABELS = ("none", "input", "output", "objective", "gradient_tight", "gradient_loose")


def gaussian_noise(seed: int, shape, variance: float, key: Sequence[int] = ()) -> np.ndarray:
    """Reproducible i.i.d. N(0, variance) draw for (seed, key, shape)."""
    if variance < 0.0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))
    return math.sqrt(variance) * rng.standard_normal(shape)


@dataclass(frozen=True)
class NoiseDraw:
    """A seeded Gaussian draw; identical (seed, key, shape, variance)
    always reproduces identical values."""

    seed: int
    values: np.ndarray

    @classmethod
    def draw(cls, seed: int, shape, variance: float, key: Sequence[int] = ()) -> "NoiseDraw":
        values = gaussian_noise(seed, shape, variance, key)
        values.setflags(write=False)
        return cls(seed=int(seed), values=values)


def _variance_of(scale) -> float:
    if isinstance(scale, NoiseScale):
        return scale.sigma_sq
    return float(scale)


def perturb_inputs(
    dataset: Dataset,
    scale,
    seed: int,
    row_keys: Sequence[int] | None = None,
    shared_noise: bool = False,
) -> Dataset:
    """Add an independent Gaussian vector to every feature row.

    `scale` is a NoiseScale or a raw variance. Labels pass through and
    the rows are NOT re-projected into the unit ball: training consumes
    x + z as drawn, and re-projection would bias the noise.

    Per-row noise is keyed by `row_keys` (default: row positions), so
    permuting rows and keys together commutes with perturbation. Set
    `shared_noise=True` to add one common draw to every row instead; that
    variant exists only for comparison and carries no per-record claim.
    """
    variance = _variance_of(scale)
    if variance == 0.0:
        return dataset
    if shared_noise:
        noise = np.broadcast_to(
            gaussian_noise(seed, (dataset.dim,), variance), dataset.features.shape
        )
    else:
        if row_keys is None:
            row_keys = range(dataset.n)
        elif len(row_keys) != dataset.n:
            raise ValueError(f"{len(row_keys)} row keys for {dataset.n} rows")
        noise = np.stack(
            [gaussian_noise(seed, (dataset.dim,), variance, key=(k,)) for k in row_keys]
        )
    return Dataset(dataset.features + noise, dataset.labels, dataset.feature_names)


def output_perturb(theta_star: ModelParams, variance: float, seed: int) -> ModelParams:
    """Noise on the final parameters, then projection back into the ball."""
    noisy = theta_star.theta + gaussian_noise(seed, theta_star.theta.shape, variance)
    return project_to_ball(ModelParams(noisy, theta_star.radius))


class LinearlyPerturbedObjective:
    """base(theta) + (z . theta)/n: the linear tilt objective perturbation
    optimizes. Gradient is exactly base gradient + z/n."""

    def __init__(self, base, z: np.ndarray, n: int):
        self.base = base
        self.z = np.asarray(z, dtype=np.float64)
        self.n = int(n)
        self.dim = base.dim
        if self.z.shape != (self.dim,):
            raise ValueError(f"tilt vector shape {self.z.shape} != ({self.dim},)")

    def value(self, theta: np.ndarray) -> float:
        return self.base.value(theta) + float(self.z @ theta) / self.n

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.base.gradient(theta) + self.z / self.n


def objective_perturb(
    dataset: Dataset,
    spec: LossSpec,
    variance: float,
    seed: int,
    config: TrainConfig,
) -> tuple[ModelParams, np.ndarray]:
    """Draw one tilt vector, minimize the tilted objective with the
    shared trainer, and return the result (already ball-constrained by
    the trainer's projection).

    Only convex families are accepted: the linear-tilt construction has
    no guarantee for the MLP.
    """
    if spec.family == "mlp":
        raise ValueError("objective perturbation is only defined for convex families")
    base = ErmObjective(spec, dataset)
    z = gaussian_noise(seed, (base.dim,), variance)
    return train_gd(LinearlyPerturbedObjective(base, z, dataset.n), config)


def gradient_perturb_step(
    params: ModelParams,
    grad: np.ndarray,
    variance: float,
    alpha: float,
    seed: int,
    step_index: int,
) -> ModelParams:
    """One noisy descent update followed by projection. The draw is keyed
    by (seed, step_index), so each step gets fresh independent noise."""
    z = gaussian_noise(seed, params.theta.shape, variance, key=(step_index,))
    return project_to_ball(ModelParams(params.theta - alpha * (grad + z), params.radius))


def gradient_perturb_train(
    objective, config: TrainConfig, variance: float, seed: int
) -> tuple[ModelParams, np.ndarray]:
    """Full training loop with per-step gradient noise; identical to the
    plain trainer when the variance is zero."""
    def noise(step: int) -> np.ndarray:
        return gaussian_noise(seed, (objective.dim,), variance, key=(step,))

    return train_gd(objective, config, grad_noise=noise)


# ---------------------------------------------------------------------------
# Published baseline variances, unit leading constants throughout. Only the
# relative ordering of these bounds is meaningful here.
# ---------------------------------------------------------------------------

def output_noise_variance(
    lipschitz: float, smoothness: float, modulus: float, n: int, epsilon: float, delta: float
) -> float:
    """Output perturbation: G^2 (1 + L/m)^2 ln(2/delta) / (n^2 L^2 eps^2)."""
    return (
        lipschitz**2
        * (1.0 + smoothness / modulus) ** 2
        * math.log(2.0 / delta)
        / (n**2 * smoothness**2 * epsilon**2)
    )


def objective_noise_variance(lipschitz: float, epsilon: float, delta: float) -> float:
    """Objective perturbation: G^2 (eps + ln(4/delta^2)) / eps^2."""
    return lipschitz**2 * (epsilon + math.log(4.0 / delta**2)) / epsilon**2


def gradient_tight_noise_variance(
    lipschitz: float, steps: int, n: int, epsilon: float, delta: float
) -> float:
    """Composition-aware gradient noise: G^2 T ln(1/delta) / (n^2 eps^2)."""
    return lipschitz**2 * steps * math.log(1.0 / delta) / (n**2 * epsilon**2)


def gradient_loose_noise_variance(
    lipschitz: float, n: int, epsilon: float, delta: float
) -> float:
    """Older gradient bound: G^2 n^2 ln(n/delta) ln(1/delta) / eps^2."""
    return (
        lipschitz**2
        * n**2
        * math.log(n / delta)
        * math.log(1.0 / delta)
        / epsilon**2
    )
