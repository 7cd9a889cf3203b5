"""Differentially private empirical risk minimization by input perturbation.

Noise goes on the training records once, before training; ordinary
full-batch gradient descent then runs on the perturbed data. Calibration
of the noise, the moments accountant that certifies it, three classical
central-DP baselines and a sweep harness live in the submodules:

- `data`: CSV ingestion, unit-ball scaling, seeded splits, desk datasets
- `losses`: loss families with certified constants, projection, PL checks
- `privacy`: noise calibration and the moments accountant
- `mechanisms`: input perturbation and the output/objective/gradient baselines
- `trainer`: projected gradient descent, oracle optimum, metrics
- `bench`: declarative experiment sweeps and CSV/JSON emission
"""

from .data import Dataset, SplitSpec, builtin_dataset, gaussian_blobs, load_csv, noisy_margin, normalize, split
from .losses import (
    ErmObjective,
    LossSpec,
    ModelParams,
    PolyakLojasiewicz,
    StronglyConvex,
    check_pl,
    finite_difference_gradient,
    logistic,
    logistic_l2,
    mlp,
    project_to_ball,
)
from .mechanisms import (
    MechanismKind,
    NoiseDraw,
    gradient_perturb_step,
    gradient_perturb_train,
    objective_perturb,
    output_perturb,
    perturb_inputs,
)
from .privacy import (
    MomentsLedger,
    NoiseScale,
    PrivacyParams,
    calibrate_sigma,
    compose_and_convert,
    gaussian_renyi,
    minimum_calibration_constant,
    per_step_moment_bound,
    verify_calibration,
)
from .trainer import RunRecord, TrainConfig, evaluate, oracle_optimum, train_gd
from .bench import ExperimentSpec, ResultTable, emit, parse_spec_file, read_table, run_experiment

__version__ = "0.1.0"
