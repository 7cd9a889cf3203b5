"""Experiment runner: declarative sweeps over mechanisms, privacy budgets
and seeds, with machine-readable CSV/JSON output.

A sweep is a pure function of its ExperimentSpec: every cell derives its
own random streams from (base_seed, cell coordinates), so results do not
depend on execution order or worker count. Wall-clock times are the one
non-deterministic column.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .data import (
    Dataset,
    SplitSpec,
    builtin_dataset,
    gaussian_blobs,
    load_csv,
    noisy_margin,
    normalize,
    split,
)
from .losses import (
    ErmObjective,
    LossSpec,
    PolyakLojasiewicz,
    StronglyConvex,
    logistic,
    logistic_l2,
    mlp,
)
from .mechanisms import (
    MechanismKind,
    gradient_loose_noise_variance,
    gradient_perturb_train,
    gradient_tight_noise_variance,
    objective_noise_variance,
    objective_perturb,
    output_noise_variance,
    output_perturb,
    perturb_inputs,
)
from .privacy import PrivacyParams, calibrate_sigma, verify_calibration
from .trainer import RunRecord, TrainConfig, evaluate, oracle_optimum, train_gd

__all__ = [
    "ExperimentSpec",
    "RunRow",
    "ResultTable",
    "run_experiment",
    "run_single",
    "emit",
    "read_table",
    "parse_spec_file",
    "resolve_dataset",
    "DEFAULT_EPSILON_GRID",
    "CSV_HEADER",
]

# Nine points spanning the benchmark's budget range 0.01 .. 0.25.
DEFAULT_EPSILON_GRID = (0.01, 0.02, 0.04, 0.06, 0.08, 0.1, 0.15, 0.2, 0.25)

CSV_HEADER = "mechanism,epsilon,seed,accuracy,opt_gap,opt_gap_perturbed,realized_epsilon,wall_ms"

ORACLE_TOLERANCE = 1e-9

# Hyperparameter grid searched when grid_search is on.
GRID_ALPHAS = (0.01, 0.1, 0.5, 1.0)
GRID_STEPS = (50, 200, 1000)


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative sweep configuration.

    dataset is a builtin name ("iris", "breast_cancer"), a synthetic
    generator ("blobs", "margin", sized by synth_n/synth_dim), or a CSV
    path (then label_column/positive_label are required). delta=None
    means 1/n_train^2. For non-strongly-convex models, `assume_pl_mu`
    asserts a PL constant so the input mechanism can calibrate in the PL
    regime.
    """

    dataset: str
    mechanisms: tuple[MechanismKind, ...]
    label_column: str | int | None = None
    positive_label: str | None = None
    model: str = "lr_l2"  # "lr" | "lr_l2" | "mlp"
    reg_lambda: float = 0.01
    mlp_width: int | None = None
    mlp_lipschitz: float = 1.0
    mlp_smoothness: float = 1.0
    assume_pl_mu: float | None = None
    epsilon_grid: tuple[float, ...] = DEFAULT_EPSILON_GRID
    delta: float | None = None
    repetitions: int = 1
    base_seed: int = 0
    test_fraction: float = 0.3
    steps: int = 200
    alpha: float = 0.5
    radius: float = 10.0
    init: str = "zeros"
    grid_search: bool = False
    calibration_c: float = 1.0
    synth_n: int = 500
    synth_dim: int = 10
    synth_seed: int = 0
    workers: int = 1
    output: str | None = None
    out_format: str = "csv"

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilon_grid)
        if any(e <= 0.0 for e in eps):
            raise ValueError("epsilon grid entries must be > 0")
        if list(eps) != sorted(eps) or len(set(eps)) != len(eps):
            raise ValueError("epsilon grid must be strictly ascending")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.model not in ("lr", "lr_l2", "mlp"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.out_format not in ("csv", "json"):
            raise ValueError(f"format must be csv or json, got {self.out_format!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "epsilon_grid", eps)
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))


@dataclass(frozen=True)
class RunRow:
    """One sweep cell, flattened for serialization. Failed cells carry an
    error message and NaN metrics."""

    mechanism: str
    epsilon: float
    seed: int
    accuracy: float
    opt_gap: float
    opt_gap_perturbed: float
    realized_epsilon: float
    wall_ms: float
    error: str | None = None


@dataclass(frozen=True)
class ResultTable:
    rows: tuple[RunRow, ...]

    def aggregates(self) -> list[dict]:
        """Per-(mechanism, epsilon) means and population standard deviations,
        recomputable exactly from the rows; errored rows are excluded."""
        groups: dict[tuple[str, float], list[RunRow]] = {}
        for row in self.rows:
            if row.error is not None:
                continue
            groups.setdefault((row.mechanism, row.epsilon), []).append(row)
        out = []
        for (mech, eps), rows in groups.items():
            acc = np.array([r.accuracy for r in rows])
            gap = np.array([r.opt_gap for r in rows])
            out.append(
                {
                    "mechanism": mech,
                    "epsilon": eps,
                    "rows": len(rows),
                    "accuracy_mean": float(acc.mean()),
                    "accuracy_std": float(acc.std()),
                    "opt_gap_mean": float(gap.mean()),
                    "opt_gap_std": float(gap.std()),
                }
            )
        return out

    @property
    def errored(self) -> bool:
        return any(r.error is not None for r in self.rows)


def _cell_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0])


def build_loss_spec(spec: ExperimentSpec, n_features: int) -> LossSpec:
    if spec.model == "lr":
        base = logistic()
        if spec.assume_pl_mu is not None:
            return replace(base, convexity=PolyakLojasiewicz(spec.assume_pl_mu))
        return base
    if spec.model == "lr_l2":
        return logistic_l2(spec.reg_lambda)
    width = spec.mlp_width if spec.mlp_width is not None else n_features
    convexity = PolyakLojasiewicz(spec.assume_pl_mu) if spec.assume_pl_mu is not None else None
    return mlp(width, spec.mlp_lipschitz, spec.mlp_smoothness, convexity)


def resolve_dataset(spec: ExperimentSpec) -> Dataset:
    """Materialize the spec's dataset, unnormalized."""
    name = spec.dataset
    if name in data_mod.BUILTIN_DATASETS:
        return builtin_dataset(name)
    if name == "blobs":
        return gaussian_blobs(spec.synth_n, spec.synth_dim, spec.synth_seed)
    if name == "margin":
        return noisy_margin(spec.synth_n, spec.synth_dim, spec.synth_seed)
    if spec.label_column is None or spec.positive_label is None:
        raise ValueError(
            f"dataset {name!r} looks like a CSV path: set label_column and positive_label"
        )
    return load_csv(name, spec.label_column, spec.positive_label)


def _privacy_regime(loss_spec: LossSpec):
    match loss_spec.convexity:
        case StronglyConvex() as sc:
            return sc
        case PolyakLojasiewicz() as pl:
            return pl
        case _:
            raise ValueError(
                "input mechanism needs a strongly convex loss or an asserted "
                "PL constant (assume_pl_mu) to calibrate noise"
            )


def _strong_modulus(loss_spec: LossSpec) -> float:
    if isinstance(loss_spec.convexity, StronglyConvex):
        return loss_spec.convexity.modulus
    raise ValueError("output perturbation's published bound needs a strongly convex loss")


def run_single(
    train: Dataset,
    test: Dataset,
    loss_spec: LossSpec,
    mechanism: MechanismKind,
    epsilon: float,
    delta: float,
    config: TrainConfig,
    noise_seed: int,
    objective_min: float,
    calibration_c: float = 1.0,
) -> RunRecord:
    """Execute one (mechanism, epsilon) cell and collect its metrics.

    The mechanism-"none" reference ignores epsilon/delta. All mechanisms
    share the same trainer, so zero noise reproduces the reference run
    exactly under a shared config. `opt_gap` is always measured on the
    original training objective; `trained_objective_gap` on whatever
    objective the run actually descended (they coincide except for input
    and objective perturbation).
    """
    clip = loss_spec.family == "mlp"
    original = ErmObjective(loss_spec, train, clip_gradients=clip)
    realized_epsilon = math.nan
    variance = math.nan

    with _Stopwatch() as watch:
        if mechanism.kind == "none":
            params, curve = train_gd(original, config)
            trained = original
        elif mechanism.kind == "input":
            scale = calibrate_sigma(
                PrivacyParams(epsilon, delta),
                steps=config.steps,
                n=train.n,
                lipschitz=loss_spec.lipschitz,
                regime=_privacy_regime(loss_spec),
                c=calibration_c,
            )
            variance = scale.sigma_sq
            perturbed = perturb_inputs(train, scale, noise_seed)
            trained = ErmObjective(loss_spec, perturbed, clip_gradients=clip)
            params, curve = train_gd(trained, config)
            realized_epsilon = verify_calibration(
                PrivacyParams(epsilon, delta), scale
            ).realized_epsilon
        elif mechanism.kind == "output":
            variance = output_noise_variance(
                loss_spec.lipschitz,
                loss_spec.smoothness,
                _strong_modulus(loss_spec),
                train.n,
                epsilon,
                delta,
            )
            base_params, curve = train_gd(original, config)
            params = output_perturb(base_params, variance, noise_seed)
            trained = original
        elif mechanism.kind == "objective":
            variance = objective_noise_variance(loss_spec.lipschitz, epsilon, delta)
            params, curve = objective_perturb(train, loss_spec, variance, noise_seed, config)
            trained = original  # curve already reflects the tilted objective
        elif mechanism.kind == "gradient":
            if mechanism.variant == "tight":
                variance = gradient_tight_noise_variance(
                    loss_spec.lipschitz, config.steps, train.n, epsilon, delta
                )
            else:
                variance = gradient_loose_noise_variance(
                    loss_spec.lipschitz, train.n, epsilon, delta
                )
            params, curve = gradient_perturb_train(original, config, variance, noise_seed)
            trained = original
        else:  # pragma: no cover - MechanismKind validates
            raise ValueError(f"unhandled mechanism {mechanism!r}")

        accuracy, gap = evaluate(params, test, train, loss_spec, objective_min)
        trained_gap = trained.value(params.theta) - objective_min
        if mechanism.kind == "objective":
            trained_gap = float(curve[-1]) - objective_min

    return RunRecord(
        mechanism=mechanism.label,
        theta_final=params,
        train_loss_curve=curve,
        accuracy=accuracy,
        optimality_gap=gap,
        trained_objective_gap=trained_gap,
        realized_epsilon=realized_epsilon,
        epsilon=math.nan if mechanism.kind == "none" else epsilon,
        noise_variance=variance,
        noise_seed=noise_seed,
        config=config,
        wall_ms=watch.ms,
    )


def select_hyperparameters(
    train: Dataset, loss_spec: LossSpec, spec: ExperimentSpec
) -> tuple[float, int]:
    """Pick (alpha, steps) by non-private validation accuracy on a
    held-out quarter of the training rows; deterministic in base_seed.
    Ties break toward lower validation loss, then grid order."""
    sub_train, val = split(train, SplitSpec(0.25, _cell_seed(spec.base_seed, 3)))
    clip = loss_spec.family == "mlp"
    objective = ErmObjective(loss_spec, sub_train, clip_gradients=clip)
    best = None
    for alpha in GRID_ALPHAS:
        for steps in GRID_STEPS:
            config = TrainConfig(
                steps=steps,
                alpha=alpha,
                seed=_cell_seed(spec.base_seed, 4),
                init=spec.init,
                radius=spec.radius,
            )
            params, _ = train_gd(objective, config)
            val_obj = ErmObjective(loss_spec, val)
            from .losses import decision_scores

            scores = decision_scores(loss_spec, params.theta, val.features)
            acc = float(np.mean(np.where(scores >= 0.0, 1.0, -1.0) == val.labels))
            key = (-acc, val_obj.value(params.theta))
            if best is None or key < best[0]:
                best = (key, alpha, steps)
    return best[1], best[2]


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Execute the sweep: one reference row (mechanism none) plus one row
    per (mechanism, epsilon, repetition). Per-cell failures are recorded
    on their row; the sweep itself always completes."""
    dataset = normalize(resolve_dataset(spec))
    train, test = split(dataset, SplitSpec(spec.test_fraction, _cell_seed(spec.base_seed, 0)))
    loss_spec = build_loss_spec(spec, train.dim)
    delta = spec.delta if spec.delta is not None else 1.0 / train.n**2

    alpha, steps = spec.alpha, spec.steps
    if spec.grid_search:
        alpha, steps = select_hyperparameters(train, loss_spec, spec)

    def config_for(rep: int) -> TrainConfig:
        return TrainConfig(
            steps=steps,
            alpha=alpha,
            seed=_cell_seed(spec.base_seed, 1, rep),
            init=spec.init,
            radius=spec.radius,
        )

    if loss_spec.family == "mlp":
        # No convex oracle for the network: the non-private run's final
        # training loss is the reference the gaps are measured against.
        reference, _ = train_gd(
            ErmObjective(loss_spec, train, clip_gradients=True), config_for(0)
        )
        objective_min = ErmObjective(loss_spec, train).value(reference.theta)
    else:
        _, objective_min = oracle_optimum(train, loss_spec, ORACLE_TOLERANCE)

    mechanisms = [m for m in spec.mechanisms if m.kind != "none"]

    def reference_row() -> RunRow:
        record = run_single(
            train, test, loss_spec, MechanismKind("none"), math.nan, delta,
            config_for(0), _cell_seed(spec.base_seed, 2), objective_min,
        )
        return _to_row(record)

    def cell(coords: tuple[int, int, int]) -> RunRow:
        m_idx, e_idx, rep = coords
        mechanism = mechanisms[m_idx]
        epsilon = spec.epsilon_grid[e_idx]
        noise_seed = _cell_seed(spec.base_seed, 2, m_idx, e_idx, rep)
        try:
            record = run_single(
                train, test, loss_spec, mechanism, epsilon, delta,
                config_for(rep), noise_seed, objective_min, spec.calibration_c,
            )
            return _to_row(record)
        except Exception as exc:  # cell failure stays on its row
            return RunRow(
                mechanism=mechanism.label,
                epsilon=epsilon,
                seed=noise_seed,
                accuracy=math.nan,
                opt_gap=math.nan,
                opt_gap_perturbed=math.nan,
                realized_epsilon=math.nan,
                wall_ms=math.nan,
                error=f"{type(exc).__name__}: {exc}",
            )

    coords = [
        (m, e, r)
        for m in range(len(mechanisms))
        for e in range(len(spec.epsilon_grid))
        for r in range(spec.repetitions)
    ]
    rows = [reference_row()]
    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            rows.extend(pool.map(cell, coords))  # map preserves order
    else:
        rows.extend(cell(c) for c in coords)
    return ResultTable(tuple(rows))


def _to_row(record: RunRecord) -> RunRow:
    return RunRow(
        mechanism=record.mechanism,
        epsilon=record.epsilon,
        seed=record.noise_seed,
        accuracy=record.accuracy,
        opt_gap=record.optimality_gap,
        opt_gap_perturbed=record.trained_objective_gap,
        realized_epsilon=record.realized_epsilon,
        wall_ms=record.wall_ms,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def emit(table: ResultTable, path, out_format: str = "csv") -> Path:
    """Write the table: CSV rows under the fixed header, or JSON with a
    rows array plus an aggregates object. Floats keep 17 significant
    digits, so emit/read round-trips exactly."""
    if not table.rows:
        raise ValueError("refusing to emit an empty table")
    path = Path(path)
    if out_format == "csv":
        lines = [CSV_HEADER]
        for r in table.rows:
            lines.append(
                ",".join(
                    (
                        r.mechanism,
                        _fmt(r.epsilon),
                        str(r.seed),
                        _fmt(r.accuracy),
                        _fmt(r.opt_gap),
                        _fmt(r.opt_gap_perturbed),
                        _fmt(r.realized_epsilon),
                        _fmt(r.wall_ms),
                    )
                )
            )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif out_format == "json":
        payload = {
            "rows": [
                {
                    "mechanism": r.mechanism,
                    "epsilon": r.epsilon,
                    "seed": r.seed,
                    "accuracy": r.accuracy,
                    "opt_gap": r.opt_gap,
                    "opt_gap_perturbed": r.opt_gap_perturbed,
                    "realized_epsilon": r.realized_epsilon,
                    "wall_ms": r.wall_ms,
                    "error": r.error,
                }
                for r in table.rows
            ],
            "aggregates": table.aggregates(),
        }
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    else:
        raise ValueError(f"format must be csv or json, got {out_format!r}")
    return path


def read_table(path, out_format: str = "csv") -> ResultTable:
    """Inverse of emit (error strings only survive the JSON route)."""
    path = Path(path)
    rows: list[RunRow] = []
    if out_format == "csv":
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError(f"{path}: missing or unexpected CSV header")
        for line in lines[1:]:
            if not line:
                continue
            mech, eps, seed, acc, gap, pgap, reps, wall = line.split(",")
            rows.append(
                RunRow(mech, float(eps), int(seed), float(acc), float(gap),
                       float(pgap), float(reps), float(wall))
            )
    elif out_format == "json":
        payload = json.loads(path.read_text(encoding="utf-8"))
        for r in payload["rows"]:
            rows.append(
                RunRow(
                    r["mechanism"], float(r["epsilon"]), int(r["seed"]),
                    float(r["accuracy"]), float(r["opt_gap"]),
                    float(r["opt_gap_perturbed"]), float(r["realized_epsilon"]),
                    float(r["wall_ms"]), r.get("error"),
                )
            )
    else:
        raise ValueError(f"format must be csv or json, got {out_format!r}")
    return ResultTable(tuple(rows))


# ---------------------------------------------------------------------------
# Spec files: flat "key = value" lines, '#' comments, lists comma-separated.
# ---------------------------------------------------------------------------

_SPEC_KEYS = {f.name for f in ExperimentSpec.__dataclass_fields__.values()}  # type: ignore[attr-defined]


def parse_spec_file(path) -> ExperimentSpec:
    """Parse the flat key-value experiment format.

    Example::

        dataset = iris
        model = lr_l2
        reg_lambda = 0.05
        mechanisms = input, gradient_tight
        epsilon_grid = 0.01, 0.05, 0.25
        repetitions = 5
        base_seed = 7
    """
    text = Path(path).read_text(encoding="utf-8")
    raw: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}: line {line_no}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _SPEC_KEYS:
            raise ValueError(f"{path}: line {line_no}: unknown key {key!r}")
        raw[key] = value

    if "dataset" not in raw:
        raise ValueError(f"{path}: missing required key 'dataset'")
    if "mechanisms" not in raw:
        raise ValueError(f"{path}: missing required key 'mechanisms'")

    kwargs: dict = {
        "dataset": raw.pop("dataset"),
        "mechanisms": tuple(
            MechanismKind.parse(tok) for tok in raw.pop("mechanisms").split(",") if tok.strip()
        ),
    }
    converters = {
        "label_column": _label_column,
        "positive_label": str,
        "model": str,
        "reg_lambda": float,
        "mlp_width": int,
        "mlp_lipschitz": float,
        "mlp_smoothness": float,
        "assume_pl_mu": float,
        "epsilon_grid": lambda v: tuple(float(t) for t in v.split(",") if t.strip()),
        "delta": lambda v: None if v.lower() == "auto" else float(v),
        "repetitions": int,
        "base_seed": int,
        "test_fraction": float,
        "steps": int,
        "alpha": float,
        "radius": float,
        "init": str,
        "grid_search": _boolean,
        "calibration_c": float,
        "synth_n": int,
        "synth_dim": int,
        "synth_seed": int,
        "workers": int,
        "output": str,
        "out_format": str,
    }
    for key, value in raw.items():
        kwargs[key] = converters[key](value)
    return ExperimentSpec(**kwargs)


def _boolean(token: str) -> bool:
    t = token.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {token!r}")


def _label_column(token: str):
    t = token.strip()
    return int(t) if t.lstrip("-").isdigit() else t


class _Stopwatch:
    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (time.perf_counter() - self._t0) * 1000.0
        return False
