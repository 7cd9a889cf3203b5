"""Loss families with certified analytic constants, and the model vector.

All classification losses are margin losses l(y * score(x)): plain
logistic regression, L2-regularized logistic regression, and a
one-hidden-layer tanh MLP whose scalar output feeds the same logistic
loss. Each family carries its Lipschitz constant, smoothness constant,
and curvature certificate (strong convexity or a Polyak-Lojasiewicz
constant) for consumption by the noise-calibration code.

Everything is a pure function of immutable values and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import expit

__all__ = [
    "StronglyConvex",
    "PolyakLojasiewicz",
    "Convexity",
    "LossSpec",
    "ModelParams",
    "logistic",
    "logistic_l2",
    "mlp",
    "mlp_param_dim",
    "loss_value",
    "loss_gradient",
    "decision_scores",
    "ErmObjective",
    "project_vector",
    "project_to_ball",
    "finite_difference_gradient",
    "check_pl",
    "PLReport",
    "PL_SLACK_FLOOR",
]


@dataclass(frozen=True)
class StronglyConvex:
    """Curvature certificate: hessian lower-bounded by modulus * I."""

    modulus: float

    def __post_init__(self):
        if not self.modulus > 0.0:
            raise ValueError(f"strong-convexity modulus must be > 0, got {self.modulus}")


@dataclass(frozen=True)
class PolyakLojasiewicz:
    """Gradient-dominance certificate: ||grad||^2 >= 2 * modulus * (loss - inf).

    Weaker than strong convexity; a StronglyConvex(m) loss satisfies it
    with the same modulus. The modulus may be omitted where only the
    regime matters (noise calibration does not consume it).
    """

    modulus: float | None = None

    def __post_init__(self):
        if self.modulus is not None and not self.modulus > 0.0:
            raise ValueError(f"PL modulus must be > 0, got {self.modulus}")


Convexity = Union[StronglyConvex, PolyakLojasiewicz, None]


@dataclass(frozen=True)
class LossSpec:
    """A loss family together with its certified constants.

    lipschitz bounds |l'| (and hence per-sample gradient norms on
    unit-ball inputs), smoothness bounds the gradient's own Lipschitz
    constant, and loss_floor is the per-sample infimum. For the mlp
    family the constants are user-declared estimates: DP mechanisms clip
    per-sample gradients to `lipschitz` so the declared value is the one
    the privacy accounting actually sees.
    """

    family: str  # "logistic" | "logistic_l2" | "mlp"
    lipschitz: float
    smoothness: float
    convexity: Convexity = None
    loss_floor: float = 0.0
    reg_lambda: float = 0.0
    hidden_width: int = 0

    def __post_init__(self):
        if self.family not in ("logistic", "logistic_l2", "mlp"):
            raise ValueError(f"unknown loss family {self.family!r}")
        if not self.lipschitz > 0.0 or not self.smoothness > 0.0:
            raise ValueError("lipschitz and smoothness constants must be > 0")
        if self.reg_lambda < 0.0:
            raise ValueError("reg_lambda must be >= 0")
        if self.family == "mlp" and self.hidden_width < 1:
            raise ValueError("mlp needs hidden_width >= 1")


def logistic() -> LossSpec:
    """Plain logistic loss log(1 + exp(-y theta.x)) on unit-ball inputs."""
    return LossSpec(family="logistic", lipschitz=1.0, smoothness=0.25)


def logistic_l2(reg_lambda: float) -> LossSpec:
    """Logistic loss plus (reg_lambda/2)||theta||^2.

    Strongly convex with modulus exactly reg_lambda. The Lipschitz
    constant stays 1: the regularizer's gradient is data-independent, so
    it cancels in the adjacent-dataset sensitivity the accountant uses.
    """
    if not reg_lambda > 0.0:
        raise ValueError("reg_lambda must be > 0 for logistic_l2")
    return LossSpec(
        family="logistic_l2",
        lipschitz=1.0,
        smoothness=0.25 + reg_lambda,
        convexity=StronglyConvex(reg_lambda),
        reg_lambda=reg_lambda,
    )


def mlp(
    hidden_width: int,
    lipschitz: float = 1.0,
    smoothness: float = 1.0,
    convexity: Convexity = None,
) -> LossSpec:
    """One-hidden-layer tanh network (no biases), logistic loss on its
    scalar output. Constants are declared, not certified; curvature may
    be asserted as PolyakLojasiewicz(mu) by the caller."""
    if isinstance(convexity, StronglyConvex):
        raise ValueError("an MLP loss cannot be certified strongly convex")
    return LossSpec(
        family="mlp",
        lipschitz=float(lipschitz),
        smoothness=float(smoothness),
        convexity=convexity,
        hidden_width=int(hidden_width),
    )


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector with its projection radius.

    The library keeps ||theta|| <= radius on everything it hands back;
    intermediate values (e.g. a pre-projection noisy vector) may violate
    it transiently, which is exactly what `project_to_ball` is for.
    """

    theta: np.ndarray
    radius: float

    def __post_init__(self):
        v = np.array(self.theta, dtype=np.float64).reshape(-1)
        if not self.radius > 0.0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        v.setflags(write=False)
        object.__setattr__(self, "theta", v)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


def project_vector(theta: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of a raw vector onto the radius-ball."""
    v = np.asarray(theta, dtype=np.float64)
    # Re-check after scaling: one division can overshoot by an ulp.
    for _ in range(4):
        nrm = float(np.linalg.norm(v))
        if nrm <= radius:
            break
        v = v * (radius / nrm)
    return v

def project_to_ball(params: ModelParams) -> ModelParams:
    """Return params unchanged if inside its ball, else radially rescaled."""
    v = project_vector(params.theta, params.radius)
    if v is params.theta:
        return params
    return ModelParams(v, params.radius)


# ---------------------------------------------------------------------------
# Margin-loss primitives (numerically stable for |margin| up to 1e4 and far
# beyond: log(1+exp(-m)) is computed as logaddexp(0, -m)).
# ---------------------------------------------------------------------------

def _softplus(neg_margin):
    return np.logaddexp(0.0, neg_margin)


def _margin_slope(margin):
    # d/dm log(1+exp(-m)) = -sigmoid(-m)
    return -expit(-np.asarray(margin, dtype=np.float64))


def mlp_param_dim(n_features: int, hidden_width: int) -> int:
    """Flat parameter count: hidden weight matrix plus output weights."""
    return hidden_width * n_features + hidden_width


def _mlp_unpack(theta: np.ndarray, n_features: int, hidden_width: int):
    expected = mlp_param_dim(n_features, hidden_width)
    if theta.shape[0] != expected:
        raise ValueError(
            f"mlp with {n_features} inputs and width {hidden_width} needs "
            f"{expected} parameters, got {theta.shape[0]}"
        )
    w_hidden = theta[: hidden_width * n_features].reshape(hidden_width, n_features)
    w_out = theta[hidden_width * n_features :]
    return w_hidden, w_out


def _mlp_scores(theta: np.ndarray, X: np.ndarray, hidden_width: int):
    w_hidden, w_out = _mlp_unpack(theta, X.shape[1], hidden_width)
    hidden = np.tanh(X @ w_hidden.T)
    return hidden @ w_out, hidden, w_hidden, w_out


def decision_scores(spec: LossSpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Raw classifier scores; the predicted label is sign(score), sign(0)=+1."""
    theta = np.asarray(theta, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if spec.family == "mlp":
        scores, _, _, _ = _mlp_scores(theta, X, spec.hidden_width)
        return scores
    if theta.shape[0] != X.shape[1]:
        raise ValueError(f"theta has {theta.shape[0]} entries for {X.shape[1]} features")
    return X @ theta


def loss_value(spec: LossSpec, params: ModelParams, x, y: float) -> float:
    """Per-sample loss at one (x, y)."""
    score = float(decision_scores(spec, params.theta, x)[0])
    value = float(_softplus(-y * score))
    if spec.family == "logistic_l2":
        value += 0.5 * spec.reg_lambda * float(params.theta @ params.theta)
    return value


def loss_gradient(spec: LossSpec, params: ModelParams, x, y: float) -> np.ndarray:
    """Exact per-sample gradient at one (x, y)."""
    theta = params.theta
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if spec.family in ("logistic", "logistic_l2"):
        if theta.shape[0] != x.shape[0]:
            raise ValueError(f"theta has {theta.shape[0]} entries for {x.shape[0]} features")
        slope = float(_margin_slope(y * (x @ theta)))
        grad = (y * slope) * x
        if spec.family == "logistic_l2":
            grad = grad + spec.reg_lambda * theta
        return grad
    # One-hidden-layer backprop.
    scores, hidden, w_hidden, w_out = _mlp_scores(theta, x[None, :], spec.hidden_width)
    dscore = y * float(_margin_slope(y * scores[0]))
    h = hidden[0]
    d_out = dscore * h
    d_hidden = np.outer(dscore * w_out * (1.0 - h * h), x)
    return np.concatenate([d_hidden.ravel(), d_out])


class ErmObjective:
    """Mean loss over a dataset, with its exact analytic gradient.

    Implements the value/gradient/dim protocol the trainer consumes.
    `clip_gradients=True` clips per-sample gradients of the mlp family to
    the declared Lipschitz constant before averaging (training-time
    transform only: `value` stays exact). Margin families already satisfy
    the bound analytically on any inputs with ||x|| <= 1, so the flag is
    a no-op there.
    """

    def __init__(self, spec: LossSpec, dataset, clip_gradients: bool = False):
        self.spec = spec
        self.dataset = dataset
        self.clip_gradients = bool(clip_gradients)
        self._X = dataset.features
        self._y = dataset.labels
        if spec.family == "mlp":
            self.dim = mlp_param_dim(dataset.dim, spec.hidden_width)
        else:
            self.dim = dataset.dim

    @property
    def smoothness_bound(self) -> float:
        """Objective-level smoothness, valid for unit-ball feature rows."""
        return self.spec.smoothness

    def value(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        margins = self._y * decision_scores(self.spec, theta, self._X)
        value = float(_softplus(-margins).mean())
        if self.spec.family == "logistic_l2":
            value += 0.5 * self.spec.reg_lambda * float(theta @ theta)
        return value

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if self.spec.family == "mlp":
            return self._mlp_gradient(theta)
        scores = self._X @ theta
        coef = self._y * _margin_slope(self._y * scores)
        grad = self._X.T @ coef / self._X.shape[0]
        if self.spec.family == "logistic_l2":
            grad = grad + self.spec.reg_lambda * theta
        return grad

    def _mlp_gradient(self, theta: np.ndarray) -> np.ndarray:
        scores, hidden, w_hidden, w_out = _mlp_scores(theta, self._X, self.spec.hidden_width)
        n = self._X.shape[0]
        dscore = self._y * _margin_slope(self._y * scores)  # (n,)
        back = (1.0 - hidden * hidden) * w_out[None, :]      # (n, width)
        if self.clip_gradients:
            # ||g_i||^2 = dscore_i^2 (||back_i||^2 ||x_i||^2 + ||h_i||^2)
            sq = dscore**2 * (
                np.einsum("ij,ij->i", back, back) * np.einsum("ij,ij->i", self._X, self._X)
                + np.einsum("ij,ij->i", hidden, hidden)
            )
            norms = np.sqrt(sq)
            factors = np.where(norms > self.spec.lipschitz, self.spec.lipschitz / np.where(norms > 0, norms, 1.0), 1.0)
            dscore = dscore * factors
        d_out = hidden.T @ dscore / n
        d_hidden = (dscore[:, None] * back).T @ self._X / n
        return np.concatenate([d_hidden.ravel(), d_out])

    def per_sample_gradients(self, theta: np.ndarray) -> np.ndarray:
        """(n, dim) matrix of unclipped per-sample gradients."""
        theta = np.asarray(theta, dtype=np.float64)
        if self.spec.family == "mlp":
            scores, hidden, w_hidden, w_out = _mlp_scores(theta, self._X, self.spec.hidden_width)
            dscore = self._y * _margin_slope(self._y * scores)
            back = (1.0 - hidden * hidden) * w_out[None, :]
            d_hidden = (dscore[:, None] * back)[:, :, None] * self._X[:, None, :]
            d_out = dscore[:, None] * hidden
            return np.concatenate([d_hidden.reshape(self._X.shape[0], -1), d_out], axis=1)
        coef = self._y * _margin_slope(self._y * (self._X @ theta))
        grads = coef[:, None] * self._X
        if self.spec.family == "logistic_l2":
            grads = grads + self.spec.reg_lambda * theta[None, :]
        return grads


def finite_difference_gradient(
    func: Callable[[np.ndarray], float], theta: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient oracle, independent of any analytic path."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.shape[0]):
        bump = np.zeros_like(theta)
        bump[i] = step
        grad[i] = (func(theta + bump) - func(theta - bump)) / (2.0 * step)
    return grad


PL_SLACK_FLOOR = -1e-9


@dataclass(frozen=True)
class PLReport:
    """Per-probe slack of the gradient-dominance inequality."""

    modulus: float
    objective_min: float
    slacks: np.ndarray
    passed: bool


def check_pl(
    spec: LossSpec,
    objective,
    probe_points: Sequence[ModelParams],
    objective_min: float,
) -> PLReport:
    """Probe ||grad L||^2 - 2*mu*(L - L_min) at each point.

    Passes when every slack is >= -1e-9. The modulus comes from the
    spec's convexity certificate (strong convexity implies the inequality
    with the same modulus); `objective_min` should come from the oracle
    optimizer, and overestimating it only makes the check easier.
    """
    match spec.convexity:
        case StronglyConvex(modulus=m):
            mu = m
        case PolyakLojasiewicz(modulus=m) if m is not None:
            mu = m
        case _:
            raise ValueError("check_pl needs a StronglyConvex or PolyakLojasiewicz(mu) spec")
    slacks = np.empty(len(probe_points))
    for i, p in enumerate(probe_points):
        g = objective.gradient(p.theta)
        slacks[i] = float(g @ g) - 2.0 * mu * (objective.value(p.theta) - objective_min)
    return PLReport(
        modulus=mu,
        objective_min=objective_min,
        slacks=slacks,
        passed=bool(np.all(slacks >= PL_SLACK_FLOOR)),
    )
