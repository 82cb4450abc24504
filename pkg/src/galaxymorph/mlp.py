"""Dense feed-forward classifier trained with hand-written backpropagation.

Layers compute ``z = W a + b`` with ``W`` stored as (out, in).  Hidden
layers apply a pointwise activation, the output layer emits raw logits
which are turned into probabilities by a max-shifted softmax.  The
training objective is mean categorical cross-entropy plus
``l2 / 2 * sum(||W||_F^2)`` over weight matrices (biases excluded).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .dataset import NUM_CLASSES, Dataset
from .errors import DimensionError, NumericError, TrainingError
from .search import SearchResult, kfold_indices, select_best

FORMAT_VERSION = 1
LOG_FLOOR = 1e-12


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(z.dtype)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_grad(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _tanh_grad(z):
    t = np.tanh(z)
    return 1.0 - t * t


# name -> (activation, derivative w.r.t. its pre-activation)
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (_relu, _relu_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (lambda z: z, np.ones_like),
}


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int = 10
    hidden_dims: tuple[int, ...] = (64, 64)
    output_dim: int = NUM_CLASSES
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min((self.input_dim, self.output_dim) + self.hidden_dims) < 1:
            raise ValueError("all layer widths must be >= 1")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "hidden_activation": self.hidden_activation,
            "output_activation": "softmax",
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MlpArchitecture":
        return cls(
            int(data["input_dim"]),
            tuple(data["hidden_dims"]),
            int(data["output_dim"]),
            data.get("hidden_activation", "relu"),
        )


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Weights then biases; the order optimizers and gradients share."""
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self, architecture: MlpArchitecture) -> None:
        sizes = architecture.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise DimensionError("parameter count does not match architecture")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise DimensionError(f"layer {i} has shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"layer {i} has non-finite parameters")


def init_params(architecture: MlpArchitecture, rng: np.random.Generator) -> MlpParams:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    sizes = architecture.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def one_hot(labels, num_classes: int = NUM_CLASSES) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((y.size, num_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a vector or (n, q) matrix, max-shifted."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    """Per layer: the layer input ``a`` and, for hidden layers, ``z``."""

    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    logits: np.ndarray
    activation: str


def forward(params: MlpParams, x, activation: str = "relu") -> tuple[np.ndarray, ForwardCache]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.shape[1] != params.weights[0].shape[1]:
        raise DimensionError(f"expected {params.weights[0].shape[1]} input columns, got {a.shape[1]}")
    phi = ACTIVATIONS[activation][0]
    inputs, pre = [], []
    last = len(params.weights) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            inputs.append(a)
            z = a @ w.T + b
            if i == last:
                a = z
            else:
                pre.append(z)
                a = phi(z)
    if not np.all(np.isfinite(a)):
        raise NumericError("forward pass produced non-finite logits")
    return a, ForwardCache(inputs, pre, a, activation)


def cross_entropy_loss(probabilities: np.ndarray, targets: np.ndarray) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} vs targets {y.shape}")
    if p.ndim == 1:
        p, y = p[None, :], y[None, :]
    return float(-(y * np.log(np.maximum(p, LOG_FLOOR))).sum(axis=1).mean())


def l2_penalty(params: MlpParams, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return lam / 2.0 * sum(float(np.sum(w * w)) for w in params.weights)


def objective(loss: float, penalty: float) -> float:
    return loss + penalty


def evaluate_objective(params: MlpParams, x, targets, lam: float = 0.0, activation: str = "relu") -> float:
    logits, _ = forward(params, x, activation)
    return objective(cross_entropy_loss(softmax(logits), targets), l2_penalty(params, lam))


def backward(params: MlpParams, cache: ForwardCache, targets, lam: float = 0.0) -> MlpParams:
    """Gradient of the objective w.r.t. every weight and bias.

    Softmax and cross-entropy are differentiated together, so the error
    signal at the logits is ``(p - y) / batch``.
    """
    if len(cache.inputs) != len(params.weights) or len(cache.pre_activations) != len(params.weights) - 1:
        raise DimensionError("forward cache does not match parameter layers")
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != cache.logits.shape:
        raise DimensionError(f"targets {y.shape} vs logits {cache.logits.shape}")
    for a, w in zip(cache.inputs, params.weights):
        if a.shape[1] != w.shape[1]:
            raise DimensionError("forward cache does not match parameter shapes")
    dphi = ACTIVATIONS[cache.activation][1]
    batch = y.shape[0]
    delta = (softmax(cache.logits) - y) / batch
    grad_w: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = delta.T @ cache.inputs[i] + lam * params.weights[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * dphi(cache.pre_activations[i - 1])
    return MlpParams(grad_w, grad_b)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2: float = 0.0
    epochs: int = 50
    batch_size: int = 32
    seed: int = 17

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


class SGD:
    def __init__(self, lr: float = 1e-3):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    """Bias-corrected moment estimates; the state lives on the instance."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(config: TrainConfig) -> SGD | Adam:
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)


@dataclass
class TrainHistory:
    initial_loss: float = math.nan
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for e, (loss, acc) in enumerate(zip(self.loss, self.accuracy), start=1):
            row = {"epoch": e, "loss": loss, "accuracy": acc}
            if self.val_loss:
                row["val_loss"] = self.val_loss[e - 1]
                row["val_accuracy"] = self.val_accuracy[e - 1]
            out.append(row)
        return out


@dataclass
class MlpModel:
    architecture: MlpArchitecture
    params: MlpParams
    optimizer: str = "adam"
    seed: int = 17
    history: TrainHistory = field(default_factory=TrainHistory)

    def predict_proba(self, queries) -> np.ndarray:
        logits, _ = forward(self.params, queries, self.architecture.hidden_activation)
        return softmax(logits)

    def predict(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 2 and q.shape[0] == 0:
            if q.shape[1] != self.architecture.input_dim:
                raise DimensionError("query width does not match the model")
            return np.zeros(0, dtype=np.int64)
        # argmax returns the first maximum, i.e. the smallest class on ties
        return self.predict_proba(q).argmax(axis=1)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model": "mlp",
            "architecture": self.architecture.to_dict(),
            "weights": [{"shape": list(w.shape), "values": w.ravel(order="C").tolist()} for w in self.params.weights],
            "biases": [b.tolist() for b in self.params.biases],
            "optimizer": self.optimizer,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MlpModel":
        arch = MlpArchitecture.from_dict(data["architecture"])
        weights = [np.array(w["values"], dtype=np.float64).reshape(w["shape"]) for w in data["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in data["biases"]]
        params = MlpParams(weights, biases)
        params.check(arch)
        return cls(arch, params, data.get("optimizer", "adam"), int(data.get("seed", 0)))


def predict_mlp(model: MlpModel, queries) -> np.ndarray:
    return model.predict(queries)


def _full_pass(params: MlpParams, x, y_onehot, labels, lam, activation) -> tuple[float, float]:
    logits, _ = forward(params, x, activation)
    probs = softmax(logits)
    loss = objective(cross_entropy_loss(probs, y_onehot), l2_penalty(params, lam))
    return loss, float(np.mean(probs.argmax(axis=1) == labels))


def train(
    train_set: Dataset,
    architecture: MlpArchitecture | None = None,
    config: TrainConfig | None = None,
    validation: Dataset | None = None,
) -> tuple[MlpModel, TrainHistory]:
    """Mini-batch training; one generator seeded by ``config.seed`` drives
    the weight init and then every epoch's shuffle.

    History records the full-training-set objective and accuracy after
    each epoch, plus ``initial_loss`` before the first update.
    """
    config = config or TrainConfig()
    if architecture is None:
        architecture = MlpArchitecture(input_dim=train_set.n_features)
    if architecture.input_dim != train_set.n_features:
        raise DimensionError(
            f"architecture expects {architecture.input_dim} features, data has {train_set.n_features}"
        )
    if len(train_set) == 0:
        raise ValueError("cannot train on an empty dataset")
    q = architecture.output_dim
    x = train_set.features
    labels = train_set.labels
    y = one_hot(labels, q)
    act = architecture.hidden_activation
    rng = np.random.default_rng(config.seed)
    params = init_params(architecture, rng)
    opt = make_optimizer(config)
    history = TrainHistory()
    history.initial_loss = _full_pass(params, x, y, labels, config.l2, act)[0]
    if validation is not None:
        val_y = one_hot(validation.labels, q)

    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for batch, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = perm[start : start + config.batch_size]
            try:
                logits, cache = forward(params, x[idx], act)
            except NumericError:
                raise TrainingError(
                    f"non-finite logits at epoch {epoch}, batch {batch}", epoch, batch
                ) from None
            loss = objective(cross_entropy_loss(softmax(logits), y[idx]), l2_penalty(params, config.l2))
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch}", epoch, batch)
            grads = backward(params, cache, y[idx], config.l2)
            opt.step(params.arrays(), grads.arrays())
        try:
            loss, acc = _full_pass(params, x, y, labels, config.l2, act)
        except NumericError:
            raise TrainingError(f"non-finite logits after epoch {epoch}", epoch, 0) from None
        history.loss.append(loss)
        history.accuracy.append(acc)
        if validation is not None:
            vloss, vacc = _full_pass(params, validation.features, val_y, validation.labels, config.l2, act)
            history.val_loss.append(vloss)
            history.val_accuracy.append(vacc)

    model = MlpModel(architecture, params, config.optimizer, config.seed, history)
    return model, history


@dataclass(frozen=True)
class SearchSpace:
    """Each hidden width is used for every hidden layer."""

    hidden_widths: tuple[int, ...] = (16, 32, 64)
    activations: tuple[str, ...] = ("relu", "tanh", "sigmoid")
    optimizers: tuple[str, ...] = ("adam", "sgd")

    def configurations(self) -> list[dict]:
        return [
            {"hidden_width": h, "activation": a, "optimizer": o}
            for h, a, o in itertools.product(self.hidden_widths, self.activations, self.optimizers)
        ]


@dataclass(frozen=True)
class RandomSearchSpec:
    draws: int = 4
    folds: int = 3
    space: SearchSpace = SearchSpace()
    selection_metric: str = "accuracy"
    seed: int = 17
    hidden_layers: int = 2
    base_config: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.selection_metric not in ("accuracy", "mse"):
            raise ValueError("selection_metric must be 'accuracy' or 'mse'")
        if not self.space.configurations():
            raise ValueError("search space is empty")


def derive_seed(*keys: int) -> int:
    """Stable child seed from (base seed, candidate, fold, ...)."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def randomized_search(train_set: Dataset, spec: RandomSearchSpec | None = None, num_classes: int = NUM_CLASSES) -> SearchResult:
    """Sample configurations without replacement and score each by k-fold CV.

    Fold assignment is shared across candidates.  Every (candidate, fold)
    training run gets its own seed, so results do not depend on run order.
    """
    spec = spec or RandomSearchSpec()
    space = spec.space.configurations()
    rng = np.random.default_rng(spec.seed)
    warnings = []
    n_draws = spec.draws
    if n_draws > len(space):
        warnings.append(f"{spec.draws} draws requested from a space of {len(space)}; deduplicated to {len(space)}")
        n_draws = len(space)
    chosen = rng.choice(len(space), size=n_draws, replace=False)
    folds = kfold_indices(len(train_set), spec.folds, spec.seed)
    mse_mode = spec.selection_metric == "mse"

    candidates, fold_runs = [], []
    for ci, si in enumerate(chosen):
        cfg = space[int(si)]
        arch = MlpArchitecture(
            train_set.n_features,
            (cfg["hidden_width"],) * spec.hidden_layers,
            num_classes,
            cfg["activation"],
        )
        scores = []
        for fi, (tr, va) in enumerate(folds):
            seed = derive_seed(spec.seed, ci, fi)
            config = replace(spec.base_config, optimizer=cfg["optimizer"], seed=seed)
            model, _ = train(train_set.subset(tr), arch, config)
            val = train_set.subset(va)
            if mse_mode:
                probs = model.predict_proba(val.features)
                score = float(np.mean((probs - one_hot(val.labels, num_classes)) ** 2))
            else:
                score = float(np.mean(model.predict(val.features) == val.labels))
            scores.append(score)
            fold_runs.append({"candidate": ci, "fold": fi, "seed": seed, "score": score})
        candidates.append({"params": dict(cfg), "score": float(np.mean(scores)), "fold_scores": scores})

    best = select_best([c["score"] for c in candidates], higher_is_better=not mse_mode)
    return SearchResult(spec.selection_metric, candidates, best, not mse_mode, [], warnings, fold_runs)
