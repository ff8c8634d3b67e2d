"""Per-kind CNN diagnosis models, majority voting, and the linear SVM baseline."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .neuralnet import (
    Conv,
    FixedNormalize,
    Flatten,
    FullyConnected,
    Network,
    ReLU,
    backward,
    forward,
    predict_logits,
    sgd_step,
    softmax,
)
from .preprocess import CaseBundle, ImageKind
from .recording import Label

log = logging.getLogger(__name__)

# class index 0 is Negative so that argmax ties fall to Negative
CLASS_LABELS = (Label.NEGATIVE, Label.POSITIVE)


def label_index(label: Label) -> int:
    if label is Label.UNKNOWN:
        raise ValueError("unlabeled case")
    return CLASS_LABELS.index(label)


def build_default_cnn(side: int = 64, seed: int = 0) -> Network:
    """Normalization, 4 valid convolutions and 2 fully connected layers.

    Input is two channels (left and right foot images of one kind). At
    ``side=64`` the feature map before flattening is 64x9x9 and the network
    holds 937,024 parameters.
    """
    layers = [
        FixedNormalize(),
        Conv(2, 16, 5, stride=2),
        ReLU(),
        Conv(16, 32, 5, stride=2),
        ReLU(),
        Conv(32, 48, 3),
        ReLU(),
        Conv(48, 64, 3),
        ReLU(),
        Flatten(),
    ]
    shape = (2, side, side)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers += [FullyConnected(shape[0], 170), ReLU(), FullyConnected(170, 2)]
    return Network(layers, (2, side, side)).init_params(seed)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def stack_kind(cases: list[CaseBundle], kind: ImageKind) -> np.ndarray:
    return np.stack([c.pair(kind) for c in cases])


def _labels(cases: list[CaseBundle]) -> np.ndarray:
    y = np.array([label_index(c.label) for c in cases])
    if (y == 0).sum() < 2 or (y == 1).sum() < 2:
        raise ValueError("training needs at least 2 cases of each class")
    return y


def train_model(
    kind: ImageKind, cases: list[CaseBundle], config: TrainConfig = TrainConfig(), net: Network | None = None
) -> tuple[Network, list[float]]:
    """Mini-batch SGD with momentum on the ``kind`` image pair of each case.

    Returns the trained network and the mean training loss of every epoch.
    """
    y = _labels(cases)
    x = stack_kind(cases, kind)
    if net is None:
        net = build_default_cnn(x.shape[-1], seed=config.seed)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, cache = forward(net, x[idx])
            grads, loss = backward(net, cache, y[idx])
            sgd_step(net, grads, config.learning_rate, config.momentum)
            total += loss * len(idx)
        curve.append(total / len(x))
        log.debug("%s epoch %d loss %.6f", kind.value, epoch + 1, curve[-1])
    return net, curve


def probabilities(net: Network, batch: np.ndarray) -> np.ndarray:
    return softmax(predict_logits(net, batch))


def decide(probs: np.ndarray) -> Label:
    # strict comparison: a tie goes to Negative
    return Label.POSITIVE if probs[1] > probs[0] else Label.NEGATIVE


def predict(net: Network, case: CaseBundle, kind: ImageKind) -> tuple[Label, np.ndarray]:
    probs = probabilities(net, case.pair(kind)[None])[0]
    return decide(probs), probs


def predict_many(net: Network, cases: list[CaseBundle], kind: ImageKind) -> list[Label]:
    if not cases:
        return []
    return [decide(p) for p in probabilities(net, stack_kind(cases, kind))]


def majority(votes) -> Label:
    votes = list(votes)
    positives = sum(v is Label.POSITIVE for v in votes)
    return Label.POSITIVE if positives * 2 > len(votes) else Label.NEGATIVE


@dataclass
class EnsembleModel:
    max_model: Network
    sum_model: Network
    average_model: Network

    def __post_init__(self):
        shapes = {self.max_model.input_shape, self.sum_model.input_shape, self.average_model.input_shape}
        if len(shapes) != 1:
            raise ValueError(f"ensemble members disagree on input shape: {shapes}")

    def model(self, kind: ImageKind) -> Network:
        return {
            ImageKind.MAX: self.max_model,
            ImageKind.SUM: self.sum_model,
            ImageKind.AVERAGE: self.average_model,
        }[kind]


def vote(ensemble: EnsembleModel, case: CaseBundle) -> tuple[Label, dict[ImageKind, Label]]:
    votes = {kind: predict(ensemble.model(kind), case, kind)[0] for kind in ImageKind}
    return majority(votes.values()), votes


# ---------------------------------------------------------------------------
# SVM baseline


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stddevs: np.ndarray
    dropped: list[int] = field(default_factory=list)
    objective_curve: list[float] = field(default_factory=list)

    def decision(self, vectors: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(vectors) - self.feature_means) / self.feature_stddevs
        return z @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "feature_means": self.feature_means.tolist(),
            "feature_stddevs": self.feature_stddevs.tolist(),
            "dropped": list(self.dropped),
            "objective_curve": list(self.objective_curve),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            float(d["bias"]),
            np.asarray(d["feature_means"], dtype=np.float64),
            np.asarray(d["feature_stddevs"], dtype=np.float64),
            list(d.get("dropped", [])),
            list(d.get("objective_curve", [])),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def svm_objective(w: np.ndarray, b: float, z: np.ndarray, y: np.ndarray, lam: float) -> float:
    """``lam/2 (|w|^2 + b^2) + mean(max(0, 1 - y (w.z + b)))``, ``y`` in {-1, +1}."""
    hinge = np.maximum(0.0, 1.0 - y * (z @ w + b))
    return float(0.5 * lam * (w @ w + b * b) + hinge.mean())


def train_svm(vectors, labels, lam: float = 1e-3, epochs: int = 200, seed: int = 0) -> SvmModel:
    """Linear SVM by Pegasos subgradient steps ``1 / (lam * t)``.

    Features are standardized with training statistics; zero-variance
    dimensions are dropped (weight fixed at 0). Each epoch visits every
    example once in a seeded order. At the end of an epoch the running
    average of the iterates replaces the kept model if it lowers the
    training objective; early averages of Pegasos can overshoot, so this
    keeps ``objective_curve`` (the kept model's objective per epoch)
    non-increasing without touching the optimizer's own trajectory.
    """
    x = np.asarray(vectors, dtype=np.float64)
    y_lab = [Label(v) if not isinstance(v, Label) else v for v in labels]
    y = np.array([1.0 if v is Label.POSITIVE else -1.0 for v in y_lab])
    if any(v is Label.UNKNOWN for v in y_lab):
        raise ValueError("unlabeled training vector")
    if not ((y > 0).any() and (y < 0).any()):
        raise ValueError("SVM training needs both classes")
    if lam <= 0:
        raise ValueError("lambda must be positive")

    means = x.mean(axis=0)
    stds = x.std(axis=0)
    dropped = [int(i) for i in np.flatnonzero(stds <= 1e-12)]
    for i in dropped:
        log.warning("SVM: feature %d has zero variance; dropped", i)
    stds = np.where(stds <= 1e-12, 1.0, stds)
    keep = np.ones(x.shape[1], dtype=bool)
    keep[dropped] = False
    z = np.where(keep, (x - means) / stds, 0.0)

    # bias rides along as a constant feature, so it is regularized with w
    za = np.hstack([z, np.ones((len(z), 1))])
    rng = np.random.Generator(np.random.PCG64(seed))
    n, d = za.shape
    w = np.zeros(d)
    w_sum = np.zeros(d)
    radius = 1.0 / np.sqrt(lam)
    t = 0
    curve = []
    best = np.zeros(d)
    best_obj = svm_objective(best[:-1], best[-1], z, y, lam)
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[i] * (za[i] @ w) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y[i] * za[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
            w_sum += w
        avg = w_sum / t
        obj = svm_objective(avg[:-1], avg[-1], z, y, lam)
        if obj <= best_obj:
            best, best_obj = avg, obj
        curve.append(best_obj)
    return SvmModel(np.where(keep, best[:-1], 0.0), float(best[-1]), means, stds, dropped, curve)


def svm_predict(model: SvmModel, vector) -> Label:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != model.feature_means.shape:
        raise ValueError(f"expected a {model.feature_means.shape[0]}-vector, got shape {vector.shape}")
    return Label.POSITIVE if model.decision(vector)[0] > 0 else Label.NEGATIVE


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
