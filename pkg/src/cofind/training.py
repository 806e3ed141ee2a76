"""Logistic losses for the pairwise and unary scorers, their analytic gradients, and SGD."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

import numpy as np
from scipy.special import expit

from .core import BACKGROUND, Episode, UnlabeledError, relation_to_bag
from .potentials import RelationModel, UnaryMode, aggregate_unary, softmax_weights


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    decay_factor: float = 0.5
    decay_every: int = 2000
    num_steps: int = 10000
    batch_episodes: int = 1
    seed: int = 0
    init_scale: float = 0.05
    pair_budget: int = 512

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.num_steps < 0 or self.decay_every < 1 or self.batch_episodes < 1:
            raise ValueError("num_steps >= 0, decay_every >= 1 and batch_episodes >= 1 required")

    def lr_at(self, step: int) -> float:
        return self.learning_rate * self.decay_factor ** (step // self.decay_every)


class PairSamples(NamedTuple):
    """Row-aligned training pairs: ``(F[n], G[n])`` with relation label ``labels[n]`` in {+1, -1}."""

    F: np.ndarray
    G: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @classmethod
    def concat(cls, parts) -> "PairSamples":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls._fields))


class TrainResult(NamedTuple):
    model: RelationModel
    trace: list  # (step, loss, learning_rate)


def softplus(x):
    return np.logaddexp(0.0, x)


# -- pair sampling -------------------------------------------------------------


def sample_training_pairs(episode: Episode, rng: np.random.Generator,
                          budget: Optional[int] = 512) -> PairSamples:
    """Cross-bag pairs ``(item of bag i, item of bag j)``, ``i > j``, labelled by the relation.

    Beyond ``budget`` pairs a uniform subsample without replacement is kept.
    """
    if not episode.is_labeled:
        raise UnlabeledError("training pairs need a labeled episode")
    bags = episode.positive_bags
    bag_of = np.repeat(np.arange(len(bags)), [len(b) for b in bags])
    idx_f, idx_g = np.nonzero(bag_of[:, None] > bag_of[None, :])
    if budget is not None and idx_f.size > budget:
        keep = np.sort(rng.choice(idx_f.size, size=budget, replace=False))
        idx_f, idx_g = idx_f[keep], idx_g[keep]
    X = np.concatenate([b.features for b in bags])
    y = np.concatenate([b.labels for b in bags])
    yf, yg = y[idx_f], y[idx_g]
    labels = np.where((yf == yg) & (yf != BACKGROUND), 1.0, -1.0)
    return PairSamples(X[idx_f], X[idx_g], labels)


# -- scorer backward pass ----------------------------------------------------------


def _score_backward(model: RelationModel, F, G, dscore):
    """Gradients of ``sum(dscore * score(F, G))`` w.r.t. the scorer parameters."""
    X = np.concatenate([F, G], axis=1)
    a1 = X @ model.W1.T + model.b1
    a2 = X @ model.W2.T + model.b2
    t, s = np.tanh(a1), expit(a2)
    h = t * s + 0.5 * (F + G)
    dh = dscore[:, None] * model.w[None, :]
    d1 = dh * s * (1.0 - t * t)
    d2 = dh * t * s * (1.0 - s)
    return {
        "W1": d1.T @ X,
        "W2": d2.T @ X,
        "b1": d1.sum(axis=0),
        "b2": d2.sum(axis=0),
        "w": h.T @ dscore,
        "b": float(dscore.sum()),
    }


def _as_model(grads: dict, nu_grad: Optional[float]) -> RelationModel:
    return RelationModel(grads["W1"], grads["W2"], grads["b1"], grads["b2"],
                         grads["w"], grads["b"], nu_grad)


# -- pairwise loss ---------------------------------------------------------------------


def pairwise_loss(samples: PairSamples, model: RelationModel) -> float:
    if len(samples) == 0:
        raise ValueError("no pair samples")
    r = model.pair_scores(samples.F, samples.G)
    return float(np.mean(softplus(-samples.labels * r)))


def pairwise_grad(samples: PairSamples, model: RelationModel) -> RelationModel:
    if len(samples) == 0:
        raise ValueError("no pair samples")
    y = samples.labels
    r = model.pair_scores(samples.F, samples.G)
    dscore = -y * expit(-y * r) / len(y)
    grads = _score_backward(model, samples.F, samples.G, dscore)
    return _as_model(grads, None if model.nu is None else 0.0)


# -- unary loss --------------------------------------------------------------------------


def _unary_inputs(episode: Episode):
    if not episode.is_labeled:
        raise UnlabeledError("unary loss needs a labeled episode")
    neg = episode.negative_bag
    if neg is None or len(neg) == 0:
        raise ValueError("unary loss needs a non-empty negative bag")
    E = np.concatenate([b.features for b in episode.positive_bags])
    labels = np.concatenate([b.labels for b in episode.positive_bags])
    R = np.array([relation_to_bag(c, neg) for c in labels], dtype=np.float64)
    return E, neg.features, R


def _unary_forward(E, NEG, model):
    n, m = len(E), len(NEG)
    F = np.repeat(E, m, axis=0)
    G = np.tile(NEG, (n, 1))
    return F, G, model.pair_scores(F, G).reshape(n, m)


def unary_loss(episode: Episode, model: RelationModel, mode=UnaryMode.SOFTMAX) -> float:
    E, NEG, R = _unary_inputs(episode)
    _, _, u = _unary_forward(E, NEG, model)
    psi = aggregate_unary(u, model.nu, mode)
    return float(np.mean(softplus(-R * psi)))


def _aggregate_backward(u, nu, mode):
    """``(dpsi/du, dpsi/dnu)`` row-wise for the aggregator."""
    n, m = u.shape
    if mode is UnaryMode.NONE:
        return np.zeros_like(u), np.zeros(n)
    if mode is UnaryMode.MEAN:
        return np.full_like(u, 1.0 / m), np.zeros(n)
    if mode is UnaryMode.MAX:
        onehot = np.zeros_like(u)
        onehot[np.arange(n), np.argmax(u, axis=1)] = 1.0
        return onehot, np.zeros(n)
    nu = float(nu if nu is not None else 0.0)
    clamped = nu < 0
    nu = max(nu, 0.0)
    p = softmax_weights(u, nu)
    psi = np.sum(p * u, axis=1, keepdims=True)
    dpsi_du = p * (1.0 + nu * (u - psi))
    dpsi_dnu = np.zeros(n) if clamped else np.sum(p * u * (u - psi), axis=1)
    return dpsi_du, dpsi_dnu


def unary_grad(episode: Episode, model: RelationModel, mode=UnaryMode.SOFTMAX) -> RelationModel:
    """Gradient of ``unary_loss``, including the temperature when the model carries one."""
    mode = UnaryMode.parse(mode)
    E, NEG, R = _unary_inputs(episode)
    F, G, u = _unary_forward(E, NEG, model)
    psi = aggregate_unary(u, model.nu, mode)
    dpsi = -R * expit(-R * psi) / len(R)
    dpsi_du, dpsi_dnu = _aggregate_backward(u, model.nu, mode)
    dscore = (dpsi[:, None] * dpsi_du).ravel()
    grads = _score_backward(model, F, G, dscore)
    nu_grad = None if model.nu is None else float(np.dot(dpsi, dpsi_dnu))
    return _as_model(grads, nu_grad)


# -- SGD -------------------------------------------------------------------------------------


def train(role: str, episodes: Iterable[Episode], config: TrainConfig = TrainConfig(),
          unary_mode=UnaryMode.SOFTMAX, init: Optional[RelationModel] = None) -> TrainResult:
    """Plain SGD with step decay on a stream of labeled episodes.

    ``role`` is ``"pairwise"`` or ``"unary"``. Unary models carry a temperature
    (initially 1.0), learned jointly and clamped at 0 after every step.
    """
    if role not in ("pairwise", "unary"):
        raise ValueError(f"role must be 'pairwise' or 'unary', got {role!r}")
    unary_mode = UnaryMode.parse(unary_mode)
    stream = iter(episodes)
    first = next(stream, None)
    if first is None:
        raise ValueError("empty episode stream")
    stream = itertools.chain([first], stream)
    if init is None:
        init = RelationModel.random(first.dim, np.random.default_rng([config.seed, 0]),
                                    config.init_scale, nu=1.0 if role == "unary" else None)
    pair_rng = np.random.default_rng([config.seed, 1])

    model, vec = init, init.to_vector()
    trace = []
    for step in range(config.num_steps):
        batch = list(itertools.islice(stream, config.batch_episodes))
        if not batch:
            break
        if role == "pairwise":
            samples = PairSamples.concat(
                sample_training_pairs(ep, pair_rng, config.pair_budget) for ep in batch
            )
            loss, grad = pairwise_loss(samples, model), pairwise_grad(samples, model).to_vector()
        else:
            loss = np.mean([unary_loss(ep, model, unary_mode) for ep in batch])
            grad = np.mean([unary_grad(ep, model, unary_mode).to_vector() for ep in batch], axis=0)
        lr = config.lr_at(step)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingError(f"non-finite loss or gradient at step {step} (loss={loss}, lr={lr})")
        trace.append((step, float(loss), lr))
        vec = vec - lr * grad
        if not np.all(np.isfinite(vec)):
            raise TrainingError(f"parameters overflowed at step {step} (loss={loss}, lr={lr})")
        if model.nu is not None:
            vec[-1] = max(vec[-1], 0.0)
        model = model.from_vector(vec)
    return TrainResult(model, trace)


def write_loss_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "learning_rate"])
        writer.writerows(trace)
