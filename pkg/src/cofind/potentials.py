"""Relation scorers, unary aggregation, and lazy memoizing potential providers.

A *scorer* maps an ordered feature pair to a real relation score (higher means
more related). Two scorers ship here: the learnable gated ``RelationModel`` and
the fixed ``CosineRelation`` baseline. Scorers expose

* ``pair_scores(F, G)`` -- scores of row-aligned pairs, and
* ``compile(X)`` -- per-item precomputation over a stacked feature matrix,
  returning a callable ``(ia, ib) -> scores`` on row indices of ``X``.

Providers bind scorers to one episode. Pairwise potentials are the negated
score of ``(item of bag i, item of bag j)`` with ``i > j`` and are evaluated
lazily, once per key.
"""
from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .core import Bag, Episode

PARAM_NAMES = ("W1", "W2", "b1", "b2", "w", "b")


class UnaryMode(enum.Enum):
    SOFTMAX = "softmax"
    MAX = "max"
    MEAN = "mean"
    NONE = "none"

    @classmethod
    def parse(cls, value) -> "UnaryMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True, eq=False)
class RelationModel:
    """Gated single-layer relation scorer.

    ``embed([f, g]) = tanh(W1 [f, g] + b1) * sigmoid(W2 [f, g] + b2) + (f + g) / 2``
    and ``score = w . embed + b``. ``nu`` is the unary softmax temperature and is
    ``None`` on models used only for pairwise potentials.
    """

    W1: np.ndarray
    W2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    w: np.ndarray
    b: float
    nu: Optional[float] = None

    def __post_init__(self):
        W1 = np.array(self.W1, dtype=np.float64)
        d = W1.shape[0]
        shapes = {"W1": (d, 2 * d), "W2": (d, 2 * d), "b1": (d,), "b2": (d,), "w": (d,)}
        for name, shape in shapes.items():
            arr = W1 if name == "W1" else np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "b", float(self.b))
        if self.nu is not None:
            object.__setattr__(self, "nu", float(self.nu))
        if not np.isfinite(self.b) or (self.nu is not None and not np.isfinite(self.nu)):
            raise ValueError("b and nu must be finite")

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def zeros(cls, dim: int, b: float = 0.0, nu: Optional[float] = None) -> "RelationModel":
        z = np.zeros
        return cls(z((dim, 2 * dim)), z((dim, 2 * dim)), z(dim), z(dim), z(dim), b, nu)

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, scale: float = 0.05,
               nu: Optional[float] = None) -> "RelationModel":
        """Weights uniform in ``[-scale, scale]``, biases zero."""
        u = lambda *shape: rng.uniform(-scale, scale, size=shape)
        W1, W2, w = u(dim, 2 * dim), u(dim, 2 * dim), u(dim)
        return cls(W1, W2, np.zeros(dim), np.zeros(dim), w, 0.0, nu)

    # -- flat parameter view (training, finite differences) ----------------

    def to_vector(self) -> np.ndarray:
        parts = [np.ravel(getattr(self, n)) for n in PARAM_NAMES]
        if self.nu is not None:
            parts.append([self.nu])
        return np.concatenate(parts)

    def from_vector(self, vec: np.ndarray) -> "RelationModel":
        d = self.dim
        sizes = [2 * d * d, 2 * d * d, d, d, d, 1]
        cuts = np.cumsum(sizes)
        vec = np.asarray(vec, dtype=np.float64)
        W1, W2, b1, b2, w, b, rest = np.split(vec, cuts)
        nu = None if self.nu is None else float(rest[0])
        return RelationModel(W1.reshape(d, 2 * d), W2.reshape(d, 2 * d), b1, b2, w, float(b[0]), nu)

    # -- evaluation ------------------------------------------------------------

    def _preactivations(self, F: np.ndarray, G: np.ndarray):
        X = np.concatenate([F, G], axis=-1)
        return X @ self.W1.T + self.b1, X @ self.W2.T + self.b2

    def embed(self, F, G) -> np.ndarray:
        F, G = _check_pair(F, G, self.dim)
        a1, a2 = self._preactivations(F, G)
        return np.tanh(a1) * expit(a2) + 0.5 * (F + G)

    def pair_scores(self, F, G) -> np.ndarray:
        return self.embed(F, G) @ self.w + self.b

    def compile(self, X: np.ndarray) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
        d = self.dim
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != d:
            raise ValueError(f"features have dimension {X.shape[-1]}, model expects {d}")
        first1, second1 = X @ self.W1[:, :d].T, X @ self.W1[:, d:].T
        first2, second2 = X @ self.W2[:, :d].T, X @ self.W2[:, d:].T
        half = 0.5 * X

        def score(ia, ib):
            a1 = first1[ia] + second1[ib] + self.b1
            a2 = first2[ia] + second2[ib] + self.b2
            h = np.tanh(a1) * expit(a2) + (half[ia] + half[ib])
            return h @ self.w + self.b

        return score

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        out = {"dim": self.dim}
        for name in PARAM_NAMES[:-1]:
            out[name] = getattr(self, name).tolist()
        out["b"] = self.b
        if self.nu is not None:
            out["nu"] = self.nu
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RelationModel":
        try:
            model = cls(*(data[n] for n in PARAM_NAMES), nu=data.get("nu"))
        except KeyError as exc:
            raise ValueError(f"model is missing field {exc.args[0]!r}") from None
        if "dim" in data and int(data["dim"]) != model.dim:
            raise ValueError(f"model dim {data['dim']} disagrees with weights ({model.dim})")
        return model

    def save(self, path) -> None:
        # json writes the shortest repr that round-trips each double exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "RelationModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, RelationModel):
            return NotImplemented
        return self.nu == other.nu and np.array_equal(self.to_vector(), other.to_vector())

    __hash__ = None


@dataclass(frozen=True)
class CosineRelation:
    """Fixed cosine-similarity scorer; zero vectors score 0."""

    nu: float = 5.0

    def pair_scores(self, F, G) -> np.ndarray:
        F, G = _check_pair(F, G, None)
        return np.sum(_unit_rows(F) * _unit_rows(G), axis=-1)

    def compile(self, X: np.ndarray):
        U = _unit_rows(np.asarray(X, dtype=np.float64))
        return lambda ia, ib: np.einsum("ij,ij->i", U[ia], U[ib])


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


def _check_pair(F, G, dim):
    F = np.asarray(F, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if F.shape != G.shape:
        raise ValueError(f"feature shapes differ: {F.shape} vs {G.shape}")
    if dim is not None and F.shape[-1] != dim:
        raise ValueError(f"features have dimension {F.shape[-1]}, model expects {dim}")
    return F, G


def embed_pair(f, g, model: RelationModel) -> np.ndarray:
    return model.embed(f, g)


def relation_score(f, g, model) -> float:
    """Relation score of the ordered pair ``(f, g)``; not symmetric in general."""
    return float(model.pair_scores(f, g))


def unary_scores(e, negative_bag: Bag, model) -> np.ndarray:
    """Scores of ``e`` against every negative item, in bag order."""
    if negative_bag is None or len(negative_bag) == 0:
        raise ValueError("negative bag is empty")
    neg = negative_bag.features
    E = np.broadcast_to(np.asarray(e, dtype=np.float64), neg.shape)
    return model.pair_scores(E, neg)


def softmax_weights(u: np.ndarray, nu: float) -> np.ndarray:
    z = nu * (u - np.max(u, axis=-1, keepdims=True))
    ez = np.exp(z)
    return ez / np.sum(ez, axis=-1, keepdims=True)


def aggregate_unary(u, nu: Optional[float], mode) -> np.ndarray | float:
    """Reduce relation scores against the negative bag (last axis) to a unary value.

    SOFTMAX is the exponentially weighted average ``sum(u * exp(nu u)) / sum(exp(nu u))``
    with ``nu`` clamped at 0 (``nu = 0`` gives the mean, ``nu -> inf`` the max).
    """
    mode = UnaryMode.parse(mode)
    u = np.asarray(u, dtype=np.float64)
    if mode is UnaryMode.NONE:
        out = np.zeros(u.shape[:-1])
    elif mode is UnaryMode.MEAN:
        out = np.mean(u, axis=-1)
    elif mode is UnaryMode.MAX:
        out = np.max(u, axis=-1)
    else:
        nu = max(float(nu if nu is not None else 0.0), 0.0)
        out = np.sum(softmax_weights(u, nu) * u, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def unary_potential(e, negative_bag: Optional[Bag], model, mode) -> float:
    mode = UnaryMode.parse(mode)
    if mode is UnaryMode.NONE or negative_bag is None or model is None:
        return 0.0
    return aggregate_unary(unary_scores(e, negative_bag, model), model.nu, mode)


# -- providers -----------------------------------------------------------------


class PotentialProvider:
    """Lazy, memoizing, instrumented potentials for one episode.

    Subclasses implement ``_score_pairs(i, j, rows, cols)`` (potentials for
    row-aligned item pairs of bags ``i > j``) and ``_unary_values(i)``.
    """

    def __init__(self, episode: Episode):
        self.episode = episode
        self.bag_sizes = episode.bag_sizes
        self._values: dict = {}
        self._known: dict = {}
        self._unary: dict = {}
        self._lock = threading.Lock()
        self.pairwise_evaluated = 0
        self.pairwise_total_possible = sum(
            self.bag_sizes[i] * self.bag_sizes[j]
            for i in range(len(self.bag_sizes)) for j in range(i)
        )

    @property
    def num_bags(self) -> int:
        return len(self.bag_sizes)

    @property
    def pairwise_fraction(self) -> float:
        total = self.pairwise_total_possible
        return self.pairwise_evaluated / total if total else 0.0

    def pairwise_block(self, i: int, j: int, rows, cols) -> np.ndarray:
        """Potentials of items ``rows`` of bag ``i`` against ``cols`` of bag ``j`` (``i > j``)."""
        if not i > j:
            raise ValueError(f"pairwise potentials are keyed with bag_i > bag_j, got ({i}, {j})")
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        with self._lock:
            if (i, j) not in self._values:
                shape = (self.bag_sizes[i], self.bag_sizes[j])
                self._values[i, j] = np.zeros(shape)
                self._known[i, j] = np.zeros(shape, dtype=bool)
            values, known = self._values[i, j], self._known[i, j]
            ur, uc = np.unique(rows), np.unique(cols)
            sub = known[np.ix_(ur, uc)]
            if not sub.all():
                rr, cc = np.nonzero(~sub)
                r, c = ur[rr], uc[cc]
                values[r, c] = self._score_pairs(i, j, r, c)
                known[r, c] = True
                self.pairwise_evaluated += r.size
        return values[np.ix_(rows, cols)]

    def cross(self, a: int, b: int, rows, cols) -> np.ndarray:
        """Potentials between items ``rows`` of bag ``a`` and ``cols`` of bag ``b`` in either order."""
        if a > b:
            return self.pairwise_block(a, b, rows, cols)
        return self.pairwise_block(b, a, cols, rows).T

    def pairwise(self, i: int, p: int, j: int, q: int) -> float:
        return float(self.pairwise_block(i, j, [p], [q])[0, 0])

    def unary(self, i: int) -> np.ndarray:
        """Unary potentials (without the eta weight) of every item of bag ``i``."""
        with self._lock:
            if i not in self._unary:
                vals = np.asarray(self._unary_values(i), dtype=np.float64)
                vals.setflags(write=False)
                self._unary[i] = vals
            return self._unary[i]

    def _score_pairs(self, i, j, rows, cols) -> np.ndarray:
        raise NotImplementedError

    def _unary_values(self, i) -> np.ndarray:
        raise NotImplementedError


class RelationProvider(PotentialProvider):
    """Potentials from a pairwise scorer and an optional unary scorer."""

    def __init__(self, episode: Episode, pairwise, unary=None,
                 unary_mode=UnaryMode.SOFTMAX):
        super().__init__(episode)
        self.pairwise_scorer = pairwise
        self.unary_scorer = unary
        self.unary_mode = UnaryMode.parse(unary_mode)
        sizes = [len(b) for b in episode.positive_bags]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        self._features = [b.features for b in episode.positive_bags]
        if episode.negative_bag is not None:
            self._features.append(episode.negative_bag.features)
        self._X = np.concatenate(self._features)
        self._compiled_pair = None
        self._compiled_unary = None

    @property
    def uses_unary(self) -> bool:
        return (self.unary_mode is not UnaryMode.NONE and self.unary_scorer is not None
                and self.episode.negative_bag is not None)

    def _score_pairs(self, i, j, rows, cols):
        if self._compiled_pair is None:
            self._compiled_pair = self.pairwise_scorer.compile(self._X)
        off = self._offsets
        return -self._compiled_pair(off[i] + rows, off[j] + cols)

    def _unary_values(self, i):
        size = self.bag_sizes[i]
        if not self.uses_unary:
            return np.zeros(size)
        if self._compiled_unary is None:
            self._compiled_unary = self.unary_scorer.compile(self._X)
        neg0 = self._offsets[-1]
        n_neg = len(self.episode.negative_bag)
        ia = np.repeat(self._offsets[i] + np.arange(size), n_neg)
        ib = np.tile(neg0 + np.arange(n_neg), size)
        u = self._compiled_unary(ia, ib).reshape(size, n_neg)
        return aggregate_unary(u, getattr(self.unary_scorer, "nu", None), self.unary_mode)


class TableProvider(PotentialProvider):
    """Potentials read from explicit tables.

    ``pairwise[(i, j)]`` (``i > j``) is a ``(B_i, B_j)`` array and ``unary[i]`` a
    length ``B_i`` vector. Missing pairwise tables are zero.
    """

    def __init__(self, episode: Episode, pairwise: dict, unary: Optional[Sequence] = None):
        super().__init__(episode)
        self.tables = {k: np.asarray(v, dtype=np.float64) for k, v in pairwise.items()}
        for (i, j), t in self.tables.items():
            if not i > j or t.shape != (self.bag_sizes[i], self.bag_sizes[j]):
                raise ValueError(f"bad pairwise table for bags ({i}, {j}) with shape {t.shape}")
        if unary is None:
            unary = [np.zeros(n) for n in self.bag_sizes]
        self.unary_tables = [np.asarray(u, dtype=np.float64) for u in unary]

    @classmethod
    def from_sizes(cls, bag_sizes: Sequence[int], pairwise: dict,
                   unary: Optional[Sequence] = None) -> "TableProvider":
        episode = Episode(tuple(Bag(np.zeros((n, 1))) for n in bag_sizes))
        return cls(episode, pairwise, unary)

    @classmethod
    def random(cls, bag_sizes: Sequence[int], rng: np.random.Generator,
               with_unary: bool = True) -> "TableProvider":
        """Independent standard-normal potentials, useful as an adversary-free test bed."""
        n = len(bag_sizes)
        pairwise = {(i, j): rng.standard_normal((bag_sizes[i], bag_sizes[j]))
                    for i in range(n) for j in range(i)}
        unary = [rng.standard_normal(b) if with_unary else np.zeros(b) for b in bag_sizes]
        return cls.from_sizes(bag_sizes, pairwise, unary)

    def _score_pairs(self, i, j, rows, cols):
        table = self.tables.get((i, j))
        return np.zeros(rows.size) if table is None else table[rows, cols]

    def _unary_values(self, i):
        return self.unary_tables[i]


class PaddedProvider(PotentialProvider):
    """Wraps a provider for an episode padded with dummy bags.

    Dummy bags (``mask[i]`` false) come after the real bags; every potential
    touching a dummy item is exactly 0 and is neither evaluated nor counted.
    """

    def __init__(self, base: PotentialProvider, padded: Episode, mask: Sequence[bool]):
        mask = np.asarray(mask, dtype=bool)
        n_real = int(mask.sum())
        if not mask[:n_real].all() or len(mask) != padded.num_bags:
            raise ValueError("padding mask must mark a prefix of real bags")
        if padded.bag_sizes[:n_real] != base.bag_sizes:
            raise ValueError("padded episode does not extend the provider's episode")
        self.episode = padded
        self.bag_sizes = padded.bag_sizes
        self.base = base
        self.mask = mask
        self.n_real = n_real

    pairwise_evaluated = property(lambda self: self.base.pairwise_evaluated)
    pairwise_total_possible = property(lambda self: self.base.pairwise_total_possible)

    def pairwise_block(self, i, j, rows, cols):
        if i >= self.n_real or j >= self.n_real:
            if not i > j:
                raise ValueError(f"pairwise potentials are keyed with bag_i > bag_j, got ({i}, {j})")
            return np.zeros((len(rows), len(cols)))
        return self.base.pairwise_block(i, j, rows, cols)

    def unary(self, i):
        if i >= self.n_real:
            return np.zeros(self.bag_sizes[i])
        return self.base.unary(i)


@dataclass
class Potentials:
    """Scorers plus unary mode; calling it on an episode gives a fresh provider."""

    pairwise: object
    unary: object = None
    unary_mode: UnaryMode = UnaryMode.SOFTMAX

    def __post_init__(self):
        self.unary_mode = UnaryMode.parse(self.unary_mode)

    def __call__(self, episode: Episode) -> RelationProvider:
        return RelationProvider(episode, self.pairwise, self.unary, self.unary_mode)


def cosine_baseline_provider(dim: Optional[int] = None, unary_mode=UnaryMode.SOFTMAX,
                             nu: float = 5.0) -> Potentials:
    """Fixed-metric baseline: pairwise potential ``-cos(f, g)``, cosine unaries."""
    scorer = CosineRelation(nu=nu)
    return _DimChecked(scorer, scorer, UnaryMode.parse(unary_mode), dim=dim)


@dataclass
class _DimChecked(Potentials):
    dim: Optional[int] = field(default=None)

    def __call__(self, episode: Episode) -> RelationProvider:
        if self.dim is not None and episode.dim != self.dim:
            raise ValueError(f"episode dim {episode.dim} != provider dim {self.dim}")
        return super().__call__(episode)
