"""Seeded synthetic episodes from a Gaussian latent-class feature model.

Every class has a prototype drawn once from ``N(0, prototype_scale^2 I)``; an
item is its class prototype plus ``N(0, noise_sigma^2 I)`` noise. Train,
validation and test splits use disjoint class ids.

Difficulty is set by the ratio ``prototype_scale / noise_sigma``. The absolute
scale matters to the learned scorer (its residual ``(f + g) / 2`` term grows
with feature magnitude) but not to cosine similarity, so the defaults keep
features small.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .core import Bag, Episode

SPLITS = ("train", "val", "test")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    dim: int = 16
    num_train_classes: int = 64
    num_val_classes: int = 16
    num_test_classes: int = 20
    prototype_scale: float = 0.3
    noise_sigma: float = 0.1
    N: int = 8
    B: int = 5
    B_bar: int = 10
    M_range: tuple = (5, 15)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "M_range", tuple(int(m) for m in self.M_range))
        lo, hi = self.M_range
        if lo < 2 or hi < lo:
            raise ValueError(f"M_range must satisfy 2 <= min <= max, got {self.M_range}")
        if self.B < 1 or self.N < 2 or self.B_bar < 0:
            raise ValueError("need B >= 1, N >= 2 and B_bar >= 0")
        if self.prototype_scale < 0 or self.noise_sigma < 0:
            raise ValueError("scales must be non-negative")

    @property
    def separation(self) -> float:
        """Difficulty knob ``prototype_scale / noise_sigma`` (inf when noise-free)."""
        if self.noise_sigma == 0:
            return float("inf")
        return self.prototype_scale / self.noise_sigma

    def with_separation(self, separation: float, **changes) -> "GeneratorConfig":
        """Copy with ``prototype_scale = separation * noise_sigma`` (after ``changes``)."""
        cfg = replace(self, **changes)
        return replace(cfg, prototype_scale=float(separation * cfg.noise_sigma))

    def class_pool(self, split: str) -> np.ndarray:
        t, v, s = self.num_train_classes, self.num_val_classes, self.num_test_classes
        bounds = {"train": (0, t), "val": (t, t + v), "test": (t + v, t + v + s)}
        if split not in bounds:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        return np.arange(*bounds[split])

    @property
    def num_classes(self) -> int:
        return self.num_train_classes + self.num_val_classes + self.num_test_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["M_range"] = list(self.M_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        return cls(**data)


@lru_cache(maxsize=32)
def make_class_prototypes(config: GeneratorConfig) -> np.ndarray:
    """Prototype matrix indexed by class id; depends only on ``dim``, class counts, scale and seed."""
    rng = np.random.default_rng([config.seed, 7919])
    protos = config.prototype_scale * rng.standard_normal((config.num_classes, config.dim))
    protos.setflags(write=False)
    return protos


def episode_rng(config: GeneratorConfig, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, SPLITS.index(split), index])


def _items(protos, classes, sigma, rng) -> np.ndarray:
    noise = rng.standard_normal((len(classes), protos.shape[1]))
    return protos[classes] + sigma * noise


def generate_episode(config: GeneratorConfig, split: str, rng: np.random.Generator,
                     index: Optional[int] = None) -> Episode:
    """One labeled episode following the bag sampling protocol.

    Draw M classes (one target), give each positive bag one target item plus
    ``B - 1`` items uniform over the M classes, shuffle each bag, and fill the
    negative bag with items of the non-target classes only.
    """
    pool = config.class_pool(split)
    lo, hi = config.M_range
    if len(pool) < lo:
        raise ValueError(f"split {split!r} has {len(pool)} classes, need at least {lo}")
    protos = make_class_prototypes(config)
    M = int(rng.integers(lo, min(hi, len(pool)) + 1))
    classes = rng.choice(pool, size=M, replace=False)
    target, others = int(classes[0]), classes[1:]

    bags = []
    for _ in range(config.N):
        labels = np.concatenate([[target], rng.choice(classes, size=config.B - 1)])
        labels = labels[rng.permutation(config.B)]
        bags.append(Bag(_items(protos, labels, config.noise_sigma, rng), labels))
    negative = None
    if config.B_bar > 0:
        labels = rng.choice(others, size=config.B_bar)
        negative = Bag(_items(protos, labels, config.noise_sigma, rng), labels)
    return Episode(tuple(bags), negative, target_class=target, num_classes_sampled=M, seed=index)


def generate_episodes(config: GeneratorConfig, split: str, count: int,
                      start: int = 0) -> list:
    return [generate_episode(config, split, episode_rng(config, split, i), index=i)
            for i in range(start, start + count)]


def iter_episodes(config: GeneratorConfig, split: str, start: int = 0) -> Iterator[Episode]:
    i = start
    while True:
        yield generate_episode(config, split, episode_rng(config, split, i), index=i)
        i += 1


@dataclass(frozen=True, eq=False)
class OneShotEpisode:
    """``ways`` support items, one per class, and a single labeled query."""

    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_label: int

    def __post_init__(self):
        if self.support.ndim != 2 or len(self.support_labels) != len(self.support):
            raise ValueError("support must be a (ways, d) array with one label per row")
        if len(set(self.support_labels.tolist())) != len(self.support_labels):
            raise ValueError("support classes must be distinct")
        if self.query.shape != (self.support.shape[1],):
            raise ValueError("query dimension does not match support")
        if self.query_label not in self.support_labels:
            raise ValueError("query class is not among the support classes")


def generate_one_shot_episode(config: GeneratorConfig, split: str, rng: np.random.Generator,
                              ways: int = 5) -> OneShotEpisode:
    pool = config.class_pool(split)
    protos = make_class_prototypes(config)
    classes = rng.choice(pool, size=ways, replace=False)
    query_class = int(classes[rng.integers(ways)])
    support = _items(protos, classes, config.noise_sigma, rng)
    query = _items(protos, [query_class], config.noise_sigma, rng)[0]
    return OneShotEpisode(support, classes, query, query_class)


# -- persistence -----------------------------------------------------------------


def save_dataset(episodes: Sequence[Episode], path, config: Optional[GeneratorConfig] = None) -> None:
    """JSON lines: a header carrying the generator config, then one episode per line."""
    header = {"generator_config": None if config is None else config.to_dict()}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for ep in episodes:
            fh.write(json.dumps(ep.to_dict()) + "\n")


def load_dataset(path, with_config: bool = False):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file, expected a header line")
    try:
        header = json.loads(lines[0])
        raw_cfg = header["generator_config"]
        config = None if raw_cfg is None else GeneratorConfig.from_dict(raw_cfg)
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{path}:1: bad header ({exc})") from None

    episodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            ep = Episode.from_dict(data)
        except (ValueError, TypeError) as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
        if config is not None and ep.dim != config.dim:
            raise DatasetFormatError(
                f"{path}:{lineno}: field 'dim' is {ep.dim} but the header declares {config.dim}"
            )
        episodes.append(ep)
    if with_config:
        return episodes, config
    return episodes
