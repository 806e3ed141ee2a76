"""Domain types, the ground-truth relation, the selection energy and success rate.

Items are rows of a feature matrix. Labels are integer class ids with
``BACKGROUND`` (-1) reserved for the background class; label arrays are either
present for a whole bag or absent (``None``), never partially filled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

BACKGROUND = -1

Selection = tuple  # tuple[int, ...]: selection[i] is the item chosen from positive bag i


class UnlabeledError(ValueError):
    """Raised when an operation needs ground-truth labels that are missing."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)  # always a private copy
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Bag:
    """An ordered set of items, stored as a ``(B, d)`` feature matrix."""

    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = _frozen_array(self.features, np.float64)
        if feats.ndim != 2:
            raise ValueError(f"bag features must be a 2-d array, got shape {feats.shape}")
        if feats.shape[0] == 0:
            raise ValueError("bag must contain at least one item")
        if not np.all(np.isfinite(feats)):
            raise ValueError("bag features must be finite")
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = _frozen_array(self.labels, np.int64)
            if labels.shape != (feats.shape[0],):
                raise ValueError(
                    f"labels length {labels.shape} does not match {feats.shape[0]} items"
                )
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Bag):
            return NotImplemented
        if (self.labels is None) != (other.labels is None):
            return False
        return np.array_equal(self.features, other.features) and (
            self.labels is None or np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=True)
class Episode:
    """A collection of positive bags plus an optional negative bag.

    ``target_class`` and ``num_classes_sampled`` are generation metadata and
    are never read by inference.
    """

    positive_bags: tuple
    negative_bag: Optional[Bag] = None
    target_class: Optional[int] = None
    num_classes_sampled: Optional[int] = None
    seed: Optional[int] = field(default=None, compare=True)

    def __post_init__(self):
        bags = tuple(self.positive_bags)
        object.__setattr__(self, "positive_bags", bags)
        if len(bags) < 2:
            raise ValueError(f"an episode needs at least 2 positive bags, got {len(bags)}")
        dims = {b.dim for b in bags}
        if self.negative_bag is not None:
            dims.add(self.negative_bag.dim)
        if len(dims) != 1:
            raise ValueError(f"inconsistent feature dimensions across bags: {sorted(dims)}")
        if self.target_class is not None and self.is_labeled:
            for i, bag in enumerate(bags):
                if not np.any(bag.labels == self.target_class):
                    raise ValueError(f"positive bag {i} has no item of the target class")
            neg = self.negative_bag
            if neg is not None and neg.labels is not None and np.any(neg.labels == self.target_class):
                raise ValueError("negative bag contains the target class")

    @property
    def num_bags(self) -> int:
        return len(self.positive_bags)

    @property
    def dim(self) -> int:
        return self.positive_bags[0].dim

    @property
    def bag_sizes(self) -> tuple:
        return tuple(len(b) for b in self.positive_bags)

    @property
    def is_labeled(self) -> bool:
        if any(b.labels is None for b in self.positive_bags):
            return False
        return self.negative_bag is None or self.negative_bag.labels is not None

    def check_selection(self, selection: Sequence[int]) -> Selection:
        sel = tuple(int(s) for s in selection)
        if len(sel) != self.num_bags:
            raise ValueError(f"selection has {len(sel)} entries for {self.num_bags} bags")
        for i, (s, n) in enumerate(zip(sel, self.bag_sizes)):
            if not 0 <= s < n:
                raise IndexError(f"selection index {s} out of range for bag {i} of size {n}")
        return sel

    def selected_labels(self, selection: Sequence[int]) -> np.ndarray:
        if not self.is_labeled:
            raise UnlabeledError("episode has no labels")
        sel = self.check_selection(selection)
        return np.array([b.labels[s] for b, s in zip(self.positive_bags, sel)])

    # -- JSON episode format -------------------------------------------------

    def to_dict(self) -> dict:
        def bag_dict(bag: Bag) -> dict:
            d: dict[str, Any] = {"features": bag.features.tolist()}
            if bag.labels is not None:
                d["labels"] = bag.labels.tolist()
            return d

        out: dict[str, Any] = {
            "dim": self.dim,
            "positive_bags": [bag_dict(b) for b in self.positive_bags],
        }
        if self.negative_bag is not None:
            out["negative_bag"] = bag_dict(self.negative_bag)
        if self.target_class is not None:
            out["target_class"] = int(self.target_class)
        if self.num_classes_sampled is not None:
            out["num_classes_sampled"] = int(self.num_classes_sampled)
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Episode":
        if not isinstance(data, dict):
            raise ValueError("episode must be a JSON object")
        try:
            dim = int(data["dim"])
            raw_bags = data["positive_bags"]
        except KeyError as exc:
            raise ValueError(f"missing field {exc.args[0]!r}") from None

        def parse_bag(raw, where: str) -> Bag:
            if not isinstance(raw, dict) or "features" not in raw:
                raise ValueError(f"{where}: bag must be an object with 'features'")
            feats = np.asarray(raw["features"], dtype=np.float64)
            if feats.ndim != 2 or feats.shape[1] != dim:
                raise ValueError(
                    f"{where}.features: expected rows of length dim={dim}, got shape {feats.shape}"
                )
            try:
                return Bag(feats, raw.get("labels"))
            except ValueError as exc:
                raise ValueError(f"{where}: {exc}") from None

        bags = [parse_bag(b, f"positive_bags[{i}]") for i, b in enumerate(raw_bags)]
        neg = data.get("negative_bag")
        return cls(
            positive_bags=tuple(bags),
            negative_bag=None if neg is None else parse_bag(neg, "negative_bag"),
            target_class=data.get("target_class"),
            num_classes_sampled=data.get("num_classes_sampled"),
            seed=data.get("seed"),
        )


def relation_label(a: int, b: int) -> int:
    """+1 when both labels are the same foreground class, else -1."""
    return 1 if (a == b and a != BACKGROUND) else -1


def relation_to_bag(a: int, bag: Bag) -> int:
    """+1 when ``a`` relates to at least one item of ``bag``."""
    if bag.labels is None:
        raise UnlabeledError("bag has no labels")
    if a == BACKGROUND:
        return -1
    return 1 if np.any(bag.labels == a) else -1


def energy(selection: Sequence[int], provider, eta: float = 1.0) -> float:
    """Sum of pairwise potentials over bag pairs ``i > j`` plus ``eta`` times the unaries.

    ``provider`` is a bound potential provider; its episode fixes the bags.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    sel = provider.episode.check_selection(selection)
    total = 0.0
    for i in range(1, len(sel)):
        for j in range(i):
            total += provider.pairwise(i, sel[i], j, sel[j])
    if eta:
        total += eta * sum(provider.unary(i)[s] for i, s in enumerate(sel))
    return float(total)


def success_rate(selection: Sequence[int], episode: Episode) -> float:
    """Fraction of selected items that belong to the target class."""
    if episode.target_class is None:
        raise UnlabeledError("episode has no target class")
    labels = episode.selected_labels(selection)
    return float(np.mean(labels == episode.target_class))
