"""Energy minimization over selections: greedy join-and-prune beam search and baselines.

All solvers take a bound provider (see ``cofind.potentials``) and return an
``InferenceResult`` whose ``energy`` is the energy of ``selection``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BACKGROUND, Bag, Episode, energy
from .potentials import PaddedProvider, PotentialProvider


class ExhaustiveCapError(ValueError):
    pass


@dataclass
class Beam:
    """Partial selections over the contiguous bags ``start .. start + width - 1``.

    ``items[r]`` is one partial selection and ``energies[r]`` its sub-problem
    energy (NaN until computed).
    """

    start: int
    items: np.ndarray
    energies: np.ndarray

    @property
    def width(self) -> int:
        return self.items.shape[1]

    @property
    def stop(self) -> int:
        return self.start + self.width

    def __len__(self) -> int:
        return self.items.shape[0]


@dataclass
class InferenceResult:
    method: str
    selection: tuple
    energy: float
    pairwise_evaluated: int = 0
    pairwise_total_possible: int = 0
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    root_beam: Optional[Beam] = None
    beams: Optional[list] = None
    sweep_energies: Optional[list] = None
    seconds: float = 0.0

    @property
    def pairwise_fraction(self) -> float:
        total = self.pairwise_total_possible
        return self.pairwise_evaluated / total if total else 0.0

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "selection": list(self.selection),
            "energy": self.energy,
            "seconds": self.seconds,
            "pairwise_evaluated": self.pairwise_evaluated,
            "pairwise_total_possible": self.pairwise_total_possible,
            "iterations": self.iterations,
        }


def _result(method, provider, selection, value, **kw) -> InferenceResult:
    return InferenceResult(
        method=method,
        selection=tuple(int(s) for s in selection),
        energy=float(value),
        pairwise_evaluated=provider.pairwise_evaluated,
        pairwise_total_possible=provider.pairwise_total_possible,
        **kw,
    )


# -- greedy ------------------------------------------------------------------------


def pad_to_power_of_two(episode: Episode):
    """Append single-item dummy bags until the bag count is a power of two.

    Returns ``(padded, mask)`` with ``mask[i]`` true for real bags. The padded
    episode drops ``target_class`` since dummy bags hold no target item.
    """
    n = episode.num_bags
    size = 1 << (n - 1).bit_length()
    mask = tuple([True] * n + [False] * (size - n))
    if size == n:
        return episode, mask
    labeled = episode.is_labeled
    dummy = Bag(np.zeros((1, episode.dim)), [BACKGROUND] if labeled else None)
    padded = Episode(
        episode.positive_bags + (dummy,) * (size - n),
        episode.negative_bag,
        target_class=None,
        num_classes_sampled=episode.num_classes_sampled,
        seed=episode.seed,
    )
    return padded, mask


def leaf_beam(provider: PotentialProvider, i: int, eta: float) -> Beam:
    n = provider.bag_sizes[i]
    unary = provider.unary(i)
    energies = eta * unary if eta else np.zeros(n)
    return Beam(i, np.arange(n)[:, None], np.array(energies, dtype=np.float64))


def join(left: Beam, right: Beam) -> Beam:
    """Cartesian product of two adjacent beams, left-major; energies unset."""
    if left.stop != right.start:
        raise ValueError(
            f"beams must cover adjacent bag ranges, got [{left.start}, {left.stop}) "
            f"and [{right.start}, {right.stop})"
        )
    nl, nr = len(left), len(right)
    items = np.concatenate(
        [np.repeat(left.items, nr, axis=0), np.tile(right.items, (nl, 1))], axis=1
    )
    return Beam(left.start, items, np.full(nl * nr, np.nan))


def cross_potentials(left: Beam, right: Beam, provider: PotentialProvider) -> np.ndarray:
    """``(len(left), len(right))`` sums of pairwise potentials on edges joining the two beams.

    Only pairs of items that actually occur in the beams are requested from
    the provider.
    """
    total = np.zeros((len(right), len(left)))
    left_cols = [np.unique(left.items[:, a], return_inverse=True) for a in range(left.width)]
    for b in range(right.width):
        ub, inv_b = np.unique(right.items[:, b], return_inverse=True)
        for a, (ua, inv_a) in enumerate(left_cols):
            block = provider.pairwise_block(right.start + b, left.start + a, ub, ua)
            total += block[inv_b[:, None], inv_a[None, :]]
    return total.T


def energy_combine(joined: Beam, left: Beam, right: Beam, provider: PotentialProvider) -> Beam:
    """Fill ``joined = join(left, right)`` energies as left + right + joining pairwise terms."""
    if len(joined) != len(left) * len(right):
        raise ValueError("joined beam does not match the product of its parts")
    combined = left.energies[:, None] + right.energies[None, :]
    combined = combined + cross_potentials(left, right, provider)
    return Beam(joined.start, joined.items, combined.ravel())


def prune(beam: Beam, k: int) -> Beam:
    """Keep the ``k`` lowest-energy entries, ascending; ties keep input order."""
    if k < 1:
        raise ValueError("beam width k must be >= 1")
    order = np.argsort(beam.energies, kind="stable")[:k]
    return Beam(beam.start, beam.items[order], beam.energies[order])


def greedy_infer(provider: PotentialProvider, k: int = 300, eta: float = 1.0,
                 keep_beams: bool = False) -> InferenceResult:
    """Bottom-up join-and-prune over a balanced binary tree of the bags."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    episode = provider.episode
    n_real = episode.num_bags
    padded, mask = pad_to_power_of_two(episode)
    work = provider if padded is episode else PaddedProvider(provider, padded, mask)

    beams = [leaf_beam(work, i, eta) for i in range(padded.num_bags)]
    levels = [beams] if keep_beams else None
    while len(beams) > 1:
        beams = [
            prune(energy_combine(join(l, r), l, r, work), k)
            for l, r in zip(beams[0::2], beams[1::2])
        ]
        if keep_beams:
            levels.append(beams)
    root = beams[0]
    return _result(
        "greedy", provider, root.items[0, :n_real], root.energies[0],
        root_beam=Beam(0, root.items[:, :n_real], root.energies), beams=levels,
    )


# -- baselines -----------------------------------------------------------------------


def exhaustive_infer(provider: PotentialProvider, eta: float = 1.0,
                     cap: int = 10**6) -> InferenceResult:
    """Global minimum by enumeration; ties resolve to the lexicographically first selection."""
    sizes = provider.bag_sizes
    n = len(sizes)
    count = int(np.prod(sizes, dtype=object))
    if count > cap:
        raise ExhaustiveCapError(
            f"{count} selections exceed the exhaustive cap of {cap}; use greedy or loopy BP"
        )
    table = np.zeros(sizes)
    for i in range(n):
        if eta:
            shape = [1] * n
            shape[i] = sizes[i]
            table = table + eta * provider.unary(i).reshape(shape)
        for j in range(i):
            shape = [1] * n
            shape[i], shape[j] = sizes[i], sizes[j]
            block = provider.pairwise_block(i, j, np.arange(sizes[i]), np.arange(sizes[j]))
            # block axes are (i, j) with j < i; put them in ascending axis order
            table = table + block.T.reshape(shape)
    flat = int(np.argmin(table))
    selection = np.unravel_index(flat, sizes)
    return _result("exhaustive", provider, selection, table.flat[flat])


def full_pairwise_tensor(provider: PotentialProvider) -> np.ndarray:
    """``(N, N, Bmax, Bmax)`` array with ``[a, b, x, y]`` = potential of ``(a:x, b:y)``."""
    sizes = provider.bag_sizes
    n, bmax = len(sizes), max(sizes)
    P = np.zeros((n, n, bmax, bmax))
    for i in range(n):
        for j in range(i):
            block = provider.pairwise_block(i, j, np.arange(sizes[i]), np.arange(sizes[j]))
            P[i, j, : sizes[i], : sizes[j]] = block
            P[j, i, : sizes[j], : sizes[i]] = block.T
    return P


def loopy_bp_infer(provider: PotentialProvider, eta: float = 1.0, max_iters: int = 200,
                   damping: float = 0.5, tol: float = 1e-6) -> InferenceResult:
    """Damped min-sum belief propagation on the complete graph over bags."""
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    sizes = provider.bag_sizes
    n, bmax = len(sizes), max(sizes)
    valid = np.arange(bmax)[None, :] < np.array(sizes)[:, None]  # (n, bmax)
    theta = np.full((n, bmax), np.inf)
    for i in range(n):
        theta[i, : sizes[i]] = eta * provider.unary(i) if eta else 0.0
    P = full_pairwise_tensor(provider)
    offdiag = ~np.eye(n, dtype=bool)

    # msg[i, j, y]: message from bag i to bag j about bag j's item y
    msg = np.zeros((n, n, bmax))
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        incoming = msg.sum(axis=0)  # (n, bmax), indexed by receiver
        h = theta[:, None, :] + incoming[:, None, :] - msg.transpose(1, 0, 2)
        new = np.min(h[:, :, :, None] + P, axis=2)
        new = np.where(valid[None, :, :], new, np.inf)
        new = new - new.min(axis=2, keepdims=True)
        new = np.where(valid[None, :, :] & offdiag[:, :, None], new, 0.0)
        new = damping * msg + (1.0 - damping) * new
        delta = np.max(np.abs(new - msg))
        msg = new
        if delta < tol:
            converged = True
            break
    belief = theta + msg.sum(axis=0)
    selection = tuple(int(np.argmin(belief[i, : sizes[i]])) for i in range(n))
    return _result("loopy-bp", provider, selection, energy(selection, provider, eta),
                   iterations=iters, converged=converged)


def icm_infer(provider: PotentialProvider, eta: float = 1.0, restarts: int = 10,
              seed: int = 0, inits: Optional[Sequence[Sequence[int]]] = None,
              max_sweeps: int = 100) -> InferenceResult:
    """Iterated conditional modes from random (or given) starts; best local minimum wins.

    A bag switches item only on strict improvement, so the energy never rises.
    """
    sizes = provider.bag_sizes
    n = len(sizes)
    if inits is None:
        rng = np.random.default_rng(seed)
        inits = [[int(rng.integers(b)) for b in sizes] for _ in range(restarts)]
    unaries = [eta * provider.unary(i) if eta else np.zeros(sizes[i]) for i in range(n)]
    best, best_energy = None, np.inf
    traces, total_sweeps = [], 0
    for start in inits:
        sel = list(provider.episode.check_selection(start))
        trace = [energy(sel, provider, eta)]
        for _ in range(max_sweeps):
            changed = False
            for i in range(n):
                cond = unaries[i].copy()
                for j in range(n):
                    if j != i:
                        cond += provider.cross(i, j, np.arange(sizes[i]), [sel[j]])[:, 0]
                cand = int(np.argmin(cond))
                if cond[cand] < cond[sel[i]]:
                    sel[i] = cand
                    changed = True
            total_sweeps += 1
            trace.append(energy(sel, provider, eta))
            if not changed:
                break
        traces.append(trace)
        if trace[-1] < best_energy:
            best, best_energy = tuple(sel), trace[-1]
    return _result("icm", provider, best, best_energy, iterations=total_sweeps,
                   sweep_energies=traces)


def unary_only_infer(provider: PotentialProvider, eta: float = 1.0) -> InferenceResult:
    """Pick each bag's lowest-unary item independently (first index on ties)."""
    sel = tuple(int(np.argmin(provider.unary(i))) for i in range(provider.num_bags))
    return _result("unary-only", provider, sel, energy(sel, provider, eta))
