"""
Serialization of an unordered set of patch centers into a 1D processing order.

Strategies:
  * ysort / sort_axis   - single-axis stable sort
  * axis-triple         - x, y and z sorted copies concatenated (length 3 * n_c)
  * nimba               - greedy proximity pass over the y-sorted order
  * identity            - FPS selection order
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
from scipy.spatial.distance import cdist

from models.errors import InvalidParameterError
from models.geometry import PatchSet

log = logging.getLogger(__name__)

AXES = {"x": 0, "y": 1, "z": 2}
DEFAULT_R = 0.8


class OrderingStrategy(str, Enum):
    YSORT = "ysort"  # any single-axis sort; Serialization.axis says which
    AXIS_TRIPLE = "axis-triple"
    NIMBA = "nimba"
    IDENTITY = "identity"


@dataclass(frozen=True)
class Serialization:
    order: np.ndarray
    strategy: OrderingStrategy
    replication: int = 1
    r: float = None
    moves: int = 0
    axis: str = None

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        object.__setattr__(self, "order", order)
        if self.replication not in (1, 3):
            raise InvalidParameterError(f"replication must be 1 or 3, got {self.replication}")
        if len(order) % self.replication:
            raise InvalidParameterError("order length is not a multiple of the replication")
        counts = np.bincount(order, minlength=self.n_c) if len(order) else np.zeros(0)
        if len(order) and (order.min() < 0 or len(counts) != self.n_c or np.any(counts != self.replication)):
            raise InvalidParameterError(
                f"order must contain every index of 0..{self.n_c - 1} exactly {self.replication} time(s)")

    @property
    def n_c(self):
        return len(self.order) // self.replication

    @property
    def sequence_length(self):
        return len(self.order)

    def to_dict(self):
        return {
            "strategy": self.strategy.value,
            "replication": self.replication,
            "r": self.r,
            "moves": self.moves,
            "axis": self.axis,
            "order": self.order.tolist(),
        }


def _check_centers(centers):
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != 3 or centers.shape[0] < 1:
        raise InvalidParameterError(f"centers must have shape (n_c >= 1, 3), got {centers.shape}")
    return centers


def sort_axis(centers, axis="y"):
    centers = _check_centers(centers)
    if axis not in AXES:
        raise InvalidParameterError(f"axis must be one of x, y, z, got {axis!r}")
    order = np.argsort(centers[:, AXES[axis]], kind="stable")
    return Serialization(order, OrderingStrategy.YSORT, 1, axis=axis)


def axis_triple(centers):
    centers = _check_centers(centers)
    order = np.concatenate([sort_axis(centers, axis).order for axis in ("x", "y", "z")])
    return Serialization(order, OrderingStrategy.AXIS_TRIPLE, 3)


def identity_order(centers):
    centers = _check_centers(centers)
    return Serialization(np.arange(len(centers)), OrderingStrategy.IDENTITY, 1)


def nimba_reorder(centers, r=DEFAULT_R, candidate="first"):
    """Greedy single pass over the y-sorted centers.

    Whenever the gap to the next center is >= r, the first later center
    (positions i+2..) closer than r to the current one is moved to position i+1.
    With candidate="nearest" the closest such center is moved instead.
    """
    centers = _check_centers(centers)
    if r is None or r < 0:
        raise InvalidParameterError(f"r must be >= 0, got {r}")
    if candidate not in ("first", "nearest"):
        raise InvalidParameterError(f"candidate must be 'first' or 'nearest', got {candidate!r}")

    seq = list(sort_axis(centers, "y").order)
    dist = cdist(centers, centers)
    n = len(seq)
    moves = 0
    for i in range(n - 1):
        cur = seq[i]
        if dist[cur, seq[i + 1]] < r:
            continue
        rest = np.asarray(seq[i + 2:], dtype=np.int64)
        if len(rest) == 0:
            continue
        gaps = dist[cur, rest]
        hits = np.flatnonzero(gaps < r)
        if len(hits) == 0:
            continue
        pick = hits[0] if candidate == "first" else hits[np.argmin(gaps[hits])]
        seq.insert(i + 1, seq.pop(i + 2 + int(pick)))
        moves += 1
    log.debug("nimba: n_c=%d r=%.3f moves=%d", n, r, moves)
    return Serialization(np.asarray(seq), OrderingStrategy.NIMBA, 1, r=float(r), moves=moves)


def serialize(centers, strategy, r=DEFAULT_R, candidate="first"):
    try:
        strategy = OrderingStrategy(strategy)
    except ValueError:
        raise InvalidParameterError(f"unknown ordering strategy {strategy!r}") from None
    if strategy is OrderingStrategy.NIMBA:
        return nimba_reorder(centers, r, candidate)
    if strategy is OrderingStrategy.AXIS_TRIPLE:
        return axis_triple(centers)
    if strategy is OrderingStrategy.YSORT:
        return sort_axis(centers, "y")
    return identity_order(centers)


def apply_order(tokens, serialization, axis=0):
    """output[i] = tokens[order[i]] along `axis`; works on numpy arrays, torch tensors and PatchSets."""
    order = serialization.order if isinstance(serialization, Serialization) else np.asarray(serialization)
    if isinstance(tokens, PatchSet):
        _check_range(order, tokens.n_c)
        return PatchSet(
            centers=tokens.centers[order],
            center_indices=tokens.center_indices[order],
            patches=tokens.patches[order],
            patch_indices=tokens.patch_indices[order],
        )
    count = tokens.shape[axis]
    if isinstance(serialization, Serialization) and count != serialization.n_c:
        raise InvalidParameterError(f"token count {count} does not match n_c={serialization.n_c}")
    _check_range(order, count)
    if isinstance(tokens, torch.Tensor):
        return tokens.index_select(axis, torch.as_tensor(order, dtype=torch.long, device=tokens.device))
    return np.take(tokens, order, axis=axis)


def _check_range(order, count):
    if len(order) and (order.min() < 0 or order.max() >= count):
        raise InvalidParameterError(f"order index out of range for {count} tokens")


def adjacent_distances(centers, serialization):
    centers = _check_centers(centers)
    path = centers[serialization.order]
    return np.linalg.norm(np.diff(path, axis=0), axis=1)


def ordering_stats(centers, serialization, r=DEFAULT_R):
    gaps = adjacent_distances(centers, serialization)
    if len(gaps) == 0:
        return {"within_r": 1.0, "mean_gap": 0.0, "max_gap": 0.0, "moves": serialization.moves}
    return {
        "within_r": float(np.mean(gaps < r)),
        "mean_gap": float(gaps.mean()),
        "max_gap": float(gaps.max()),
        "moves": serialization.moves,
    }
