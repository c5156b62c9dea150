"""Structural-prior mask matrices and the per-head mask schedule.

Masks are l-by-l float64 arrays of additive attention-logit biases. Every
finite entry is <= 0, blocked positions hold the sentinel, and the diagonal
is always finite so a token can attend to itself. Index conventions below
are 1-based in prose and 0-based in code; the two agree for relations like
``i <= j``.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    EmptyInputError,
    MalformedTreeError,
    MissingTreeError,
)
from .tensor import MASK_THRESHOLD, SENTINEL

DIRECTIONS = ("forward", "backward")
DISTANCES = ("word", "dependency", "none")
_DISTANCE_ALIASES = {"dep": "dependency", "dp": "dependency"}


def normalize_distance(kind: str) -> str:
    kind = _DISTANCE_ALIASES.get(kind, kind)
    if kind not in DISTANCES:
        raise ConfigurationError(f"unknown distance kind: {kind!r} (use {DISTANCES})")
    return kind


def _check_length(l: int) -> None:
    if l < 1:
        raise EmptyInputError("mask length must be at least 1")


@lru_cache(maxsize=None)
def _forward_base(l: int) -> np.ndarray:
    i = np.arange(l)[:, None]
    j = np.arange(l)[None, :]
    m = np.where(i <= j, 0.0, SENTINEL)
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def _backward_base(l: int) -> np.ndarray:
    i = np.arange(l)[:, None]
    j = np.arange(l)[None, :]
    m = np.where(i >= j, 0.0, SENTINEL)
    m.flags.writeable = False
    return m


@lru_cache(maxsize=None)
def _word_distance_base(l: int) -> np.ndarray:
    i = np.arange(l)
    m = -np.abs(i[:, None] - i[None, :]).astype(np.float64)
    m.flags.writeable = False
    return m


def forward_mask(l: int) -> np.ndarray:
    """Zero at and above the diagonal (i <= j), sentinel below it."""
    _check_length(l)
    return _forward_base(l)


def backward_mask(l: int) -> np.ndarray:
    """Zero at and below the diagonal (i >= j), sentinel above it."""
    _check_length(l)
    return _backward_base(l)


def word_distance_mask(l: int) -> np.ndarray:
    """Entry (i, j) is minus the index gap |i - j|."""
    _check_length(l)
    return _word_distance_base(l)


def validate_tree(heads: Sequence[int]) -> None:
    """Check that per-token head indices encode one rooted tree.

    Heads are 1-based token indices with 0 marking the root. Raises
    :class:`MalformedTreeError` naming the offending token (1-based).
    """
    l = len(heads)
    if l == 0:
        raise EmptyInputError("empty head sequence")
    roots = []
    for i, h in enumerate(heads):
        h = int(h)
        if h < 0 or h > l:
            raise MalformedTreeError(f"token {i + 1}: head index {h} outside 0..{l}")
        if h == i + 1:
            raise MalformedTreeError(f"token {i + 1}: token is its own head")
        if h == 0:
            roots.append(i)
    if not roots:
        raise MalformedTreeError("no root token (head 0) present")
    if len(roots) > 1:
        raise MalformedTreeError(
            f"multiple roots at tokens {[r + 1 for r in roots]}"
        )
    seen = [False] * l
    seen[roots[0]] = True
    children: list[list[int]] = [[] for _ in range(l)]
    for i, h in enumerate(heads):
        if h:
            children[int(h) - 1].append(i)
    queue = deque([roots[0]])
    while queue:
        v = queue.popleft()
        for c in children[v]:
            if not seen[c]:
                seen[c] = True
                queue.append(c)
    if not all(seen):
        bad = seen.index(False)
        raise MalformedTreeError(f"token {bad + 1}: unreachable from the root (cycle)")


def tree_distances(heads: Sequence[int]) -> np.ndarray:
    """All-pairs shortest-path lengths on the undirected dependency tree.

    Returns an l-by-l integer matrix, computed by a breadth-first search
    from every token.
    """
    validate_tree(heads)
    l = len(heads)
    adj: list[list[int]] = [[] for _ in range(l)]
    for i, h in enumerate(heads):
        if h:
            adj[i].append(int(h) - 1)
            adj[int(h) - 1].append(i)
    dist = np.zeros((l, l), dtype=np.int64)
    for s in range(l):
        row = dist[s]
        row[:] = -1
        row[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            for u in adj[v]:
                if row[u] < 0:
                    row[u] = row[v] + 1
                    queue.append(u)
    return dist


def dependency_distance_mask(heads: Sequence[int]) -> np.ndarray:
    """Entry (i, j) is minus the tree distance between tokens i and j."""
    return -tree_distances(heads).astype(np.float64)


def combine(direction: np.ndarray, distance: np.ndarray | None, alpha: float) -> np.ndarray:
    """Per-head mask: direction plus alpha times the distance bias.

    Sentinel entries of the direction mask stay below the masked threshold
    because alpha * (l - 1) is tiny against the sentinel magnitude. With no
    distance mask the direction mask is returned unchanged.
    """
    if alpha < 0:
        raise ConfigurationError(f"alpha must be nonnegative, got {alpha}")
    if distance is None:
        return direction
    if direction.shape != distance.shape:
        raise DimensionError(
            f"combine shape mismatch: {direction.shape} vs {distance.shape}"
        )
    return direction + alpha * distance


def pad_mask(mask: np.ndarray, total_len: int) -> np.ndarray:
    """Embed an l-by-l mask into a padded total_len square.

    Real rows get the sentinel in every padded key column; padded rows are
    fully masked except their own diagonal, so no softmax row dies.
    """
    l = mask.shape[0]
    if total_len < l:
        raise DimensionError(f"padded length {total_len} is below mask size {l}")
    if total_len == l:
        return mask
    out = np.full((total_len, total_len), SENTINEL)
    out[:l, :l] = mask
    for i in range(l, total_len):
        out[i, i] = 0.0
    return out


@dataclass(frozen=True)
class HeadSpec:
    """Direction and distance prior assigned to one attention head."""

    direction: str
    distance: str

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(
                f"unknown direction: {self.direction!r} (use {DIRECTIONS})"
            )
        object.__setattr__(self, "distance", normalize_distance(self.distance))


@dataclass(frozen=True)
class MaskSchedule:
    """Ordered head assignment: forward first half, backward second half,
    with the same distance-kind order in both halves."""

    heads: tuple[HeadSpec, ...]

    def __post_init__(self) -> None:
        n = len(self.heads)
        if n == 0 or n % 2:
            raise ConfigurationError(f"head count must be even and positive, got {n}")
        half = n // 2
        for i, spec in enumerate(self.heads):
            want = "forward" if i < half else "backward"
            if spec.direction != want:
                raise ConfigurationError(
                    f"head {i + 1} must be {want} in a schedule of {n} heads"
                )
        for i in range(half):
            if self.heads[i].distance != self.heads[i + half].distance:
                raise ConfigurationError(
                    f"heads {i + 1} and {i + 1 + half} must share a distance kind"
                )

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def needs_tree(self) -> bool:
        return any(h.distance == "dependency" for h in self.heads)


def build_schedule(n_heads: int, distance_cycle: Sequence[str]) -> MaskSchedule:
    """Forward heads over the cycle, then backward heads over the same cycle."""
    if n_heads < 2 or n_heads % 2:
        raise ConfigurationError(f"head count must be even and positive, got {n_heads}")
    cycle = [normalize_distance(k) for k in distance_cycle]
    if len(cycle) != n_heads // 2:
        raise ConfigurationError(
            f"distance cycle length {len(cycle)} does not match {n_heads} heads"
        )
    heads = [HeadSpec("forward", k) for k in cycle] + [
        HeadSpec("backward", k) for k in cycle
    ]
    return MaskSchedule(tuple(heads))


def build_masks(
    specs: Iterable[tuple[str | None, str]],
    l: int,
    heads: Sequence[int] | None = None,
    alpha: float = 1.0,
    swap_direction: bool = False,
    pad_to: int | None = None,
) -> list[np.ndarray]:
    """Combined mask per (direction, distance) pair.

    A direction of None contributes no direction bias (an all-zero mask).
    ``swap_direction`` exchanges the forward and backward triangles, for
    probing the opposite reading of the direction convention.
    """
    _check_length(l)
    fwd = forward_mask(l)
    bwd = backward_mask(l)
    if swap_direction:
        fwd, bwd = bwd, fwd
    zero = np.zeros((l, l))
    word = None
    dep = None
    out = []
    for direction, distance in specs:
        if direction is None:
            base = zero
        elif direction == "forward":
            base = fwd
        elif direction == "backward":
            base = bwd
        else:
            raise ConfigurationError(f"unknown direction: {direction!r}")
        distance = normalize_distance(distance)
        dis = None
        if distance == "word":
            if word is None:
                word = word_distance_mask(l)
            dis = word
        elif distance == "dependency":
            if heads is None:
                raise MissingTreeError(
                    "dependency-distance mask requested without a dependency tree"
                )
            if len(heads) != l:
                raise DimensionError(
                    f"tree has {len(heads)} tokens but mask length is {l}"
                )
            if dep is None:
                dep = dependency_distance_mask(heads)
            dis = dep
        m = combine(base, dis, alpha)
        if pad_to is not None:
            m = pad_mask(m, pad_to)
        out.append(m)
    return out


def masks_for_sentence(
    schedule: MaskSchedule,
    l: int,
    heads: Sequence[int] | None = None,
    alpha: float = 1.0,
    swap_direction: bool = False,
    pad_to: int | None = None,
) -> list[np.ndarray]:
    """One combined mask per head of the schedule."""
    specs = [(h.direction, h.distance) for h in schedule.heads]
    return build_masks(specs, l, heads, alpha, swap_direction, pad_to)


def write_mask_csv(path, mask: np.ndarray, tokens: Sequence[str]) -> None:
    """Token-form header, then one row per query; sentinels as literal -inf."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(tokens)
        for row in mask:
            writer.writerow(
                ["-inf" if v <= MASK_THRESHOLD else format(v, ".9g") for v in row]
            )
