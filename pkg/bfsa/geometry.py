"""Spatial partitioning: k-d tree blocks, landmark selection and the landmark-last permutation."""
import dataclasses
import functools
import logging
import typing as t

import numpy as np
import scipy.spatial.distance


class PlanError(ValueError):
    """The requested partition is degenerate."""


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"Expected an (n, 2) array of coordinates, got shape {points.shape}.")
    if not np.all(np.isfinite(points)):
        raise ValueError("Coordinates must be finite.")
    return points


def _split(points: np.ndarray, indices: np.ndarray, depth: int) -> t.List[np.ndarray]:
    """Median splits along the wider extent, ties filling the left child first."""
    if depth == 0 or len(indices) <= 1:
        return [indices]
    coords = points[indices]
    extent = coords.max(axis=0) - coords.min(axis=0)
    axis = int(np.argmax(extent))
    order = np.argsort(coords[:, axis], kind="stable")
    half = (len(indices) + 1) // 2
    left = np.sort(indices[order[:half]])
    right = np.sort(indices[order[half:]])
    return _split(points, left, depth - 1) + _split(points, right, depth - 1)


def kdtree_partition(points, num_blocks: int) -> t.List[np.ndarray]:
    """Splits the points into num_blocks (a power of two) balanced k-d tree cells."""
    points = _as_points(points)
    n = len(points)
    if n == 0:
        raise PlanError("Cannot partition an empty point set.")
    if num_blocks < 1 or num_blocks & (num_blocks - 1):
        raise PlanError(f"The number of blocks must be a power of two, got {num_blocks}.")
    if num_blocks > n:
        raise PlanError(f"Cannot split {n} points into {num_blocks} blocks.")
    depth = num_blocks.bit_length() - 1
    return _split(points, np.arange(n), depth)


def select_landmarks(points, count: int) -> np.ndarray:
    """Picks `count` roughly equispaced landmark indices, ascending.

    The k-d tree is grown to the smallest power of two at or above count; the
    smallest surplus cells are dropped and each kept cell contributes its own
    point nearest the cell centroid.
    """
    points = _as_points(points)
    n = len(points)
    if count < 0 or count > n:
        raise PlanError(f"Cannot select {count} landmarks from {n} points.")
    if count == 0:
        return np.zeros(0, dtype=int)
    if count == n:
        return np.arange(n)

    depth = (count - 1).bit_length()
    cells = _split(points, np.arange(n), depth)
    sizes = np.array([len(cell) for cell in cells])
    kept = np.sort(np.argsort(-sizes, kind="stable")[:count])

    def nearest_in_cell(cell: np.ndarray) -> int:
        centroid = points[cell].mean(axis=0, keepdims=True)
        distances = scipy.spatial.distance.cdist(points[cell], centroid, "sqeuclidean")[:, 0]
        return int(cell[np.argmin(distances)])

    # cells are disjoint, so the picks are distinct
    nearest = np.array([nearest_in_cell(cells[i]) for i in kept], dtype=int)
    if len(np.unique(nearest)) != count:
        raise PlanError(f"Could not pick {count} distinct landmarks from {n} points.")
    return np.sort(nearest)


def block_centroids(points, blocks: t.Sequence[np.ndarray]) -> np.ndarray:
    points = _as_points(points)
    return np.array([points[block].mean(axis=0) for block in blocks])


def nearest_block(targets, centroids) -> np.ndarray:
    """Index of the nearest centroid for every target, ties to the lowest index."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    if len(targets) == 0:
        return np.zeros(0, dtype=int)
    distances = scipy.spatial.distance.cdist(targets, centroids, "sqeuclidean")
    return np.argmin(distances, axis=1)


@dataclasses.dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Blocks B, landmarks P, complement Q, reduced blocks B' and the permutation.

    perm[k] is the original index stored at permuted position k: the B' blocks
    in order, then the landmarks.
    """

    blocks: t.List[np.ndarray]
    landmarks: np.ndarray
    complement: np.ndarray
    blocks_prime: t.List[np.ndarray]
    perm: np.ndarray

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def p(self) -> int:
        return len(self.landmarks)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @functools.cached_property
    def q_slices(self) -> t.List[slice]:
        """Slices of each B' block within the first n - p permuted positions."""
        bounds = np.concatenate([[0], np.cumsum([len(b) for b in self.blocks_prime])])
        return [slice(int(start), int(stop)) for start, stop in zip(bounds[:-1], bounds[1:])]

    @functools.cached_property
    def inverse_perm(self) -> np.ndarray:
        inverse = np.empty_like(self.perm)
        inverse[self.perm] = np.arange(len(self.perm))
        return inverse

    def permute(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.perm]

    def unpermute(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        out = np.empty_like(values)
        out[self.perm] = values
        return out


def build_plan(points, num_blocks: int, num_landmarks: int) -> PartitionPlan:
    """Partitions the points and moves the landmarks to the end of the ordering.

    Taking every point as a landmark is allowed and leaves every B' empty;
    otherwise a block made entirely of landmarks is an error.
    """
    points = _as_points(points)
    n = len(points)
    blocks = kdtree_partition(points, num_blocks)
    landmarks = select_landmarks(points, num_landmarks)

    is_landmark = np.zeros(n, dtype=bool)
    is_landmark[landmarks] = True
    blocks_prime = [block[~is_landmark[block]] for block in blocks]
    if len(landmarks) < n:
        emptied = [i for i, block in enumerate(blocks_prime) if len(block) == 0]
        if emptied:
            raise PlanError(
                f"Blocks {emptied} consist entirely of landmarks; "
                f"use fewer landmarks or fewer blocks."
            )

    complement = np.flatnonzero(~is_landmark)
    perm = np.concatenate(blocks_prime + [landmarks]).astype(int)
    logging.info(
        f"Partitioned {n} points into {num_blocks} blocks with {len(landmarks)} landmarks"
    )
    return PartitionPlan(blocks, landmarks, complement, blocks_prime, perm)


def blocks_for_size(n: int, block_size: int) -> int:
    """Largest power of two number of blocks keeping at least block_size points per block."""
    if block_size < 1:
        raise ValueError(f"Block size must be positive, got {block_size}.")
    count = 1
    while 2 * count * block_size <= n:
        count *= 2
    return count
