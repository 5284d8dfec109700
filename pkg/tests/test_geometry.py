import numpy as np
import pytest

import bfsa.geometry as geometry


@pytest.fixture
def grid_points():
    xs, ys = np.meshgrid(np.arange(4.0), np.arange(4.0))
    return np.column_stack([xs.ravel(), ys.ravel()])


def test_collinear_points_split_at_the_median():
    points = np.column_stack([np.arange(8.0), np.zeros(8)])

    sut = geometry.kdtree_partition(points, 2)

    assert [list(block) for block in sut] == [[0, 1, 2, 3], [4, 5, 6, 7]]


def test_single_block_holds_everything():
    points = np.random.default_rng(0).uniform(size=(10, 2))

    sut = geometry.kdtree_partition(points, 1)

    assert len(sut) == 1
    np.testing.assert_array_equal(sut[0], np.arange(10))


def test_partition_is_balanced_and_disjoint():
    points = np.random.default_rng(1).uniform(size=(101, 2))

    sut = geometry.kdtree_partition(points, 8)

    sizes = [len(block) for block in sut]
    assert max(sizes) - min(sizes) <= 1
    np.testing.assert_array_equal(np.sort(np.concatenate(sut)), np.arange(101))


@pytest.mark.parametrize("num_blocks", [0, 3, 6])
def test_block_count_must_be_a_power_of_two(num_blocks):
    with pytest.raises(geometry.PlanError):
        geometry.kdtree_partition(np.zeros((8, 2)), num_blocks)


def test_more_blocks_than_points():
    with pytest.raises(geometry.PlanError):
        geometry.kdtree_partition(np.random.default_rng(0).uniform(size=(3, 2)), 4)


def test_bad_coordinates():
    with pytest.raises(ValueError):
        geometry.kdtree_partition(np.zeros((4, 3)), 2)
    with pytest.raises(ValueError):
        geometry.kdtree_partition(np.array([[0.0, np.nan], [1.0, 1.0]]), 1)


def test_single_landmark_is_nearest_the_centroid():
    points = np.random.default_rng(2).uniform(size=(50, 2))

    sut = geometry.select_landmarks(points, 1)

    centroid = points.mean(axis=0)
    assert sut[0] == np.argmin(np.sum((points - centroid) ** 2, axis=1))


def test_landmarks_are_distinct_and_sorted():
    points = np.random.default_rng(3).uniform(size=(200, 2))

    sut = geometry.select_landmarks(points, 24)

    assert len(sut) == 24
    assert len(np.unique(sut)) == 24
    np.testing.assert_array_equal(sut, np.sort(sut))


def _clustered_points(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.concatenate(
        [
            rng.normal([0.2, 0.2], 0.02, size=(120, 2)),
            rng.normal([0.8, 0.7], 0.05, size=(120, 2)),
            rng.uniform(size=(20, 2)),
        ]
    )


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("count", [4, 8, 16, 24])
def test_clustered_points_give_distinct_landmarks(seed, count):
    points = _clustered_points(seed)
    assert len(np.unique(points, axis=0)) == len(points)

    sut = geometry.select_landmarks(points, count)

    assert len(np.unique(sut)) == count


def test_landmark_lies_in_its_own_cell():
    points = _clustered_points(0)
    cells = geometry.kdtree_partition(points, 8)

    sut = geometry.select_landmarks(points, 8)

    expected = [
        cell[np.argmin(np.sum((points[cell] - points[cell].mean(axis=0)) ** 2, axis=1))]
        for cell in cells
    ]
    np.testing.assert_array_equal(sut, np.sort(expected))


def test_every_point_as_landmark():
    points = np.random.default_rng(4).uniform(size=(7, 2))

    np.testing.assert_array_equal(geometry.select_landmarks(points, 7), np.arange(7))
    assert len(geometry.select_landmarks(points, 0)) == 0


def test_too_many_landmarks():
    with pytest.raises(geometry.PlanError):
        geometry.select_landmarks(np.random.default_rng(0).uniform(size=(5, 2)), 6)


def test_one_landmark_per_block(grid_points):
    sut = geometry.build_plan(grid_points, 4, 4)

    assert sut.n == 16
    assert sut.p == 4
    assert [len(block) for block in sut.blocks_prime] == [3, 3, 3, 3]
    np.testing.assert_array_equal(sut.perm[12:], sut.landmarks)
    np.testing.assert_array_equal(np.sort(sut.perm), np.arange(16))
    np.testing.assert_array_equal(sut.complement, np.setdiff1d(np.arange(16), sut.landmarks))


def test_plan_without_landmarks(grid_points):
    sut = geometry.build_plan(grid_points, 4, 0)

    assert sut.p == 0
    np.testing.assert_array_equal(sut.complement, np.arange(16))
    np.testing.assert_array_equal(sut.perm, np.concatenate(sut.blocks))
    assert [s.stop - s.start for s in sut.q_slices] == [4, 4, 4, 4]


def test_plan_with_every_point_as_landmark():
    points = np.random.default_rng(5).uniform(size=(8, 2))

    sut = geometry.build_plan(points, 2, 8)

    assert sut.p == 8
    assert all(len(block) == 0 for block in sut.blocks_prime)
    np.testing.assert_array_equal(sut.perm, np.arange(8))


def test_plan_with_an_emptied_block():
    points = np.random.default_rng(5).uniform(size=(8, 2))

    with pytest.raises(geometry.PlanError):
        geometry.build_plan(points, 2, 7)


def test_permutation_roundtrip():
    points = np.random.default_rng(6).uniform(size=(30, 2))
    sut = geometry.build_plan(points, 4, 5)
    values = np.arange(30.0)

    np.testing.assert_array_equal(sut.unpermute(sut.permute(values)), values)
    np.testing.assert_array_equal(sut.permute(values)[sut.inverse_perm], values)


def test_nearest_block():
    centroids = np.array([[0.0, 0.0], [1.0, 0.0]])

    sut = geometry.nearest_block([[0.1, 0.0], [0.9, 0.2], [0.5, 0.0]], centroids)

    np.testing.assert_array_equal(sut, [0, 1, 0])
    assert len(geometry.nearest_block(np.zeros((0, 2)), centroids)) == 0


@pytest.mark.parametrize("n, block_size, expected", [(100, 128, 1), (256, 128, 2), (1000, 128, 4), (1024, 128, 8)])
def test_blocks_for_size(n, block_size, expected):
    assert geometry.blocks_for_size(n, block_size) == expected


def test_blocks_for_size_needs_a_positive_block():
    with pytest.raises(ValueError):
        geometry.blocks_for_size(10, 0)
