"""Brute-force dense versions of the two-level covariance, likelihood and kriging.

These only use kernel evaluations and numpy/scipy dense algebra, never the
structured routines they check.
"""
import numpy as np
import scipy.linalg

import bfsa.geometry as geometry
import bfsa.kernels as kernels


def random_points(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(size=(n, 2))


def random_field_theta(num_centers: int, seed: int = 0, length: float = 0.3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    theta = np.empty((num_centers, 3))
    theta[:, 0] = np.log(length) + 0.3 * rng.standard_normal(num_centers)
    theta[:, 1] = 0.1 * rng.standard_normal(num_centers)
    theta[:, 2] = np.log(length) + 0.3 * rng.standard_normal(num_centers)
    return theta.reshape(-1)


def nonstationary_model(points, num_centers: int = 2, nugget: float = 1e-3, sigma2: float = 1.3):
    centers = geometry.block_centroids(points, geometry.kdtree_partition(points, num_centers))
    return kernels.NonstationaryModel(
        centers=centers,
        width=kernels.default_width(centers),
        nu=1.0,
        sigma2=sigma2,
        nugget=nugget,
    )


def nystrom(sigma: np.ndarray, landmarks: np.ndarray) -> np.ndarray:
    if len(landmarks) == 0:
        return np.zeros_like(sigma)
    corner = sigma[np.ix_(landmarks, landmarks)]
    return sigma[:, landmarks] @ scipy.linalg.solve(corner, sigma[landmarks, :], assume_a="pos")


def two_level_dense(sigma: np.ndarray, plan: geometry.PartitionPlan) -> np.ndarray:
    """Exact within reduced blocks and on landmark rows and columns, Nystrom elsewhere."""
    landmarks = plan.landmarks
    out = nystrom(sigma, landmarks)
    for block in plan.blocks_prime:
        out[np.ix_(block, block)] = sigma[np.ix_(block, block)]
    out[landmarks, :] = sigma[landmarks, :]
    out[:, landmarks] = sigma[:, landmarks]
    return out


def two_level_from_spec(spec, points, plan) -> np.ndarray:
    return two_level_dense(kernels.kernel_matrix(spec, points), plan)


def dense_nll(K: np.ndarray, y: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    return 0.5 * logdet + 0.5 * y @ np.linalg.solve(K, y) + 0.5 * len(y) * np.log(2 * np.pi)


def dense_kriging(spec, points, plan, targets, y):
    """Dense conditional mean and covariance of the two-level model at the targets."""
    points = np.asarray(points, dtype=float)
    targets = np.asarray(targets, dtype=float)
    latent = kernels.KernelSpec(spec.variant, spec.matern, spec.field, 0.0)
    observed = kernels.kernel_matrix(spec, points)
    landmarks = plan.landmarks
    corner = observed[np.ix_(landmarks, landmarks)]

    cross_full = kernels.kernel_matrix(latent, points, targets)
    target_full = kernels.kernel_matrix(latent, targets)
    if len(landmarks):
        solve = lambda rhs: scipy.linalg.solve(corner, rhs, assume_a="pos")
        cross = observed[:, landmarks] @ solve(cross_full[landmarks, :])
        prior = cross_full[landmarks, :].T @ solve(cross_full[landmarks, :])
    else:
        cross = np.zeros_like(cross_full)
        prior = np.zeros_like(target_full)

    assignment = geometry.nearest_block(targets, geometry.block_centroids(points, plan.blocks))
    for index, block in enumerate(plan.blocks_prime):
        members = np.flatnonzero(assignment == index)
        cross[np.ix_(block, members)] = cross_full[np.ix_(block, members)]
        prior[np.ix_(members, members)] = target_full[np.ix_(members, members)]
    cross[landmarks, :] = cross_full[landmarks, :]

    K = two_level_dense(observed, plan)
    mean = cross.T @ np.linalg.solve(K, y)
    covariance = prior - cross.T @ np.linalg.solve(K, cross)
    return mean, covariance


def relative_error(actual, expected) -> float:
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    return float(np.linalg.norm(actual - expected) / max(np.linalg.norm(expected), 1e-300))
