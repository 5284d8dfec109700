"""Kriging prediction and conditional simulation under the block full-scale covariance.

Each target joins the observed block whose centroid is nearest. A target is
covaried exactly with the reduced block it joins and with the landmarks, and
through the Nystrom term with everything else. Targets are locations of the
latent field, so no nugget is added among them.
"""
import dataclasses
import typing as t

import numpy as np
import scipy.linalg

import bfsa.bfsa_core as bfsa_core
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.parallel as parallel

NEGATIVE_EIGENVALUE_TOLERANCE = 1e-8


@dataclasses.dataclass(frozen=True, eq=False)
class PredictionPlan:
    """Targets, their block assignment and the cross-covariance pieces.

    target_blocks[l] lists the target indices assigned to block l; cross is
    S_{*P}; corrections[l] is S_{B'l, B*l} - F_l cross[B*l]^T; prior_blocks[l]
    is the within-block target covariance minus its Nystrom part. variance is
    the marginal variance of the latent field.
    """

    targets: np.ndarray
    assignment: np.ndarray
    target_blocks: t.List[np.ndarray]
    cross: np.ndarray
    cross_solved: np.ndarray
    corrections: t.List[np.ndarray]
    prior_blocks: t.List[np.ndarray]
    variance: float = 1.0

    @property
    def num_targets(self) -> int:
        return len(self.targets)


def build_prediction_plan(
    spec: kernels.KernelSpec, points, K: bfsa_core.BfsaMatrix, targets
) -> PredictionPlan:
    points = np.asarray(points, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    plan = K.plan
    centroids = geometry.block_centroids(points, plan.blocks)
    assignment = geometry.nearest_block(targets, centroids)
    target_blocks = [np.flatnonzero(assignment == index) for index in range(plan.num_blocks)]

    q_points, p_points = bfsa_core.split_points(points, plan)
    spec_latent = dataclasses.replace(spec, nugget=0.0)
    cross = kernels.kernel_matrix(spec_latent, targets, p_points)
    cross_solved = K.solve_pp(cross.T).T

    def block_pieces(index: int):
        part = plan.q_slices[index]
        members = target_blocks[index]
        block_targets = targets[members]
        correction = kernels.kernel_matrix(spec_latent, q_points[part], block_targets)
        correction -= K.nystrom_factor[part] @ cross[members].T
        prior = kernels.kernel_matrix(spec_latent, block_targets)
        prior -= cross_solved[members] @ cross[members].T
        return correction, (prior + prior.T) / 2.0

    pieces = parallel.thread_map(block_pieces, range(plan.num_blocks))
    return PredictionPlan(
        targets,
        assignment,
        target_blocks,
        cross,
        cross_solved,
        [correction for correction, _ in pieces],
        [prior for _, prior in pieces],
        spec.matern.sigma2,
    )


def _split_solution(K: bfsa_core.BfsaMatrix, alpha: np.ndarray):
    permuted = K.plan.permute(alpha)
    size = K.n - K.p
    return permuted[:size], permuted[size:]


def cond_mean(K: bfsa_core.BfsaMatrix, y, pplan: PredictionPlan) -> np.ndarray:
    """Kriging mean K*^T K^-1 y."""
    alpha = bfsa_core.solve_vec(K, np.asarray(y, dtype=float))
    a1, a2 = _split_solution(K, alpha)
    mean = pplan.cross @ (K.nystrom_factor.T @ a1 + a2)
    for part, members, correction in zip(K.plan.q_slices, pplan.target_blocks, pplan.corrections):
        mean[members] += correction.T @ a1[part]
    return mean


@dataclasses.dataclass(frozen=True, eq=False)
class ConditionalCovariance:
    """Conditional covariance of the targets.

    Target blocks decouple after conditioning: the Nystrom parts of K**, K* and
    K cancel, leaving one dense block per observed block.
    """

    target_blocks: t.List[np.ndarray]
    blocks: t.List[np.ndarray]
    num_targets: int

    def diagonal(self) -> np.ndarray:
        out = np.zeros(self.num_targets)
        for members, block in zip(self.target_blocks, self.blocks):
            out[members] = np.diag(block)
        return out

    def dense(self) -> np.ndarray:
        out = np.zeros((self.num_targets, self.num_targets))
        for members, block in zip(self.target_blocks, self.blocks):
            out[np.ix_(members, members)] = block
        return out


def cond_cov(K: bfsa_core.BfsaMatrix, pplan: PredictionPlan) -> ConditionalCovariance:
    def block(index: int) -> np.ndarray:
        correction = pplan.corrections[index]
        solved = K.solve_block(index, correction)
        value = pplan.prior_blocks[index] - correction.T @ solved
        return (value + value.T) / 2.0

    blocks = parallel.thread_map(block, range(K.plan.num_blocks))
    return ConditionalCovariance(pplan.target_blocks, blocks, pplan.num_targets)


def _block_root(block: np.ndarray, label: str, scale: float) -> np.ndarray:
    """A square root R with R R^T = block, tolerating singular blocks.

    Eigenvalues down to -NEGATIVE_EIGENVALUE_TOLERANCE * scale are rounding
    noise and are clipped to zero.
    """
    if block.shape[0] == 0:
        return block
    try:
        return scipy.linalg.cholesky(block, lower=True)
    except np.linalg.LinAlgError:
        eigenvalues, eigenvectors = scipy.linalg.eigh(block)
        if eigenvalues[0] < -NEGATIVE_EIGENVALUE_TOLERANCE * scale:
            raise bfsa_core.CholeskyFailure(label) from None
        return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def cond_simulate(
    K: bfsa_core.BfsaMatrix, y, pplan: PredictionPlan, seed: int, count: int
) -> np.ndarray:
    """count x n* conditional draws, deterministic per seed."""
    if count < 0:
        raise ValueError(f"Sample count must be nonnegative, got {count}.")
    mean = cond_mean(K, y, pplan)
    covariance = cond_cov(K, pplan)
    noise = np.random.default_rng(seed).standard_normal((count, pplan.num_targets))
    draws = np.tile(mean, (count, 1))
    for index, (members, block) in enumerate(zip(covariance.target_blocks, covariance.blocks)):
        root = _block_root(block, f"conditional covariance block {index}", pplan.variance)
        draws[:, members] += noise[:, members] @ root.T
    return draws


def simulate_unconditional(K: bfsa_core.BfsaMatrix, seed: int, count: int) -> np.ndarray:
    """count x n draws from N(0, K) through the symmetric factor."""
    if count < 0:
        raise ValueError(f"Sample count must be nonnegative, got {count}.")
    factor = bfsa_core.sym_factorize(K)
    noise = np.random.default_rng(seed).standard_normal((K.n, count))
    return factor.matvec(noise).T
