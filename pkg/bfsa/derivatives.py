"""First and second parameter derivatives of the block full-scale covariance.

Derivatives keep the permuted block layout of the covariance itself, with the
derivative of the Nystrom term stored as a factored low-rank product of width
2p (first derivatives) or 4p (second derivatives).
"""
import dataclasses
import typing as t

import numpy as np

import bfsa.bfsa_core as bfsa_core
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.parallel as parallel


@dataclasses.dataclass(frozen=True, eq=False)
class BfsaDerivative(bfsa_core.StructuredMatrix):
    """A structured derivative sharing the plan of its parent covariance."""

    @property
    def d_sigma_qp(self) -> np.ndarray:
        return self.upper_right

    @property
    def d_sigma_pp(self) -> np.ndarray:
        return self.corner

    @property
    def d_blocks(self) -> t.List[np.ndarray]:
        return self.blocks

    @property
    def lowrank_factors(self) -> t.Tuple[np.ndarray, np.ndarray]:
        return self.left, self.right


def _right_solve_pp(K: bfsa_core.BfsaMatrix, x: np.ndarray) -> np.ndarray:
    """x @ S_PP^-1."""
    return K.solve_pp(x.T).T


def _finish(
    plan: geometry.PartitionPlan,
    local_blocks: t.Sequence[np.ndarray],
    left: np.ndarray,
    right: np.ndarray,
    d_qp: np.ndarray,
    d_pp: np.ndarray,
) -> BfsaDerivative:
    blocks = []
    for part, local in zip(plan.q_slices, local_blocks):
        block = local - left[part] @ right[part].T
        blocks.append((block + block.T) / 2.0)
    d_pp = (d_pp + d_pp.T) / 2.0
    return BfsaDerivative(plan, blocks, left, right, d_qp, d_qp.T, d_pp)


def d_assemble(
    spec: kernels.KernelSpec,
    points,
    plan: geometry.PartitionPlan,
    K: bfsa_core.BfsaMatrix,
    j: int,
) -> BfsaDerivative:
    """dK/dtheta_j.

    The Nystrom derivative G F^T + F (G - F dS_PP)^T, with G = dS_QP and
    F = S_QP S_PP^-1, is kept as [G, F] [F, G - F dS_PP]^T.
    """
    q_points, p_points = bfsa_core.split_points(points, plan)
    d_qp = kernels.kernel_grad_matrix(spec, j, q_points, p_points)
    d_pp = kernels.kernel_grad_matrix(spec, j, p_points)
    nystrom = K.nystrom_factor

    left = np.hstack([d_qp, nystrom])
    right = np.hstack([nystrom, d_qp - nystrom @ d_pp])
    local_blocks = [
        kernels.kernel_grad_matrix(spec, j, q_points[part]) for part in plan.q_slices
    ]
    return _finish(plan, local_blocks, left, right, d_qp, d_pp)


def d2_assemble(
    spec: kernels.KernelSpec,
    points,
    plan: geometry.PartitionPlan,
    K: bfsa_core.BfsaMatrix,
    j: int,
    k: int,
) -> BfsaDerivative:
    """d^2 K / dtheta_j dtheta_k, with a low-rank part of width 4p."""
    q_points, p_points = bfsa_core.split_points(points, plan)
    g_j = kernels.kernel_grad_matrix(spec, j, q_points, p_points)
    g_k = kernels.kernel_grad_matrix(spec, k, q_points, p_points)
    g_jk = kernels.kernel_hess_matrix(spec, j, k, q_points, p_points)
    c_j = kernels.kernel_grad_matrix(spec, j, p_points)
    c_k = kernels.kernel_grad_matrix(spec, k, p_points)
    c_jk = kernels.kernel_hess_matrix(spec, j, k, p_points)
    nystrom = K.nystrom_factor

    v2 = _right_solve_pp(K, g_k - nystrom @ c_k)
    v3 = _right_solve_pp(K, g_j - nystrom @ c_j)
    v4 = (
        g_jk
        + nystrom @ (c_j @ K.solve_pp(c_k))
        + nystrom @ (c_k @ K.solve_pp(c_j))
        - nystrom @ c_jk
        - _right_solve_pp(K, g_k) @ c_j
        - _right_solve_pp(K, g_j) @ c_k
    )
    left = np.hstack([g_jk, g_j, g_k, nystrom])
    right = np.hstack([nystrom, v2, v3, v4])
    local_blocks = [
        kernels.kernel_hess_matrix(spec, j, k, q_points[part]) for part in plan.q_slices
    ]
    return _finish(plan, local_blocks, left, right, g_jk, c_jk)


def d_assemble_all(
    spec: kernels.KernelSpec,
    points,
    plan: geometry.PartitionPlan,
    K: bfsa_core.BfsaMatrix,
    indices: t.Optional[t.Sequence[int]] = None,
) -> t.List[BfsaDerivative]:
    """First derivatives for every requested parameter, built in parallel."""
    if indices is None:
        indices = range(spec.num_params)
    return parallel.thread_map(lambda j: d_assemble(spec, points, plan, K, j), list(indices))
