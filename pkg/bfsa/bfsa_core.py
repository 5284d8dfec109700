"""The block full-scale covariance representation and its linear algebra.

With the landmarks moved last, the covariance is stored as

    [[S_QP S_PP^-1 S_QP^T + blkdiag(D), S_QP],
     [S_QP^T,                           S_PP]]

where D is the Schur-complement correction on the reduced blocks B'. Nothing
here forms an n x n matrix except the `dense` reconstructions.
"""
import dataclasses
import functools
import logging
import typing as t

import numpy as np
import scipy.linalg

import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.parallel as parallel

JITTER_SCALE = 1e-10


class CholeskyFailure(np.linalg.LinAlgError):
    """A block that should be positive definite is not."""

    def __init__(self, label: str, theta=None):
        self.label = label
        self.theta = None if theta is None else [float(v) for v in theta]
        message = f"Cholesky factorization failed for {label}."
        if self.theta is not None:
            message += f" theta={self.theta}"
        super().__init__(message)

    def with_theta(self, theta) -> "CholeskyFailure":
        return CholeskyFailure(self.label, theta)


def _cholesky(matrix: np.ndarray, label: str) -> np.ndarray:
    if matrix.shape[0] == 0:
        return np.zeros((0, 0))
    try:
        return scipy.linalg.cholesky(matrix, lower=True)
    except np.linalg.LinAlgError:
        raise CholeskyFailure(label) from None


def _cholesky_with_jitter(matrix: np.ndarray, label: str) -> t.Tuple[np.ndarray, np.ndarray]:
    """Factors matrix, retrying once with a trace-scaled diagonal shift."""
    try:
        return matrix, _cholesky(matrix, label)
    except CholeskyFailure:
        jitter = JITTER_SCALE * np.trace(matrix) / matrix.shape[0]
        logging.warning(f"Cholesky failed for {label}; retrying with jitter {jitter:.3e}")
        shifted = matrix + jitter * np.eye(matrix.shape[0])
        return shifted, _cholesky(shifted, label)


def _cho_solve(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if factor.shape[0] == 0:
        return np.array(rhs, dtype=float, copy=True)
    return scipy.linalg.cho_solve((factor, True), rhs)


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2.0


def _apply_blocks(blocks: t.Sequence[np.ndarray], slices: t.Sequence[slice], x: np.ndarray, transpose=False):
    out = np.empty_like(x, dtype=float)
    for block, part in zip(blocks, slices):
        out[part] = (block.T if transpose else block) @ x[part]
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class StructuredMatrix:
    """An n x n operator stored in permuted block form:

        [[blkdiag(blocks) + left @ right.T, upper_right],
         [lower_left,                       corner     ]]

    Covariances, their derivatives and solves against them all share this form.
    """

    plan: geometry.PartitionPlan
    blocks: t.List[np.ndarray]
    left: np.ndarray
    right: np.ndarray
    upper_right: np.ndarray
    lower_left: np.ndarray
    corner: np.ndarray

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    def _split(self, x):
        z = self.plan.permute(np.asarray(x, dtype=float))
        size = self.plan.n - self.plan.p
        return z[:size], z[size:]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        z1, z2 = self._split(x)
        top = (
            _apply_blocks(self.blocks, self.plan.q_slices, z1)
            + self.left @ (self.right.T @ z1)
            + self.upper_right @ z2
        )
        bottom = self.lower_left @ z1 + self.corner @ z2
        return self.plan.unpermute(np.concatenate([top, bottom]))

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        z1, z2 = self._split(x)
        top = (
            _apply_blocks(self.blocks, self.plan.q_slices, z1, transpose=True)
            + self.right @ (self.left.T @ z1)
            + self.lower_left.T @ z2
        )
        bottom = self.upper_right.T @ z1 + self.corner.T @ z2
        return self.plan.unpermute(np.concatenate([top, bottom]))

    def trace(self) -> float:
        total = sum(np.trace(block) for block in self.blocks)
        total += np.sum(self.left * self.right)
        total += np.trace(self.corner)
        return float(total)

    def dense(self) -> np.ndarray:
        size = self.plan.n - self.plan.p
        permuted = np.zeros((self.plan.n, self.plan.n))
        top_left = self.left @ self.right.T
        for block, part in zip(self.blocks, self.plan.q_slices):
            top_left[part, part] += block
        permuted[:size, :size] = top_left
        permuted[:size, size:] = self.upper_right
        permuted[size:, :size] = self.lower_left
        permuted[size:, size:] = self.corner
        out = np.empty_like(permuted)
        out[np.ix_(self.plan.perm, self.plan.perm)] = permuted
        return out


def trace_product(a: StructuredMatrix, b: StructuredMatrix) -> float:
    """tr(a @ b) for two structured matrices on the same plan."""
    total = 0.0
    for part, block_a, block_b in zip(a.plan.q_slices, a.blocks, b.blocks):
        total += np.sum(block_a * block_b.T)
        total += np.sum((block_a @ b.left[part]) * b.right[part])
        total += np.sum((block_b @ a.left[part]) * a.right[part])
    total += np.sum((a.right.T @ b.left) * (b.right.T @ a.left).T)
    total += np.sum(a.upper_right * b.lower_left.T)
    total += np.sum(a.lower_left * b.upper_right.T)
    total += np.sum(a.corner * b.corner.T)
    return float(total)


@dataclasses.dataclass(frozen=True, eq=False)
class BfsaMatrix:
    """Block full-scale covariance with cached Cholesky factors.

    sigma_qp rows follow the permuted (block-contiguous) order. The nugget is
    already on the diagonals of sigma_pp and the d_blocks.
    """

    plan: geometry.PartitionPlan
    sigma_qp: np.ndarray
    sigma_pp: np.ndarray
    sigma_pp_factor: np.ndarray
    nystrom_factor: np.ndarray
    d_blocks: t.List[np.ndarray]
    d_factors: t.List[np.ndarray]
    nugget: float = 0.0

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def p(self) -> int:
        return self.plan.p

    def solve_d(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x, dtype=float)
        for factor, part in zip(self.d_factors, self.plan.q_slices):
            out[part] = _cho_solve(factor, x[part])
        return out

    def solve_block(self, index: int, x: np.ndarray) -> np.ndarray:
        return _cho_solve(self.d_factors[index], x)

    def solve_pp(self, x: np.ndarray) -> np.ndarray:
        return _cho_solve(self.sigma_pp_factor, x)

    @functools.cached_property
    def solved_nystrom_factor(self) -> np.ndarray:
        """D^-1 S_QP S_PP^-1, reused by every structured solve."""
        return self.solve_d(self.nystrom_factor)

    def as_structured(self) -> StructuredMatrix:
        return StructuredMatrix(
            self.plan,
            self.d_blocks,
            self.sigma_qp,
            self.nystrom_factor,
            self.sigma_qp,
            self.sigma_qp.T,
            self.sigma_pp,
        )

    def dense(self) -> np.ndarray:
        return self.as_structured().dense()


def split_points(points, plan: geometry.PartitionPlan) -> t.Tuple[np.ndarray, np.ndarray]:
    """Non-landmark points in permuted order, and the landmark points."""
    points = np.asarray(points, dtype=float)
    size = plan.n - plan.p
    return points[plan.perm[:size]], points[plan.landmarks]


def assemble(spec: kernels.KernelSpec, points, plan: geometry.PartitionPlan) -> BfsaMatrix:
    """Builds the block full-scale covariance of the points under spec."""
    q_points, p_points = split_points(points, plan)
    sigma_pp, pp_factor = _cholesky_with_jitter(
        kernels.kernel_matrix(spec, p_points), "landmark covariance"
    )
    sigma_qp = kernels.kernel_matrix(spec, q_points, p_points)
    nystrom = _cho_solve(pp_factor, sigma_qp.T).T

    def correction(index: int):
        part = plan.q_slices[index]
        local = kernels.kernel_matrix(spec, q_points[part])
        local = _symmetrize(local - nystrom[part] @ sigma_qp[part].T)
        return _cholesky_with_jitter(local, f"block {index}")

    corrections = parallel.thread_map(correction, range(len(plan.q_slices)))
    return BfsaMatrix(
        plan,
        sigma_qp,
        sigma_pp,
        pp_factor,
        nystrom,
        [block for block, _ in corrections],
        [factor for _, factor in corrections],
        spec.nugget,
    )


def logdet(K: BfsaMatrix) -> float:
    total = sum(2.0 * np.sum(np.log(np.diag(factor))) for factor in K.d_factors)
    total += 2.0 * np.sum(np.log(np.diag(K.sigma_pp_factor)))
    return float(total)


def solve_vec(K: BfsaMatrix, y: np.ndarray) -> np.ndarray:
    """K^-1 y for a vector or a matrix of right-hand sides."""
    z = K.plan.permute(np.asarray(y, dtype=float))
    size = K.n - K.p
    z1, z2 = z[:size], z[size:]
    w1 = K.solve_d(z1 - K.nystrom_factor @ z2)
    w2 = K.solve_pp(z2 - K.sigma_qp.T @ w1)
    return K.plan.unpermute(np.concatenate([w1, w2]))


def matvec(K: BfsaMatrix, y: np.ndarray) -> np.ndarray:
    return K.as_structured().matvec(y)


def solve_structured(K: BfsaMatrix, R: StructuredMatrix) -> StructuredMatrix:
    """K^-1 R kept in structured form.

    The upper-left low-rank part grows by p columns; every other piece is a
    dense (n - p) x p, p x (n - p) or p x p array.
    """
    plan = K.plan
    size = K.n - K.p
    blocks = [
        _cho_solve(factor, block) for factor, block in zip(K.d_factors, R.blocks)
    ]
    left = np.hstack([K.solve_d(R.left), -K.solved_nystrom_factor])
    right = np.hstack([R.right, R.lower_left.T])

    qp_times_top = (K.sigma_qp.T @ left) @ right.T
    for part, block in zip(plan.q_slices, blocks):
        qp_times_top[:, part] += K.sigma_qp[part].T @ block
    lower_left = K.solve_pp(R.lower_left - qp_times_top)

    upper_right = K.solve_d(R.upper_right - K.nystrom_factor @ R.corner)
    corner = K.solve_pp(R.corner - K.sigma_qp.T @ upper_right)
    if size == 0:
        lower_left = np.zeros((K.p, 0))
    return StructuredMatrix(plan, blocks, left, right, upper_right, lower_left, corner)


@dataclasses.dataclass(frozen=True, eq=False)
class SymmetricFactor:
    """Lower block-triangular W with K = W W^T, stored in permuted form as

        [[blkdiag(b_blocks) + x @ y.T, 0],
         [z.T,                         g]]

    `core` is the small p x p matrix of the push-through inverse of the
    upper-left block; `u` is blkdiag(b_blocks)^-1 x.
    """

    plan: geometry.PartitionPlan
    x: np.ndarray
    y: np.ndarray
    b_blocks: t.List[np.ndarray]
    z: np.ndarray
    g: np.ndarray
    u: np.ndarray
    core: np.ndarray

    def _split(self, v):
        z = self.plan.permute(np.asarray(v, dtype=float))
        size = self.plan.n - self.plan.p
        return z[:size], z[size:]

    def _b_solve(self, v, trans=False):
        out = np.empty_like(v, dtype=float)
        for block, part in zip(self.b_blocks, self.plan.q_slices):
            if block.shape[0]:
                out[part] = scipy.linalg.solve_triangular(
                    block, v[part], lower=True, trans="T" if trans else "N"
                )
        return out

    def _top_solve(self, v):
        start = self._b_solve(v)
        return start - self.u @ (self.core @ (self.u.T @ start))

    def _top_solve_transpose(self, v):
        inner = v - self.u @ (self.core.T @ (self.u.T @ v))
        return self._b_solve(inner, trans=True)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v1, v2 = self._split(v)
        top = _apply_blocks(self.b_blocks, self.plan.q_slices, v1) + self.x @ (self.y.T @ v1)
        bottom = self.z.T @ v1 + self.g @ v2
        return self.plan.unpermute(np.concatenate([top, bottom]))

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        v1, v2 = self._split(v)
        top = (
            _apply_blocks(self.b_blocks, self.plan.q_slices, v1, transpose=True)
            + self.y @ (self.x.T @ v1)
            + self.z @ v2
        )
        bottom = self.g.T @ v2
        return self.plan.unpermute(np.concatenate([top, bottom]))

    def solve(self, v: np.ndarray) -> np.ndarray:
        """W^-1 v."""
        v1, v2 = self._split(v)
        w1 = self._top_solve(v1)
        w2 = _triangular_solve(self.g, v2 - self.z.T @ w1)
        return self.plan.unpermute(np.concatenate([w1, w2]))

    def solve_transpose(self, v: np.ndarray) -> np.ndarray:
        """W^-T v."""
        v1, v2 = self._split(v)
        w2 = _triangular_solve(self.g, v2, trans=True)
        w1 = self._top_solve_transpose(v1 - self.z @ w2)
        return self.plan.unpermute(np.concatenate([w1, w2]))

    def dense(self) -> np.ndarray:
        size = self.plan.n - self.plan.p
        permuted = np.zeros((self.plan.n, self.plan.n))
        top = self.x @ self.y.T
        for block, part in zip(self.b_blocks, self.plan.q_slices):
            top[part, part] += block
        permuted[:size, :size] = top
        permuted[size:, :size] = self.z.T
        permuted[size:, size:] = self.g
        out = np.empty_like(permuted)
        out[np.ix_(self.plan.perm, self.plan.perm)] = permuted
        return out


def _triangular_solve(factor: np.ndarray, rhs: np.ndarray, trans=False) -> np.ndarray:
    if factor.shape[0] == 0:
        return np.array(rhs, dtype=float, copy=True)
    return scipy.linalg.solve_triangular(factor, rhs, lower=True, trans="T" if trans else "N")


def sym_factorize(K: BfsaMatrix) -> SymmetricFactor:
    """Symmetric factor W with W W^T = K, in O(n p^2 + n b^2).

    With B B^T = D and U = B^-1 S_QP, the upper-left block is B (I + U A U^T),
    where A solves A + A^T + A U^T U A^T = S_PP^-1. A is taken from the
    eigendecomposition of the whitened gram matrix, which stays well defined
    when U^T U is singular (fewer non-landmarks than landmarks).
    """
    plan = K.plan
    size = K.n - K.p
    p = K.p
    b_blocks = K.d_factors
    sigma_qp = K.sigma_qp

    u = np.empty_like(sigma_qp)
    for block, part in zip(b_blocks, plan.q_slices):
        u[part] = _triangular_solve(block, sigma_qp[part])

    if p == 0 or size == 0:
        y = np.zeros((size, p))
        core = np.zeros((p, p))
    else:
        whitened = _triangular_solve(K.sigma_pp_factor, u.T)
        eigenvalues, eigenvectors = scipy.linalg.eigh(_symmetrize(whitened @ whitened.T))
        eigenvalues = np.clip(eigenvalues, 0.0, None)
        root = np.sqrt(1.0 + eigenvalues)
        basis = _triangular_solve(K.sigma_pp_factor, eigenvectors, trans=True)
        a = (basis / (1.0 + root)) @ basis.T
        core = (basis / (1.0 + eigenvalues + root)) @ basis.T
        y = u @ a.T

    partial = SymmetricFactor(
        plan, sigma_qp, y, b_blocks, np.zeros((size, p)), np.zeros((p, p)), u, core
    )
    z = partial._top_solve(sigma_qp)
    g = _cholesky(_symmetrize(K.sigma_pp - z.T @ z), "landmark Schur complement")
    return dataclasses.replace(partial, z=z, g=g)
