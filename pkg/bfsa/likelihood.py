"""Gaussian negative log-likelihood and its derivatives under the block full-scale covariance."""
import dataclasses
import itertools
import typing as t

import numpy as np

import bfsa.bfsa_core as bfsa_core
import bfsa.derivatives as derivatives
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.parallel as parallel

LOG_2PI = float(np.log(2.0 * np.pi))

SecondDerivatives = t.Callable[[int, int], bfsa_core.StructuredMatrix]


@dataclasses.dataclass(frozen=True, eq=False)
class LikelihoodState:
    K: bfsa_core.BfsaMatrix
    kinv_y: np.ndarray
    nll_value: float
    theta: np.ndarray


def likelihood_state(
    spec: kernels.KernelSpec, points, y, plan: geometry.PartitionPlan, theta=None
) -> LikelihoodState:
    y = np.asarray(y, dtype=float)
    K = bfsa_core.assemble(spec, points, plan)
    kinv_y = bfsa_core.solve_vec(K, y)
    value = _nll_from_solve(K, y, kinv_y)
    theta = np.array([], dtype=float) if theta is None else np.asarray(theta, dtype=float)
    return LikelihoodState(K, kinv_y, value, theta)


def _nll_from_solve(K: bfsa_core.BfsaMatrix, y: np.ndarray, kinv_y: np.ndarray) -> float:
    return 0.5 * bfsa_core.logdet(K) + 0.5 * float(y @ kinv_y) + 0.5 * K.n * LOG_2PI


def _check_length(K: bfsa_core.BfsaMatrix, y: np.ndarray):
    if y.shape != (K.n,):
        raise ValueError(f"Expected {K.n} observations, got shape {y.shape}.")


def nll(K: bfsa_core.BfsaMatrix, y) -> float:
    """Negative log-likelihood, including the (n / 2) log(2 pi) constant."""
    y = np.asarray(y, dtype=float)
    _check_length(K, y)
    return _nll_from_solve(K, y, bfsa_core.solve_vec(K, y))


def grad_exact(
    K: bfsa_core.BfsaMatrix, derivs: t.Sequence[bfsa_core.StructuredMatrix], y
) -> np.ndarray:
    """Gradient of nll: 1/2 tr(K^-1 dK_j) - 1/2 alpha^T dK_j alpha, with alpha = K^-1 y."""
    y = np.asarray(y, dtype=float)
    _check_length(K, y)
    alpha = bfsa_core.solve_vec(K, y)

    def component(deriv):
        trace = bfsa_core.solve_structured(K, deriv).trace()
        return 0.5 * trace - 0.5 * float(alpha @ deriv.matvec(alpha))

    return np.array(parallel.thread_map(component, list(derivs)), dtype=float)


def _upper_pairs(count: int) -> t.List[t.Tuple[int, int]]:
    return [(j, k) for j, k in itertools.product(range(count), repeat=2) if j <= k]


def _fisher_from_solved(solved: t.Sequence[bfsa_core.StructuredMatrix]) -> np.ndarray:
    count = len(solved)
    pairs = _upper_pairs(count)
    entries = parallel.thread_map(
        lambda pair: 0.5 * bfsa_core.trace_product(solved[pair[0]], solved[pair[1]]), pairs
    )
    fisher = np.zeros((count, count))
    for (j, k), value in zip(pairs, entries):
        fisher[j, k] = fisher[k, j] = value
    return fisher


def fisher_exact(
    K: bfsa_core.BfsaMatrix, derivs: t.Sequence[bfsa_core.StructuredMatrix]
) -> np.ndarray:
    """Expected Fisher information, 1/2 tr(K^-1 dK_j K^-1 dK_k); only the upper triangle is computed."""
    solved = parallel.thread_map(lambda d: bfsa_core.solve_structured(K, d), list(derivs))
    return _fisher_from_solved(solved)


def hessian_exact(
    K: bfsa_core.BfsaMatrix,
    derivs: t.Sequence[bfsa_core.StructuredMatrix],
    second_derivs: SecondDerivatives,
    y,
) -> np.ndarray:
    """Observed Hessian of nll.

    second_derivs(j, k) returns the structured second derivative; each one is
    built, used and dropped inside its own entry.
    """
    y = np.asarray(y, dtype=float)
    _check_length(K, y)
    alpha = bfsa_core.solve_vec(K, y)
    derivs = list(derivs)
    solved = parallel.thread_map(lambda d: bfsa_core.solve_structured(K, d), derivs)
    fisher = _fisher_from_solved(solved)
    moved = [d.matvec(alpha) for d in derivs]
    solved_moved = [bfsa_core.solve_vec(K, m) for m in moved]

    def entry(pair):
        j, k = pair
        second = second_derivs(j, k)
        trace = bfsa_core.solve_structured(K, second).trace()
        return (
            -fisher[j, k]
            + 0.5 * trace
            + float(moved[j] @ solved_moved[k])
            - 0.5 * float(alpha @ second.matvec(alpha))
        )

    count = len(derivs)
    pairs = _upper_pairs(count)
    entries = parallel.thread_map(entry, pairs)
    hessian = np.zeros((count, count))
    for (j, k), value in zip(pairs, entries):
        hessian[j, k] = hessian[k, j] = value
    return hessian


def second_derivative_builder(
    spec: kernels.KernelSpec,
    points,
    plan: geometry.PartitionPlan,
    K: bfsa_core.BfsaMatrix,
    indices: t.Optional[t.Sequence[int]] = None,
) -> SecondDerivatives:
    """Maps local (j, k) positions to d2_assemble over the given parameter indices."""
    indices = list(range(spec.num_params)) if indices is None else list(indices)
    return lambda j, k: derivatives.d2_assemble(spec, points, plan, K, indices[j], indices[k])


def profile_sigma2(K_unit: bfsa_core.BfsaMatrix, y) -> float:
    """Closed-form scale y^T K(1, theta)^-1 y / n for a covariance assembled at sigma2 = 1."""
    y = np.asarray(y, dtype=float)
    _check_length(K_unit, y)
    return float(y @ bfsa_core.solve_vec(K_unit, y)) / K_unit.n
