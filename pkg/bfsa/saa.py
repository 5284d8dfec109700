"""Sample-average (Hutchinson-type) estimates of the gradient trace terms and the Fisher matrix.

Probes are pushed through the symmetric factor, u -> W^-T u, so that the
trace estimate of tr(K^-1 dK) is exact whenever dK is a multiple of K.
"""
import dataclasses
import itertools

import numpy as np

import bfsa.bfsa_core as bfsa_core
import bfsa.parallel as parallel

RADEMACHER = "rademacher"
CANONICAL = "canonical"


def _probe(seed: int, index: int, n: int) -> np.ndarray:
    """Probe `index` of a set; depends only on (seed, index) and not on generation order."""
    generator = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, index]))
    return 2.0 * generator.integers(0, 2, size=n) - 1.0


@dataclasses.dataclass(frozen=True, eq=False)
class ProbeSet:
    """s probe vectors stored as the columns of an n x s array.

    Canonical probes (the identity) make every estimate exact and carry
    weight 1; Rademacher probes carry weight 1 / s.
    """

    vectors: np.ndarray
    seed: int
    kind: str = RADEMACHER

    @classmethod
    def rademacher(cls, n: int, s: int, seed: int) -> "ProbeSet":
        if s < 1:
            raise ValueError(f"The number of probes must be positive, got {s}.")
        if n < 1:
            raise ValueError(f"Probes need a positive dimension, got {n}.")
        columns = [_probe(seed, index, n) for index in range(s)]
        return cls(np.column_stack(columns), seed, RADEMACHER)

    @classmethod
    def canonical(cls, n: int) -> "ProbeSet":
        return cls(np.eye(n), 0, CANONICAL)

    @property
    def s(self) -> int:
        return self.vectors.shape[1]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def weight(self) -> float:
        return 1.0 if self.kind == CANONICAL else 1.0 / self.s


@dataclasses.dataclass(frozen=True, eq=False)
class ProbeProducts:
    """xi = W^-T u for every probe and dK_j xi for every derivative, all n x s."""

    xi: np.ndarray
    moved: list
    weight: float


def probe_products(W: bfsa_core.SymmetricFactor, derivs, probes: ProbeSet) -> ProbeProducts:
    xi = W.solve_transpose(probes.vectors)
    moved = parallel.thread_map(lambda deriv: deriv.matvec(xi), list(derivs))
    return ProbeProducts(xi, moved, probes.weight)


def _trace_estimates(products: ProbeProducts) -> np.ndarray:
    return np.array(
        [products.weight * float(np.sum(products.xi * moved)) for moved in products.moved]
    )


def saa_grad(
    W: bfsa_core.SymmetricFactor,
    derivs,
    probes: ProbeSet,
    K: bfsa_core.BfsaMatrix,
    y,
    products: ProbeProducts = None,
) -> np.ndarray:
    """Gradient of nll with a stochastic trace term and an exact data term."""
    derivs = list(derivs)
    if products is None:
        products = probe_products(W, derivs, probes)
    alpha = bfsa_core.solve_vec(K, np.asarray(y, dtype=float))
    traces = _trace_estimates(products)
    quadratic = np.array([float(alpha @ deriv.matvec(alpha)) for deriv in derivs])
    return 0.5 * traces - 0.5 * quadratic


def saa_fisher(
    W: bfsa_core.SymmetricFactor,
    derivs,
    probes: ProbeSet,
    products: ProbeProducts = None,
) -> np.ndarray:
    """Fisher matrix estimate by polarization.

    With b_j = dK_j xi and c_j = K^-1 b_j, the diagonal is (w / 2) sum b_j . c_j
    and each off-diagonal entry is (w / 4) sum (b_j + b_k) . (c_j + c_k) minus
    half of each of the two diagonal entries.
    """
    if products is None:
        products = probe_products(W, derivs, probes)
    weight = products.weight
    solved = parallel.thread_map(
        lambda moved: W.solve_transpose(W.solve(moved)), products.moved
    )
    count = len(products.moved)
    fisher = np.zeros((count, count))
    for j in range(count):
        fisher[j, j] = 0.5 * weight * float(np.sum(products.moved[j] * solved[j]))
    for j, k in itertools.combinations(range(count), 2):
        quadratic = 0.25 * weight * float(
            np.sum((products.moved[j] + products.moved[k]) * (solved[j] + solved[k]))
        )
        fisher[j, k] = fisher[k, j] = quadratic - 0.5 * fisher[j, j] - 0.5 * fisher[k, k]
    return fisher


def trace_samples_symmetrized(
    W: bfsa_core.SymmetricFactor, deriv, probes: ProbeSet
) -> np.ndarray:
    """Per-probe values (W^-T u)^T dK (W^-T u); their mean estimates tr(K^-1 dK)."""
    xi = W.solve_transpose(probes.vectors)
    return np.sum(xi * deriv.matvec(xi), axis=0)


def trace_samples_plain(K: bfsa_core.BfsaMatrix, deriv, probes: ProbeSet) -> np.ndarray:
    """Per-probe values u^T K^-1 dK u of the plain Hutchinson estimator."""
    moved = deriv.matvec(probes.vectors)
    return np.sum(probes.vectors * bfsa_core.solve_vec(K, moved), axis=0)
