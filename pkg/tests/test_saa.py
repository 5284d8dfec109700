import numpy as np
import pytest

import bfsa.bfsa_core as bfsa_core
import bfsa.derivatives as derivatives
import bfsa.geometry as geometry
import bfsa.likelihood as likelihood
import bfsa.saa as saa
import tests.dense_oracles as dense_oracles


@pytest.fixture
def setup():
    points = dense_oracles.random_points(80, seed=41)
    model = dense_oracles.nonstationary_model(points, num_centers=2, nugget=1e-2)
    spec = model.spec(dense_oracles.random_field_theta(2, seed=7))
    plan = geometry.build_plan(points, 4, 8)
    K = bfsa_core.assemble(spec, points, plan)
    derivs = derivatives.d_assemble_all(spec, points, plan, K)
    W = bfsa_core.sym_factorize(K)
    y = np.random.default_rng(42).standard_normal(len(points))
    return K, W, derivs, y


def test_rademacher_probes():
    sut = saa.ProbeSet.rademacher(50, 6, seed=3)

    assert sut.vectors.shape == (50, 6)
    assert set(np.unique(sut.vectors)) <= {-1.0, 1.0}
    assert sut.weight == pytest.approx(1.0 / 6)


def test_probes_depend_only_on_seed_and_index():
    sut = saa.ProbeSet.rademacher(40, 5, seed=9)

    np.testing.assert_array_equal(saa.ProbeSet.rademacher(40, 3, seed=9).vectors, sut.vectors[:, :3])
    np.testing.assert_array_equal(saa.ProbeSet.rademacher(40, 5, seed=9).vectors, sut.vectors)
    assert not np.array_equal(saa.ProbeSet.rademacher(40, 5, seed=10).vectors, sut.vectors)


def test_probe_counts_must_be_positive():
    with pytest.raises(ValueError):
        saa.ProbeSet.rademacher(10, 0, seed=0)
    with pytest.raises(ValueError):
        saa.ProbeSet.rademacher(0, 3, seed=0)


def test_canonical_probes_give_the_exact_gradient(setup):
    K, W, derivs, y = setup
    probes = saa.ProbeSet.canonical(K.n)

    sut = saa.saa_grad(W, derivs, probes, K, y)

    np.testing.assert_allclose(sut, likelihood.grad_exact(K, derivs, y), rtol=1e-10, atol=1e-10)


def test_canonical_probes_give_the_exact_fisher_matrix(setup):
    K, W, derivs, _ = setup
    probes = saa.ProbeSet.canonical(K.n)

    sut = saa.saa_fisher(W, derivs, probes)

    expected = likelihood.fisher_exact(K, derivs)
    np.testing.assert_allclose(sut, expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())


def test_shared_products_give_the_same_estimates(setup):
    K, W, derivs, y = setup
    probes = saa.ProbeSet.rademacher(K.n, 8, seed=1)
    products = saa.probe_products(W, derivs, probes)

    np.testing.assert_array_equal(
        saa.saa_grad(W, derivs, probes, K, y, products), saa.saa_grad(W, derivs, probes, K, y)
    )
    np.testing.assert_array_equal(
        saa.saa_fisher(W, derivs, probes, products), saa.saa_fisher(W, derivs, probes)
    )


def test_symmetrized_trace_is_exact_for_the_covariance_itself(setup):
    K, W, _, _ = setup
    probes = saa.ProbeSet.rademacher(K.n, 12, seed=5)

    sut = saa.trace_samples_symmetrized(W, K.as_structured(), probes)

    np.testing.assert_allclose(sut, K.n, rtol=1e-9)


def test_trace_samples_with_canonical_probes_sum_to_the_trace(setup):
    K, W, derivs, _ = setup
    probes = saa.ProbeSet.canonical(K.n)
    expected = bfsa_core.solve_structured(K, derivs[0]).trace()

    assert saa.trace_samples_symmetrized(W, derivs[0], probes).sum() == pytest.approx(expected, rel=1e-10)
    assert saa.trace_samples_plain(K, derivs[0], probes).sum() == pytest.approx(expected, rel=1e-10)


def test_estimates_are_unbiased(setup):
    K, W, derivs, y = setup
    exact_gradient = likelihood.grad_exact(K, derivs, y)
    exact_fisher = likelihood.fisher_exact(K, derivs)

    gradients, fishers = [], []
    for seed in range(300):
        probes = saa.ProbeSet.rademacher(K.n, 16, seed)
        products = saa.probe_products(W, derivs, probes)
        gradients.append(saa.saa_grad(W, derivs, probes, K, y, products))
        fishers.append(np.diag(saa.saa_fisher(W, derivs, probes, products)))
    gradients, fishers = np.array(gradients), np.array(fishers)

    for samples, exact in ((gradients, exact_gradient), (fishers, np.diag(exact_fisher))):
        standard_error = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
        assert np.all(np.abs(samples.mean(axis=0) - exact) <= 4.0 * standard_error + 1e-12)


def test_symmetrized_samples_vary_less_than_plain_ones(setup):
    K, W, derivs, _ = setup
    probes = saa.ProbeSet.rademacher(K.n, 1000, seed=11)

    for deriv in derivs:
        symmetrized = saa.trace_samples_symmetrized(W, deriv, probes)
        plain = saa.trace_samples_plain(K, deriv, probes)

        exact = bfsa_core.solve_structured(K, deriv).trace()
        for samples in (symmetrized, plain):
            assert abs(samples.mean() - exact) <= 5.0 * samples.std() / np.sqrt(len(samples)) + 1e-12
        assert np.var(symmetrized) <= 1.05 * np.var(plain)
