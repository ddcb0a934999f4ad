import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_coefficients
from stefan_maxwell.transport import (
    PointState,
    PositivityError,
    TransportCoefficients,
    TransportError,
    augmentation_matrix,
    augmented_matrix,
    coercivity_bound,
    dissipation,
    gamma_rho_lambda2,
    onsager_matrix,
    spectral_report,
)


def entrywise_oracle(c, D, RT):
    """Independent loop evaluation of the transport matrix."""
    n = len(c)
    cT = sum(c)
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                M[i, j] = -RT * c[i] * c[j] / (D[i][j] * cT)
        M[i, i] = sum(RT * c[i] * c[k] / (D[i][k] * cT) for k in range(n) if k != i)
    return M


def test_two_species_example():
    co = TransportCoefficients.from_pairs(2, {(0, 1): 2.0}, (1.0, 1.0), RT=1.0)
    state = PointState.from_concentrations([1.0, 1.0], co.molar_masses)
    assert state.c_T == 2.0
    np.testing.assert_allclose(onsager_matrix(state, co), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


def test_three_species_entrywise():
    D = [[0, 1.0, 2.0], [1.0, 0, 3.0], [2.0, 3.0, 0]]
    co = TransportCoefficients(np.array(D), np.ones(3), RT=1.0)
    c = [1.0, 2.0, 3.0]
    np.testing.assert_allclose(onsager_matrix(np.array(c), co), entrywise_oracle(c, D, 1.0), rtol=0, atol=1e-14)


def test_augmentation_example(identity_coeffs):
    c = np.array([1.0, 1.0])
    L = augmentation_matrix(c, identity_coeffs)
    np.testing.assert_allclose(L, 0.5 * np.ones((2, 2)), atol=1e-15)
    np.testing.assert_allclose(L @ np.ones(2), np.ones(2), atol=1e-15)


def test_augmented_is_identity(identity_coeffs):
    c = np.array([1.0, 1.0])
    np.testing.assert_allclose(onsager_matrix(c, identity_coeffs), [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(augmented_matrix(c, identity_coeffs), np.eye(2), atol=1e-15)
    lam, mg = spectral_report(c, identity_coeffs)
    np.testing.assert_allclose(lam, [0.0, 1.0], atol=1e-15)
    assert mg == pytest.approx(1.0, abs=1e-15)


def test_gamma_zero_returns_M_exactly(rng):
    co = random_coefficients(rng, 4, gamma=0.0)
    c = rng.uniform(0.1, 1, 4)
    np.testing.assert_array_equal(augmented_matrix(c, co), onsager_matrix(c, co))


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_rank_one_augmentation(n, rng):
    for _ in range(20):
        co = random_coefficients(rng, n)
        s = np.linalg.svd(augmentation_matrix(rng.uniform(0.1, 1, n), co), compute_uv=False)
        assert s[1] <= 1e-13 * s[0]


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_symmetry_and_row_sums(n, rng):
    for _ in range(50):
        co = random_coefficients(rng, n)
        c = rng.uniform(0.1, 1.1, n)
        M = onsager_matrix(c, co)
        Mg = augmented_matrix(c, co)
        np.testing.assert_array_equal(M, M.T)
        np.testing.assert_array_equal(Mg, Mg.T)
        assert np.abs(M.sum(axis=1)).max() <= 1e-14 * np.abs(M).max()


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_quadratic_form_identity(n, rng):
    for _ in range(50):
        co = random_coefficients(rng, n)
        c = rng.uniform(0.1, 1.1, n)
        v = rng.standard_normal((n, 2))
        Mg = augmented_matrix(c, co)
        direct = sum(v[:, d] @ Mg @ v[:, d] for d in range(2))
        assert direct == pytest.approx(dissipation(c, co, v), rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_velocity_shift_invariance(n, rng):
    co = random_coefficients(rng, n)
    c = rng.uniform(0.1, 1.1, n)
    M = onsager_matrix(c, co)
    v = rng.standard_normal((n, 2))
    s = rng.standard_normal(2)
    np.testing.assert_allclose(M @ (v + s[None, :]), M @ v, atol=1e-12)


@given(
    arrays(np.float64, 4, elements=st.floats(0.1, 10)),
    st.floats(0.01, 100),
)
@settings(max_examples=60, deadline=None)
def test_homogeneity(c, alpha):
    co = TransportCoefficients.from_pairs(
        4, {(0, 1): 2.0, (2, 3): 3.0, (0, 2): 1.0, (0, 3): 1.0, (1, 2): 1.0, (1, 3): 1.0}, np.ones(4)
    )
    M, Ma = onsager_matrix(c, co), onsager_matrix(alpha * c, co)
    np.testing.assert_allclose(Ma, alpha * M, rtol=1e-14, atol=1e-14 * np.abs(alpha * M).max())
    lam, lam_a = np.linalg.eigvalsh(M), np.linalg.eigvalsh(Ma)
    np.testing.assert_allclose(lam_a, alpha * lam, atol=1e-12 * alpha * lam[-1])


def test_spectrum_positive_for_positive_diffusivities(rng):
    for n in (2, 3, 4, 6):
        for _ in range(25):
            co = random_coefficients(rng, n)
            c = rng.uniform(0.1, 1.1, n)
            lam, mg = spectral_report(c, co)
            assert abs(lam[0]) <= 1e-12 * lam[-1]
            assert lam[1] > 0
            assert mg > 0


def test_lambda2_scales_with_floor():
    co = TransportCoefficients.from_pairs(3, {(0, 1): 1.0, (0, 2): 2.0, (1, 2): 3.0}, np.ones(3))
    base = np.array([1.0, 0.5, 2.0])
    lam = [spectral_report(k * base, co)[0][1] for k in (0.1, 0.2, 0.4)]
    np.testing.assert_allclose(np.diff(np.log(lam)) / np.log(2), 1.0, atol=1e-12)


def test_negative_diffusivity_admitted():
    co = TransportCoefficients.from_pairs(3, {(0, 1): -1.0, (0, 2): 1.0, (1, 2): 1.0}, np.ones(3))
    lam, _ = spectral_report(np.array([1.0, 1.0, 1.0]), co)
    # the null eigenvalue is no longer the smallest one
    assert lam[0] < 0
    assert abs(lam[1]) < 1e-14


def test_positivity_error_names_species():
    co = TransportCoefficients.from_pairs(3, {(0, 1): 1.0, (0, 2): 1.0, (1, 2): 1.0}, np.ones(3))
    with pytest.raises(PositivityError) as info:
        onsager_matrix(np.array([1.0, 0.0, 1.0]), co)
    assert info.value.species == 1
    c = np.ones((4, 5, 3))
    c[2, 3, 2] = -1.0
    with pytest.raises(PositivityError) as info:
        augmented_matrix(c, co)
    assert info.value.species == 2
    assert info.value.index == (2, 3)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(D=np.ones((2, 2)), molar_masses=[1.0]),
        dict(D=np.array([[0, 1.0], [2.0, 0]]), molar_masses=[1.0, 1.0]),
        dict(D=np.array([[0, 0.0], [0.0, 0]]), molar_masses=[1.0, 1.0]),
        dict(D=np.array([[0, 1.0], [1.0, 0]]), molar_masses=[1.0, -1.0]),
        dict(D=np.array([[0, 1.0], [1.0, 0]]), molar_masses=[1.0, 1.0], RT=0.0),
        dict(D=np.array([[0, 1.0], [1.0, 0]]), molar_masses=[1.0, 1.0], gamma=-1.0),
    ],
)
def test_invalid_coefficients(kwargs):
    with pytest.raises(TransportError):
        TransportCoefficients(**kwargs)


def test_from_pairs_either_order_and_missing():
    a = TransportCoefficients.from_pairs(3, {(0, 1): 1.0, (2, 0): 2.0, (1, 2): 3.0}, np.ones(3))
    assert a.diffusivity(0, 2) == a.diffusivity(2, 0) == 2.0
    with pytest.raises(TransportError):
        TransportCoefficients.from_pairs(3, {(0, 1): 1.0}, np.ones(3))
    with pytest.raises(TransportError):
        TransportCoefficients.from_pairs(2, [(0, 1, 1.0), (1, 0, 2.0)], np.ones(2))


def test_coercivity_bound_is_valid(rng):
    for n in (2, 3, 4, 6):
        for _ in range(50):
            co = random_coefficients(rng, n, gamma=rng.uniform(0.01, 10))
            c = rng.uniform(0.1, 1.1, n)
            _, mg = spectral_report(c, co)
            bound = float(coercivity_bound(c, co))
            assert 0 < bound <= mg * (1 + 1e-10)


def test_coercivity_bound_sharp_for_equal_weights():
    # equal M_i c_i: the constant vector is an eigenvector and the bound is attained
    co = TransportCoefficients.from_pairs(2, {(0, 1): 1.0}, (1.0, 1.0))
    c = np.array([1.0, 1.0])
    assert float(coercivity_bound(c, co)) == pytest.approx(spectral_report(c, co)[1], rel=1e-12)


def test_min_gamma_rho_lambda2_is_not_a_lower_bound():
    # the constant direction gives Rayleigh quotient RT rho / n < gamma rho
    co = TransportCoefficients.from_pairs(2, {(0, 1): 0.01}, (1.0, 1.0))
    c = np.array([1.0, 1.0])
    _, mg = spectral_report(c, co)
    assert mg == pytest.approx(1.0)
    assert float(gamma_rho_lambda2(c, co)) == pytest.approx(2.0)
    assert mg < float(gamma_rho_lambda2(c, co))


def test_grid_evaluation_matches_pointwise(rng):
    co = random_coefficients(rng, 3)
    c = rng.uniform(0.1, 1, (4, 7, 3))
    grid = augmented_matrix(c, co)
    for idx in np.ndindex(4, 7):
        np.testing.assert_allclose(grid[idx], augmented_matrix(c[idx], co), rtol=1e-15, atol=1e-16)


def test_names_lookup():
    co = TransportCoefficients.from_pairs(2, {(0, 1): 5.0}, (1.0, 2.0), names=("A", "B"))
    assert co.diffusivity("B", "A") == 5.0
    with pytest.raises(TransportError):
        co.diffusivity("A", "A")
