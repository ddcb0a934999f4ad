import dataclasses

import numpy as np
import pytest

from stefan_maxwell.mesh import Diagonal
from stefan_maxwell.solver import PicardSettings
from stefan_maxwell.verify import (
    CSV_HEADER,
    DIFFUSIVITIES,
    INLET,
    OUTLET,
    READINGS,
    DemoConfig,
    ManufacturedCase,
    OracleError,
    ScalarFunction,
    StudyError,
    build_manufactured_case,
    convergence_study,
    demo_coefficients,
    fd_derivative,
    mixed_bc_demo,
    manufactured_coefficients,
    manufactured_k1,
    manufactured_k2,
    reaction_rates,
    resolve_reading,
)


@pytest.fixture(scope="module")
def case():
    return build_manufactured_case()


def probe(n=50, seed=42, margin=0.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(margin, 1 - margin, n), rng.uniform(margin, 1 - margin, n)


def test_corner_values(case):
    x = np.array([0.0, 1.0, 0.0, 1.0])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    c = [f(x, y) for f in case.concentrations()]
    np.testing.assert_allclose(manufactured_k1()(x, y), 0.5)
    np.testing.assert_allclose(manufactured_k2()(x, y), 0.0, atol=1e-16)
    np.testing.assert_allclose(c[0], 1.5)
    np.testing.assert_allclose(c[1], 0.5)
    np.testing.assert_allclose(c[2], 1.0)
    np.testing.assert_allclose(c[3], 1.0)
    assert case.c_T == 4.0


def test_pair_sums_constant(case):
    x, y = probe()
    c = [f(x, y) for f in case.concentrations()]
    np.testing.assert_allclose(c[0] + c[1], 2.0, atol=1e-15)
    np.testing.assert_allclose(c[2] + c[3], 2.0, atol=1e-15)
    assert min(ci.min() for ci in c) > 0


def test_oracles_pass(case):
    sm, fl = case.check_oracles()
    assert sm <= 1e-9
    assert fl <= 1e-10


def test_exactly_one_reading_passes():
    base = build_manufactured_case(resolve=False)
    passing = []
    for reading in READINGS:
        try:
            dataclasses.replace(base, reading=reading).check_oracles()
            passing.append(reading)
        except OracleError:
            pass
    assert len(passing) == 1
    assert build_manufactured_case().reading == passing[0]


def test_wrong_reading_rejected():
    base = build_manufactured_case(resolve=False)
    wrong = [r for r in READINGS if r != build_manufactured_case().reading][0]
    with pytest.raises(OracleError):
        dataclasses.replace(base, reading=wrong).check_oracles()


def test_gradients_match_finite_differences(case):
    x, y = probe(margin=0.05)
    for f, g in zip(case.concentrations(), case.concentration_gradients()):
        gx, gy = g(x, y)
        np.testing.assert_allclose(fd_derivative(f, x, y, 0, 1e-4, 0, 1), gx, atol=1e-9)
        np.testing.assert_allclose(fd_derivative(f, x, y, 1, 1e-4, 0, 1), gy, atol=1e-9)


def test_laplacians_match_finite_differences():
    x, y = probe(margin=0.05)
    for k in (manufactured_k1(), manufactured_k2()):
        gx = lambda a, b, k=k: k.grad(a, b)[0]  # noqa: E731
        gy = lambda a, b, k=k: k.grad(a, b)[1]  # noqa: E731
        lap = fd_derivative(gx, x, y, 0, 1e-4, 0, 1) + fd_derivative(gy, x, y, 1, 1e-4, 0, 1)
        np.testing.assert_allclose(lap, k.lap(x, y), atol=1e-8)


def test_reaction_sum_vanishes_for_constant_u(case):
    x, y = probe()
    r = [f(x, y) for f in case.reaction_rates()]
    assert np.abs(sum(r)).max() <= 1e-8
    # the pair identity r1 + r2 = div(2 K1 u / c_T) = 0
    assert np.abs(r[0] + r[1]).max() <= 1e-8
    assert np.abs(r[2] + r[3]).max() <= 1e-8


def test_reaction_rates_analytic_vs_fd(case):
    fd_case = dataclasses.replace(case, k1=ScalarFunction(case.k1.f, case.k1.grad, None))
    x, y = probe()
    # include points on the boundary, where one-sided stencils are used
    x = np.concatenate([x, [0.0, 1.0, 0.3]])
    y = np.concatenate([y, [0.5, 0.2, 1.0]])
    for ra, rf in zip(reaction_rates(case), reaction_rates(fd_case)):
        np.testing.assert_allclose(rf(x, y), ra(x, y), atol=1e-7)


def test_reactions_zero_case():
    zero = ScalarFunction(lambda x, y: 0.0 * x, lambda x, y: (0.0 * x, 0.0 * x), lambda x, y: 0.0 * x)
    case = ManufacturedCase(zero, zero, 1.0, 1.0, manufactured_coefficients())
    x, y = probe()
    for r in case.reaction_rates():
        assert np.abs(r(x, y)).max() == 0
    fd_case = dataclasses.replace(case, k1=ScalarFunction(zero.f, zero.grad, None))
    for r in fd_case.reaction_rates():
        assert np.abs(r(x, y)).max() <= 1e-12


def test_fd_derivative_fourth_order():
    f = lambda x, y: np.sin(3 * x) * np.exp(y)  # noqa: E731
    x, y = np.array([0.0, 0.4, 1.0]), np.array([0.3, 0.3, 0.3])
    exact = 3 * np.cos(3 * x) * np.exp(y)
    e = [np.abs(fd_derivative(f, x, y, 0, h, 0, 1) - exact).max() for h in (1e-2, 5e-3)]
    assert 12 < e[0] / e[1] < 20


def test_case_validation():
    bad = manufactured_coefficients()
    D = bad.D.copy()
    D[0, 2] = D[2, 0] = 5.0
    with pytest.raises(ValueError):
        ManufacturedCase(manufactured_k1(), manufactured_k2(), 1.0, 1.0, dataclasses.replace(bad, D=D))


def test_study_needs_three_levels(case):
    with pytest.raises(ValueError):
        convergence_study(case, [4, 8])


def test_csv_header():
    assert ",".join(CSV_HEADER) == "N,h,E1,E2,E3,E4,iterations,gibbs_duhem_l2,wall_time_s"


def test_study_failure_keeps_partial(case):
    with pytest.raises(StudyError) as info:
        convergence_study(case, [2, 4, 8], settings=PicardSettings(max_iterations=2))
    partial = info.value.partial
    assert partial.failed.startswith("N=2")
    assert partial.levels == []


@pytest.fixture(scope="module")
def small_study(case):
    return convergence_study(case, [8, 16, 32], 1, PicardSettings())


def test_study_halving_ratios(small_study):
    ratios = small_study.pairwise_ratios()
    for name in ("E2", "E3", "E4"):
        assert all(1.7 <= r <= 2.3 for r in ratios[name]), (name, ratios[name])
    assert all(3.6 <= r <= 4.4 for r in ratios["E1"])


def test_study_rows(small_study):
    rows = small_study.rows()
    assert [r[0] for r in rows] == [8, 16, 32]
    assert all(len(r) == len(CSV_HEADER) for r in rows)
    assert len(set(small_study.column("iterations"))) == 1
    assert small_study.column("gibbs_duhem_l2").max() <= 1e-12


def test_study_is_diagonal_insensitive(case):
    s = convergence_study(case, [4, 8, 16], 1, PicardSettings(), Diagonal.LEFT).slopes()
    assert 1.8 <= s["E1"] <= 2.2
    assert 0.85 <= s["E2"] <= 1.15


def test_demo_data():
    assert sum(INLET) == pytest.approx(1.0, abs=1e-12)
    assert sum(OUTLET) == pytest.approx(1.0, abs=1e-12)
    co = demo_coefficients()
    assert co.diffusivity("N2", "O2") == co.diffusivity("O2", "N2") == 21.87
    assert len(DIFFUSIVITIES) == 6


def test_demo_equal_data_is_equilibrium():
    res = mixed_bc_demo(DemoConfig(N=8, outlet=INLET))
    assert res.report.iterations <= 2
    for f, y in zip(res.concentrations, INLET):
        np.testing.assert_allclose(f.coefficients, y, atol=1e-13)
    for v in res.velocities:
        assert np.abs(v.coefficients).max() <= 1e-12


@pytest.fixture(scope="module")
def demo16():
    return mixed_bc_demo(DemoConfig(N=16))


def test_demo_properties(demo16):
    d = demo16.diagnostics
    assert demo16.report.converged
    assert demo16.report.iterations <= 20
    assert d["sum_deviation"] <= 1e-12
    assert -1e-10 <= d["min_fraction"] and d["max_fraction"] <= 1 + 1e-10
    assert set(d) >= {"h2o_vx_sign", "uphill", "h2o_vx_near_inlet"}


def test_demo_water_diffuses_uphill(demo16):
    # water has the same fraction at both ends, yet moves relative to the mixture
    d = demo16.diagnostics
    assert d["uphill"]
    assert d["h2o_vx_sign"] != 0


def test_demo_left_diagonal():
    res = mixed_bc_demo(DemoConfig(N=8, diag=Diagonal.LEFT))
    assert res.report.converged
    assert res.diagnostics["sum_deviation"] <= 1e-12
