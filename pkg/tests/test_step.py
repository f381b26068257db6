import numpy as np
import pytest

from chainforge.fields import DefectField, GridSpec, VectorField, zeros_vector
from chainforge.renormalization import parse_beta
from chainforge.step.assemble import TERM_NAMES, cube_coefficients, perform_step
from chainforge.step.cubes import CubeCutoffs, CubePartition, cutoff_derivatives
from chainforge.step.parameters import (ExponentError, StepParameters, check_exponents,
                                        concentration_exponent, exponent_gap)
from chainforge.step.selection import (ParameterSelectionError, choose_cubes, choose_parameters,
                                       choose_zeta)
from chainforge.step.state import State, defect_l1

BETA = parse_beta("smooth-abs:1.0")
P, PT = 4 / 3, 1.0


def small_source(n=32):
    grid = GridSpec(3, n)
    x = grid.axis()
    h = np.zeros((3,) + grid.shape)
    h[0] = 1.0 + 0.5 * np.sin(2 * np.pi * x)[None, :, None]
    h[2] = 0.3
    return VectorField(grid, h)


def params(lam=2, mu=8.0, **kw):
    base = dict(cubes=1, cutoff=0.25, zeta=0.05, lam=lam, mu=mu, exponent=3, gap=0.5)
    base.update(kw)
    return StepParameters(**base)


@pytest.fixture(scope="module")
def step():
    state = State.initial(small_source())
    new, report = perform_step(state, state.h, BETA, P, PT, 0.5, params())
    return state, new, report


# cubes and cutoffs ------------------------------------------------------------


def test_cube_means_of_zero_and_constant():
    grid = GridSpec(3, 16)
    part = CubePartition(grid, 2)
    zero = DefectField(grid, np.zeros((3,) + grid.shape), np.zeros((3,) + grid.shape))
    assert np.all(cube_coefficients(zero, part) == 0)
    r1 = np.broadcast_to(np.array([1.0, 2.0, 3.0])[:, None, None, None], (3,) + grid.shape).copy()
    r2 = -0.5 * r1
    g = cube_coefficients(DefectField(grid, r1, r2), part)
    for j in range(6):
        k = j // 2
        expected = 0.5 * (r1[k, 0, 0, 0] + (r2[k, 0, 0, 0] if j % 2 == 0 else -r2[k, 0, 0, 0]))
        np.testing.assert_allclose(g[j], expected, rtol=1e-15)


def test_cube_means_of_a_sine_row():
    n = 64
    grid = GridSpec(2, n)
    x = grid.axis()
    r1 = np.zeros((2,) + grid.shape)
    r1[0] = np.sin(2 * np.pi * x)[:, None]
    g = cube_coefficients(DefectField(grid, r1, np.zeros_like(r1)), CubePartition(grid, 2))
    # left-endpoint sum of sin over half a period, halved by the decomposition
    exact_grid = 1.0 / (n * np.tan(np.pi / n))
    np.testing.assert_allclose(g[0][0], exact_grid, rtol=1e-13)
    np.testing.assert_allclose(g[0][1], -exact_grid, rtol=1e-13)
    assert g[0][0, 0] == pytest.approx(1 / np.pi, rel=1e-3)


def test_cube_mean_bounds():
    rng = np.random.default_rng(2)
    grid = GridSpec(2, 32)
    part = CubePartition(grid, 4)
    defect = DefectField(grid, rng.standard_normal((2,) + grid.shape), rng.standard_normal((2,) + grid.shape))
    g = cube_coefficients(defect, part)
    frob = np.sqrt(np.sum(defect.first**2, axis=0) + np.sum(defect.second**2, axis=0))
    assert np.abs(g).max() <= frob.max()
    for j in range(4):
        assert np.mean(np.abs(part.expand(g[j]))) <= defect_l1(defect) + 1e-15


def test_partition_rejects_non_dividing_cube_count():
    with pytest.raises(ValueError):
        CubePartition(GridSpec(2, 32), 3)


def test_cutoff_plateaus_and_vanishing():
    grid = GridSpec(2, 256)
    part = CubePartition(grid, 2)
    cut = CubeCutoffs(part, 0.25)
    centre = part.block // 2
    assert cut.chi_1d[centre] == 1.0 and cut.psi_1d[centre] == 1.0
    rel = np.arange(part.block) / grid.n
    dist = np.minimum(rel, part.side - rel)
    near = dist < 0.25 * 0.25 * part.side
    assert np.all(cut.chi_1d[near] == 0) and np.all(cut.psi_1d[near] == 0)
    assert all(cut.check().values())


def test_cutoff_analytic_derivative_matches_finite_difference():
    x = np.linspace(0.01, 0.24, 200)
    h = 1e-6
    for which in ("chi", "psi"):
        val, d1, _ = cutoff_derivatives(x, 0.0, 0.5, 0.25, which)
        up = cutoff_derivatives(x + h, 0.0, 0.5, 0.25, which)[0]
        dn = cutoff_derivatives(x - h, 0.0, 0.5, 0.25, which)[0]
        np.testing.assert_allclose(d1, (up - dn) / (2 * h), atol=1e-4 * np.abs(d1).max())


def test_cutoff_rejects_unresolved_ramps():
    with pytest.raises(ValueError, match="larger grid or cutoff parameter"):
        CubeCutoffs(CubePartition(GridSpec(2, 32), 4), 0.25)


# exponent arithmetic -------------------------------------------------------------


def test_exponent_arithmetic():
    assert exponent_gap(3, 4 / 3, 1.0) == pytest.approx(0.5)
    assert concentration_exponent(0.5) == 3
    with pytest.raises(ExponentError):
        check_exponents(3, 2.0, 2.0)


def test_constant_m_arithmetic(step):
    _, _, report = step
    c = report.constants
    assert c["M"] / c["M0"] == pytest.approx(9 ** 0.75, rel=1e-14)
    assert 9 ** 0.75 == pytest.approx(5.196, abs=1e-3)


def test_parameters_reject_misaligned_frequency():
    with pytest.raises(ValueError, match="multiple"):
        params(cubes=2, lam=3).validate(GridSpec(3, 32))


# the step itself -------------------------------------------------------------------


def test_zero_state_is_fixed():
    grid = GridSpec(3, 32)
    state = State.initial(zeros_vector(grid))
    new, report = perform_step(state, state.h, BETA, P, PT, 0.5, params())
    for arr in (new.rho.values, new.u.values, new.defect.first, new.defect.second):
        assert np.all(arr == 0)
    assert report.constants["nu_c"] == 0


def test_density_change_has_zero_mean(step):
    state, new, _ = step
    assert abs(np.mean(new.rho.values - state.rho.values)) < 1e-15


def test_weak_identities_hold(step):
    _, _, report = step
    assert report.residuals_ok
    for res in report.residuals.values():
        assert res["relative"] <= 1e-12


def test_term_ledger_is_complete_and_bounds_hold(step):
    _, _, report = step
    assert set(report.terms) == set(TERM_NAMES)
    assert report.terms["R_h"] == 0.0
    for name in ("R1_mean", "R2_mean", "R_h", "triangle"):
        assert report.bounds[name]["ok"], name
    assert report.constants["terms_sum"] == pytest.approx(sum(report.terms.values()), rel=1e-12)


def test_density_summands_have_disjoint_supports(step):
    _, _, report = step
    assert report.resolution["disjoint_supports"]
    assert report.resolution["overlapping_density_samples"] == 0


def test_improved_holder_main_term(step):
    _, _, report = step
    assert report.bounds["holder_main_term"]["excess"] <= 0


def test_state_is_not_mutated():
    state = State.initial(small_source())
    before = state.h.values.copy()
    perform_step(state, state.h, BETA, P, PT, 0.5, params())
    assert np.array_equal(state.h.values, before)
    assert np.all(state.rho.values == 0)


def test_target_gap_above_quarter_delta_raises():
    state = State.initial(small_source())
    far = VectorField(state.grid, state.h.values + 1.0)
    with pytest.raises(ValueError, match="delta/4"):
        perform_step(state, far, BETA, P, PT, 0.5, params())


def test_target_shift_lands_in_the_source_term():
    state = State.initial(small_source())
    shift = 0.01
    moved = VectorField(state.grid, state.h.values + shift)
    _, report = perform_step(state, moved, BETA, P, PT, 0.5, params())
    assert report.terms["R_h"] == pytest.approx(shift * np.sqrt(3), rel=1e-12)
    assert report.residuals_ok


def test_report_is_serializable(step):
    import json

    json.dumps(step[2].to_dict(), default=float)


# parameter selection ------------------------------------------------------------------


def test_choose_zeta_meets_both_conditions():
    zeta = choose_zeta(2.0, 3.0, P, 0.25, 3)
    assert zeta * 2.0 <= 0.25 / 24 * (1 + 1e-15)
    assert zeta * 3.0 ** 0.25 <= 0.25 / 24 * (1 + 1e-15)


def test_choose_cubes_keeps_coarse_partition_for_constant_defects():
    state = State.initial(VectorField(GridSpec(3, 32), np.ones((3, 32, 32, 32))))
    cubes, info = choose_cubes(state.defect, 0.5)
    assert cubes == 1 and info["met"]


def test_selection_report_policy_returns_closest_attempt():
    state = State.initial(small_source())
    try:
        sel = choose_parameters(state, state.h, BETA, P, PT, 0.5, policy="report", max_trials=3)
    except ParameterSelectionError as exc:
        assert exc.trials and exc.best is not None
        _, _, report = exc.best
        assert report.selection["policy"] == "report"
        assert report.residuals_ok
    else:
        assert sel.report.estimates_ok


def test_selection_strict_refuses_unresolvable_grids():
    state = State.initial(small_source())
    with pytest.raises(ParameterSelectionError) as info:
        choose_parameters(state, state.h, BETA, P, PT, 0.5, policy="strict")
    assert all(t.get("skipped") or not t["passed"] for t in info.value.trials)
