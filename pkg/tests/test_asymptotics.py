import math

import numpy as np
import pytest

from solitonlab.asymptotics import (
    DECAY_BOUNDS,
    decay_envelopes,
    fit_rigidity,
    ode_residuals,
    pre_collision,
    radial_law,
    report_to_jsonable,
    separation_hierarchy_check,
    two_body_report,
)
from solitonlab.dynamics import (
    SimulationConfig,
    SolitonConfiguration,
    Trajectory,
    equilateral_13,
    perturbed_equilateral,
    simulate,
    two_body,
)
from solitonlab.errors import Collision, HierarchyViolated, InsufficientSpan, NotApplicable


@pytest.fixture(scope="module")
def eq_long(kernel_2d):
    return simulate(equilateral_13(2, 15.0), SimulationConfig(kernel_2d, s_max=1000.0, output_stride=1.0))


@pytest.fixture(scope="module")
def perturbed_dense(kernel_2d):
    cfg = perturbed_equilateral(2, 15.0, 0.2, seed=1)
    return simulate(cfg, SimulationConfig(kernel_2d, s_max=120.0, output_stride=0.05))


@pytest.fixture(scope="module")
def collapsing(kernel_2d):
    cfg = perturbed_equilateral(2, 15.0, 0.2, seed=7)
    return simulate(cfg, SimulationConfig(kernel_2d, s_max=200.0, output_stride=0.5))


def test_radial_law_values():
    s = np.array([-1.0, 0.0, math.e])
    out = radial_law(s, 3)
    assert np.isnan(out[0]) and np.isnan(out[1])
    assert out[2] == pytest.approx(math.e - 1.0)


def test_equilateral_rigidity(eq_long, clock_2d):
    rep = fit_rigidity(eq_long, clock_2d)
    assert rep.passed
    assert rep.omega_sum_norm <= 1e-12
    assert abs(rep.c0 - clock_2d.c_star_exact) <= rep.c0_tolerance
    assert np.allclose(rep.z_infinity, 0.0, atol=1e-12)
    payload = report_to_jsonable(rep)
    assert payload["passed"] is True


def test_rigidity_is_equivariant(eq_long, clock_2d):
    th = 0.7
    Q = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    y = np.array([4.0, -2.5])
    moved = Trajectory(eq_long.s, eq_long.centers @ Q.T + y, eq_long.signs, eq_long.model, eq_long.stats)
    a, b = fit_rigidity(eq_long, clock_2d), fit_rigidity(moved, clock_2d)
    assert np.allclose(b.omega, a.omega @ Q.T, atol=1e-12)
    assert np.allclose(b.z_infinity, a.z_infinity @ Q.T + y, atol=1e-9)
    assert b.c0 == pytest.approx(a.c0, abs=1e-10)


def test_equilateral_decay_series_are_flagged_not_fitted(eq_long, clock_2d):
    fits = {f.name: f for f in decay_envelopes(eq_long, clock_2d)}
    assert set(fits) == set(DECAY_BOUNDS)
    for name in ("cfrak", "|d|", "Wnorm", "barycenter_drift", "|z0-z_inf|"):
        assert fits[name].status in ("identically zero", "noise floor"), name
        assert fits[name].passed


def test_decay_fit_recovers_known_exponent(eq_long, clock_2d):
    # move center 0 along a known (log t)^{-2} path; the other series are unchanged
    s = eq_long.s
    z = eq_long.centers.copy()
    shift = 3000.0 * np.maximum(s, 100.0) ** -2.0
    z[:, 0, 0] += shift - shift[-1]
    # keep the barycenter where it was so only |z0 - z_inf| changes shape
    z[:, 1:, 0] -= ((shift - shift[-1]) / 3)[:, None]
    traj = Trajectory(s, z, eq_long.signs, eq_long.model, eq_long.stats)
    fit = {f.name: f for f in decay_envelopes(traj, clock_2d)}["|z0-z_inf|"]
    assert fit.status == "fitted"
    # the subtracted endpoint bends the tail; the fit must still sit at or below -2
    assert fit.beta <= -2.0 + 0.2


def test_ode_identities_hold_on_dense_run(perturbed_dense, kernel_2d, clock_2d):
    rep = ode_residuals(perturbed_dense, kernel_2d, clock_2d)
    failed = [c["name"] for c in rep["checks"] if not c["passed"]]
    assert not failed, failed
    assert len(rep["checks"]) == 12


def test_ode_residuals_detect_a_corrupted_frame(perturbed_dense, kernel_2d, clock_2d):
    z = perturbed_dense.centers.copy()
    z[len(z) // 2, 1] += 1e-3
    bad = Trajectory(perturbed_dense.s, z, perturbed_dense.signs, perturbed_dense.model, perturbed_dense.stats)
    rep = ode_residuals(bad, kernel_2d, clock_2d)
    assert not rep["passed"]


def test_ode_residuals_need_dense_output(eq_long, kernel_2d, clock_2d):
    with pytest.raises(InsufficientSpan):
        ode_residuals(eq_long, kernel_2d, clock_2d)


def test_two_body_identity(kernel_3d):
    traj = simulate(two_body(3, 12.0, same_sign=False), SimulationConfig(kernel_3d, s_max=100.0, output_stride=0.1))
    rep = ode_residuals(traj, kernel_3d)
    assert rep["passed"]
    assert [c["name"] for c in rep["checks"]] == ["rho_dot_two_body"]


def test_two_body_reports(kernel_2d):
    opp = simulate(two_body(2, 12.0, same_sign=False), SimulationConfig(kernel_2d, s_max=400.0, output_stride=1.0))
    rep = two_body_report(opp)
    assert rep["passed"], rep
    same = simulate(two_body(2, 12.0, same_sign=True), SimulationConfig(kernel_2d, s_max=100.0))
    assert two_body_report(same)["passed"]
    with pytest.raises(Collision):
        two_body_report(Trajectory(same.s, same.centers, [1, -1], same.model, same.stats, True, same.collision_s))


def test_hierarchy_holds_on_equilateral(eq_long, clock_2d):
    rep = separation_hierarchy_check(eq_long, clock_2d)
    assert rep["passed"]
    assert abs(rep["D_offset_final"] - clock_2d.c_star_exact) <= 0.1


def test_collision_handling(collapsing, clock_2d):
    assert collapsing.collision
    with pytest.raises(Collision):
        fit_rigidity(collapsing, clock_2d)
    cut = pre_collision(collapsing)
    assert not cut.collision
    assert cut.stats["truncated_at"] == collapsing.collision_s
    assert cut.s[-1] < collapsing.collision_s
    rep = separation_hierarchy_check(cut, clock_2d)
    assert not rep["passed"]
    assert rep["checks"]["gap"]["first_failure_s"] < collapsing.collision_s
    with pytest.raises(HierarchyViolated) as info:
        separation_hierarchy_check(cut, clock_2d, strict=True)
    assert info.value.frame_index is not None


def test_short_run_is_insufficient(kernel_2d, clock_2d):
    traj = simulate(equilateral_13(2, 15.0), SimulationConfig(kernel_2d, s_max=20.0))
    with pytest.raises(InsufficientSpan):
        fit_rigidity(traj, clock_2d)


def test_wrong_signs_are_not_applicable(kernel_2d, clock_2d):
    cfg = SolitonConfiguration(equilateral_13(2, 15.0).centers, [1, 1, -1, -1])
    traj = simulate(cfg, SimulationConfig(kernel_2d, s_max=5.0))
    for fn in (fit_rigidity, decay_envelopes, separation_hierarchy_check):
        with pytest.raises(NotApplicable):
            fn(traj, clock_2d)
    with pytest.raises(NotApplicable):
        two_body_report(traj)
