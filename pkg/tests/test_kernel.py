import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from solitonlab.kernel import (
    KernelOptions,
    fit_c_star,
    force,
    g_closed_form_1d,
    interaction_g,
    tilted_mass,
)

# frozen d = 1, p = 3 values: tilted mass int Q^3 e^{-x} = 4 sqrt(2), c_g = c_q * 4 sqrt(2) = 16,
# c_F = 16 / (2 * 4/3) = 6
TILTED_1D = 4 * math.sqrt(2)
C_G_1D = 16.0
C_F_1D = 6.0


def test_1d_quadrature_matches_closed_form(profile_1d):
    r = np.array([1.0, 3.0, 7.5, 12.0, 20.0])
    g = interaction_g(profile_1d, r)
    ref = np.array([g_closed_form_1d(v, 3.0) for v in r])
    assert np.max(np.abs(g / ref - 1)) <= 1e-8


def test_1d_constants(kernel_1d, profile_1d):
    assert kernel_1d.tilted_mass == pytest.approx(TILTED_1D, rel=1e-9)
    assert kernel_1d.c_g == pytest.approx(C_G_1D, rel=1e-8)
    assert kernel_1d.c_F == pytest.approx(C_F_1D, rel=1e-8)


@pytest.mark.parametrize("d", [2, 3])
def test_tilted_mass_two_routes_agree(d, kernel_2d, kernel_3d):
    kern = kernel_2d if d == 2 else kernel_3d
    direct = tilted_mass(kern.profile, method="direct")
    assert direct == pytest.approx(kern.tilted_mass, rel=1e-10)


def test_quadrature_refinement_is_stable(kernel_2d):
    prof = kernel_2d.profile
    r = np.array([2.0, 10.0, 18.0])
    base = interaction_g(prof, r)
    fine = interaction_g(prof, r, KernelOptions(radial_order=32, angular_order=64))
    assert np.max(np.abs(fine / base - 1)) <= 1e-9


def test_3d_tail_ratio_is_one_plus_inverse_r(kernel_3d):
    # for d = 3 the exact kernel carries exactly the factor (1 + 1/r) at large r
    r = np.array([15.0, 18.0])
    ratio = kernel_3d.g_exact(r) / kernel_3d.g_asymptotic(r)
    assert np.allclose(ratio, 1 + 1 / r, rtol=1e-6)


@pytest.mark.parametrize("which", ["2d", "3d"])
def test_force_is_positive_and_decreasing(which, kernel_2d, kernel_3d):
    kern = kernel_2d if which == "2d" else kernel_3d
    r = np.linspace(1.0, 60.0, 4000)
    F = kern.force(r)
    assert np.all(F > 0)
    assert np.all(np.diff(F) < 0)


def test_force_rejects_short_range(kernel_2d):
    with pytest.raises(ValueError):
        force(kernel_2d, 0.5)


@pytest.mark.parametrize("which", ["2d", "3d"])
def test_tail_branch_is_c1_at_switch(which, kernel_2d, kernel_3d):
    kern = kernel_2d if which == "2d" else kernel_3d
    R, h = kern.r_switch, 1e-7
    lo, hi = kern.log_g(R - h), kern.log_g(R + h)
    assert abs(hi - lo - 2 * h * kern.dlog_g(R)) <= 1e-12
    assert abs(kern.dlog_g(R - h) - kern.dlog_g(R + h)) <= 1e-6


def test_tail_branch_matches_quadrature(kernel_2d):
    r = np.array([21.0, 23.0, 25.0])
    exact = interaction_g(kernel_2d.profile, r)
    model = np.exp(kernel_2d.log_g(r))
    assert np.max(np.abs(model / exact - 1)) <= 1e-4


def test_force_scales_inversely_with_alpha(kernel_2d):
    from solitonlab.kernel import cached_kernel

    k2 = cached_kernel(kernel_2d.profile, alpha=2.0)
    r = np.array([3.0, 17.0, 40.0])
    assert np.allclose(k2.force(r), kernel_2d.force(r) / 2, rtol=1e-13)


# reference clock


def test_clock_matches_direct_integration(kernel_2d, clock_2d):
    sol = solve_ivp(
        lambda s, L: [math.exp(s + float(kernel_2d.log_force(L[0])))],
        (0.0, 60.0), [float(clock_2d.L_of_s(0.0))], rtol=1e-12, atol=1e-12, dense_output=True,
    )  # fmt: skip
    s = np.linspace(0, 60, 61)
    assert np.max(np.abs(sol.sol(s)[0] - clock_2d.L_of_s(s))) <= 1e-8


def test_clock_starts_at_one(clock_2d):
    assert clock_2d.L_of_t(0.0) == 1.0
    # L(t) = 1 + F(1) t + O(t^2)
    assert clock_2d.L_of_t(1e-6) == pytest.approx(1 + float(clock_2d.kernel.force(1.0)) * 1e-6, abs=1e-11)


def test_clock_satisfies_its_ode(kernel_2d, clock_2d):
    s = np.linspace(5, 1.5e4, 3001)
    L = clock_2d.L_of_s(s)
    lhs = clock_2d.dL_ds(s)
    rhs = np.exp(s + kernel_2d.log_force(L))
    assert np.max(np.abs(lhs / rhs - 1)) <= 1e-6


@pytest.mark.parametrize("which", ["2d", "3d"])
def test_c_star_fit_recovers_log_c_F(which, clock_2d, clock_3d):
    clk = clock_2d if which == "2d" else clock_3d
    assert clk.c_star_exact == pytest.approx(math.log(clk.kernel.c_F), abs=1e-15)
    assert abs(clk.c_star - clk.c_star_exact) <= 1e-5


def test_fit_c_star_on_synthetic_law():
    s = np.linspace(100, 1000, 200)
    L = s - 0.5 * np.log(s) + 0.7 + 0.3 * np.log(s) / s
    c, rms = fit_c_star(s, L, 2)
    assert c == pytest.approx(0.7, abs=1e-10)
    assert rms <= 1e-10


def test_clock_refuses_to_extrapolate(clock_3d):
    with pytest.raises(ValueError):
        clock_3d.L_of_s(clock_3d.s_max + 1)
