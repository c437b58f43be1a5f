import math

import numpy as np
import pytest

from solitonlab.artifacts import format_t, read_trajectory, trajectory_columns, write_trajectory
from solitonlab.dynamics import SimulationConfig, equilateral_13, perturbed_equilateral, simulate, two_body


def test_format_t_small_and_huge():
    assert float(format_t(2.0)) == math.exp(2.0)
    txt = format_t(1e4)
    mant, exp = txt.split("e")
    assert int(exp) == math.floor(1e4 / math.log(10))
    assert 1 <= float(mant) < 10
    assert math.log(float(mant)) + int(exp) * math.log(10) == pytest.approx(1e4, rel=1e-12)


def test_roundtrip_is_bit_exact(tmp_path, kernel_2d, clock_2d):
    cfg = perturbed_equilateral(2, 15.0, 0.2, seed=2)
    traj = simulate(cfg, SimulationConfig(kernel_2d, s_max=30.0))
    path = write_trajectory(tmp_path / "traj.csv", traj, kernel_2d, clock_2d, {"note": "x"})
    back, meta = read_trajectory(path)
    assert np.array_equal(back.s, traj.s)
    assert np.array_equal(back.centers, traj.centers)
    assert list(back.signs) == list(traj.signs)
    assert meta["note"] == "x"
    assert meta["columns"][:2] == ["t", "s"]
    assert "Lyap" in meta["columns"]


def test_two_body_file_has_no_observables(tmp_path, kernel_3d):
    traj = simulate(two_body(3, 12.0, same_sign=False), SimulationConfig(kernel_3d, s_max=5.0))
    cols = trajectory_columns(traj, kernel_3d)
    assert list(cols) == ["t", "s", "z0_0", "z0_1", "z0_2", "z1_0", "z1_1", "z1_2"]


def test_write_is_deterministic(tmp_path, kernel_2d, clock_2d):
    traj = simulate(equilateral_13(2, 15.0), SimulationConfig(kernel_2d, s_max=20.0))
    a = write_trajectory(tmp_path / "a.csv", traj, kernel_2d, clock_2d)
    b = write_trajectory(tmp_path / "b.csv", traj, kernel_2d, clock_2d)
    assert a.read_bytes() == b.read_bytes()
