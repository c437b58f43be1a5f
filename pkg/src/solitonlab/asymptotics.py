"""Trajectory-level checks: rigidity fit, decay envelopes, ODE identities, hierarchy.

Every analysis here consumes a finished :class:`~solitonlab.dynamics.Trajectory`
together with the reference clock of the same kernel.  Time is handled in
s = log t throughout; t-derivatives are converted with the factor t = e^s,
formed in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory
from .errors import Collision, HierarchyViolated, InsufficientSpan, NotApplicable
from .geometry import PAIRS, angle_ode_coefficients, observables_from_frames
from .kernel import InteractionKernel, ReferenceClock

__all__ = [
    "RigidityReport",
    "DecayFit",
    "radial_law",
    "fit_rigidity",
    "decay_envelopes",
    "DECAY_BOUNDS",
    "ode_residuals",
    "separation_hierarchy_check",
    "two_body_report",
    "report_to_jsonable",
    "pre_collision",
]

SIGNS_13 = (1, -1, -1, -1)
ZERO_TOL = 1e-14
XI_GENERATOR = np.array([[-2.0, 0.5, 0.5], [0.5, -2.0, 0.5], [0.5, 0.5, -2.0]])


def _nu_prime(d: int) -> float:
    return (d - 1) / 2


def radial_law(s, d: int):
    """log t - ((d-1)/2) log log t, written in s = log t (NaN where s <= 0)."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, s - _nu_prime(d) * np.log(np.where(s > 0, s, 1.0)), np.nan)


def _require_13(traj: Trajectory):
    if traj.K != 4 or tuple(int(v) for v in traj.signs) != SIGNS_13:
        raise NotApplicable(f"expected signs {SIGNS_13}, got {tuple(int(v) for v in traj.signs)}")


def _require_span(traj: Trajectory, min_span: float, min_frames: int = 20):
    if traj.collision:
        raise Collision(f"trajectory ended early at s={traj.collision_s}: {traj.stats.get('message')}")
    span = traj.s[-1] - traj.s[0]
    if span < min_span or traj.s[-1] <= 1 or traj.n_frames < 2 * min_frames:
        raise InsufficientSpan(f"span {span:.3g} with {traj.n_frames} frames is too short (need {min_span})")


def pre_collision(traj: Trajectory) -> Trajectory:
    """Frames strictly before a recorded collision, re-labelled as a completed run.

    Lets the diagnostics describe the approach to a collapse; the original
    collision time stays in ``stats["truncated_at"]``.
    """
    if not traj.collision:
        return traj
    keep = traj.s < traj.collision_s
    stats = dict(traj.stats, truncated_at=traj.collision_s)
    return Trajectory(traj.s[keep], traj.centers[keep], traj.signs, traj.model, stats)


def _trailing(s: np.ndarray, frac: float = 0.5) -> np.ndarray:
    start = s[0] + (1 - frac) * (s[-1] - s[0])
    return s >= start


# ---------------------------------------------------------------------------
# rigidity


@dataclass
class RigidityReport:
    omega: np.ndarray
    omega_sum_norm: float
    z_infinity: np.ndarray
    c0: float
    c0_per_center: np.ndarray
    c_star: float
    c0_tolerance: float
    s: np.ndarray
    residual_series: np.ndarray
    fit_window: tuple
    flags: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        out = {
            "omega": self.omega.tolist(),
            "omega_sum_norm": self.omega_sum_norm,
            "z_infinity": self.z_infinity.tolist(),
            "c0": self.c0,
            "c0_per_center": self.c0_per_center.tolist(),
            "c_star": self.c_star,
            "c0_tolerance": self.c0_tolerance,
            "c0_error": abs(self.c0 - self.c_star),
            "fit_window": list(self.fit_window),
            "final_residual": self.residual_series[-1].tolist(),
            "flags": dict(self.flags),
            "passed": self.passed,
        }
        return out


def fit_rigidity(
    traj: Trajectory,
    clock: ReferenceClock,
    *,
    min_span: float = 100.0,
    omega_tol: float = 1e-2,
    c0_factor: float = 10.0,
) -> RigidityReport:
    """Fit the limiting radial law z_k ~ z_inf + (log t - nu' log log t + c0) omega_k."""
    _require_13(traj)
    _require_span(traj, min_span)
    d = traj.d
    s = traj.s
    z = traj.centers
    Z = z[:, 1:] - z[:, :1]
    rho = np.linalg.norm(Z, axis=-1)
    omega = Z[-1] / rho[-1][:, None]
    omega_sum = float(np.linalg.norm(omega.sum(axis=0)))
    z_inf = z[-1].mean(axis=0)

    win = _trailing(s)
    sw = s[win]
    design = np.column_stack([np.ones_like(sw), np.log(sw) / sw])
    target = rho[win] - radial_law(sw, d)[:, None]
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    c0_k = coef[0]
    c0 = float(c0_k.mean())

    law = radial_law(s, d) + c0
    resid = np.linalg.norm(z[:, 1:] - z_inf - law[:, None, None] * omega[None], axis=-1)

    s_end = float(s[-1])
    tol = c0_factor * math.log(s_end) / s_end
    flags = {
        "omega_unit": bool(np.all(np.abs(np.linalg.norm(omega, axis=1) - 1) <= 1e-10)),
        "equilateral_triple": omega_sum <= omega_tol,
        "c0_matches_clock": abs(c0 - clock.c_star_exact) <= tol,
    }
    return RigidityReport(
        omega=omega, omega_sum_norm=omega_sum, z_infinity=z_inf, c0=c0, c0_per_center=c0_k,
        c_star=clock.c_star_exact, c0_tolerance=tol, s=s, residual_series=resid,
        fit_window=(float(sw[0]), float(sw[-1])), flags=flags,
    )  # fmt: skip


# ---------------------------------------------------------------------------
# decay envelopes

# upper-bound exponents in s = log t
DECAY_BOUNDS = {
    "cfrak": -0.5,
    "|d|": -3.0,
    "|zeta|": -0.5,
    "Lyap": -1.0,
    "|xi|": -3.0,
    "|a-a_tilde|": -0.5,
    "|z0-z_inf|": -2.0,
    "Wnorm": -2.0,
    "barycenter_drift": -2.0,
}


@dataclass
class DecayFit:
    name: str
    s: np.ndarray
    values: np.ndarray
    beta: float | None
    constant: float | None
    window: tuple
    rms: float | None
    bound: float
    slack: float
    status: str  # "fitted", "identically zero" or "noise floor"
    window_betas: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.beta is None or self.beta <= self.bound + self.slack

    @property
    def tightening(self) -> bool:
        """Later windows never loosen the exponent by more than 0.05."""
        b = [x for x in self.window_betas if x is not None]
        return all(b[i + 1] <= b[i] + 0.05 for i in range(len(b) - 1))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "beta": self.beta,
            "constant": self.constant,
            "window": list(self.window),
            "rms": self.rms,
            "bound": self.bound,
            "slack": self.slack,
            "status": self.status,
            "window_betas": self.window_betas,
            "tightening": self.tightening,
            "passed": self.passed,
        }


def _loglog_fit(s, v):
    x, y = np.log(s), np.log(v)
    A = np.column_stack([np.ones_like(x), x])
    (c, beta), *_ = np.linalg.lstsq(A, y, rcond=None)
    rms = float(np.sqrt(np.mean((y - c - beta * x) ** 2)))
    # smallest C with v <= C s^beta on the window
    const = float(np.exp(np.max(y - beta * x)))
    return float(beta), const, rms


def _fit_series(name, s, v, floor, bound, slack, windows) -> DecayFit:
    floor = np.broadcast_to(floor, v.shape)
    win = _trailing(s)
    sw, vw = s[win], v[win]
    if np.all(vw <= ZERO_TOL):
        return DecayFit(name, s, v, None, None, (sw[0], sw[-1]), None, bound, slack, "identically zero")
    ok = vw > floor[win]
    if ok.sum() < max(10, win.sum() // 2):
        return DecayFit(name, s, v, None, None, (sw[0], sw[-1]), None, bound, slack, "noise floor")
    beta, const, rms = _loglog_fit(sw[ok], vw[ok])
    betas = []
    for frac in windows:
        m = _trailing(s, frac) & (v > floor)
        betas.append(_loglog_fit(s[m], v[m])[0] if m.sum() >= 10 else None)
    return DecayFit(name, s, v, beta, const, (float(sw[0]), float(sw[-1])), rms, bound, slack, "fitted", betas)


def decay_envelopes(
    traj: Trajectory,
    clock: ReferenceClock,
    *,
    slack: float = 0.2,
    min_span: float = 100.0,
    noise_factor: float = 100.0,
    windows=(0.5, 0.25, 0.125),
) -> list[DecayFit]:
    """Envelope exponents of the monitored series on the trailing half of the run.

    Series sitting under the integrator noise floor (``noise_factor`` times the
    relative tolerance at the series' natural scale) are reported but not fitted.
    """
    _require_13(traj)
    _require_span(traj, min_span)
    obs = observables_from_frames(traj.s, traj.centers, clock.kernel, clock)
    s = traj.s
    rtol = float(traj.stats.get("rtol", 1e-9))
    atol = float(traj.stats.get("atol", 1e-12))
    scale = float(np.abs(traj.centers).max())
    pos_floor = noise_factor * (rtol * scale + atol)
    ang_floor = noise_factor * (rtol * scale + atol) / float(obs.rho.min())
    bary = traj.centers.mean(axis=1)
    z_inf = bary[-1]
    series = {
        "cfrak": (obs.cfrak, ang_floor),
        "|d|": (np.linalg.norm(obs.d, axis=1), ang_floor),
        "|zeta|": (np.linalg.norm(obs.zeta, axis=1), pos_floor),
        # Lyap is quadratic in zeta, so its noise scales with |zeta| (b_k <= 15/4)
        "Lyap": (np.abs(obs.Lyap), 4 * pos_floor * (np.linalg.norm(obs.zeta, axis=1) + pos_floor)),
        "|xi|": (np.linalg.norm(obs.xi, axis=1), pos_floor),
        "|a-a_tilde|": (np.linalg.norm(obs.a - obs.a_tilde, axis=1), pos_floor),
        "|z0-z_inf|": (np.linalg.norm(traj.centers[:, 0] - z_inf, axis=1), pos_floor),
        "Wnorm": (obs.Wnorm, pos_floor),
        "barycenter_drift": (np.linalg.norm(bary - z_inf, axis=1), pos_floor),
    }
    return [
        _fit_series(name, s, val, floor, DECAY_BOUNDS[name], slack, windows)
        for name, (val, floor) in series.items()
    ]


# ---------------------------------------------------------------------------
# ODE identity residuals


def _central(y, h):
    """Central first derivative and a third-derivative estimate on interior points."""
    dy = (y[2:] - y[:-2]) / (2 * h)
    d3 = np.full_like(dy, np.nan)
    d3[1:-1] = (y[4:] - 2 * y[3:-1] + 2 * y[1:-3] - y[:-4]) / (2 * h**3)
    # edges borrow the neighbouring estimate
    d3[0], d3[-1] = d3[1], d3[-2]
    return dy, d3


def _fd_bound(d3, noise, h, safety):
    return safety * (h**2 / 6 * np.abs(d3) + noise / h)


def _uniform_block(s, max_stride):
    """Longest prefix of frames on a uniform grid (drops an off-grid final frame)."""
    h = s[1] - s[0]
    n = len(s)
    if n >= 3 and abs((s[-1] - s[-2]) - h) > 1e-9 * max(1.0, abs(s[-1])):
        n -= 1
    if h > max_stride + 1e-12:
        raise InsufficientSpan(f"stride {h:g} exceeds {max_stride:g}; dense output is required")
    if n < 7:
        raise InsufficientSpan("too few frames for central differences")
    return n, h


def _check(name, residual, fd, remainder_scale=None):
    allowed = fd if remainder_scale is None else np.maximum(fd, remainder_scale)
    ratio = residual / allowed
    return {
        "name": name,
        "max_residual": float(np.max(residual)),
        "max_fd_bound": float(np.max(fd)),
        "max_ratio": float(np.max(ratio)),
        "worst_frame": int(np.argmax(ratio)) + 1,
        "passed": bool(np.all(residual <= allowed)),
    }


def _rho_dot_13(rho, c, u, u_pair, tF_op, tF_like):
    """Exact identity for t d rho_k/dt in the (1,3) system."""
    cm = np.empty(rho.shape + (3,))
    cm[:, 0, 1] = cm[:, 1, 0] = c[:, 0]
    cm[:, 0, 2] = cm[:, 2, 0] = c[:, 1]
    cm[:, 1, 2] = cm[:, 2, 1] = c[:, 2]
    out = 2 * tF_op.copy()
    for k in range(3):
        for j in range(3):
            if j != k:
                out[:, k] += tF_op[:, j] * cm[:, k, j]
    for m, (i, j) in enumerate(PAIRS):
        # u_pair[m] points from i to j; z_i is pulled toward z_j and vice versa
        out[:, i] += tF_like[:, m] * np.einsum("nd,nd->n", u_pair[:, m], u[:, i])
        out[:, j] -= tF_like[:, m] * np.einsum("nd,nd->n", u_pair[:, m], u[:, j])
    return out


def _c_dot_13(rho, c, rho_pair, tF_op, tF_like):
    """Scalar identity for d c_ij/dt (times t), one pair at a time."""
    pair_index = {frozenset(p): m for m, p in enumerate(PAIRS)}
    out = np.empty_like(c)
    for m, (i, j) in enumerate(PAIRS):
        k = 3 - i - j
        c_ij = c[:, m]
        m_ik, m_jk = pair_index[frozenset((i, k))], pair_index[frozenset((j, k))]
        c_ik, c_jk = c[:, m_ik], c[:, m_jk]
        ri, rj, rk = rho[:, i], rho[:, j], rho[:, k]
        out[:, m] = (
            (1 - c_ij**2) * (tF_op[:, i] / rj + tF_op[:, j] / ri + tF_like[:, m] / rho_pair[:, m] * (rj / ri + ri / rj))
            + tF_op[:, k] * ((c_jk - c_ik * c_ij) / ri + (c_ik - c_jk * c_ij) / rj)
            + tF_like[:, m_ik] / rho_pair[:, m_ik] * rk * (c_jk - c_ij * c_ik) / ri
            + tF_like[:, m_jk] / rho_pair[:, m_jk] * rk * (c_ik - c_ij * c_jk) / rj
        )
    return out


def ode_residuals(
    traj: Trajectory,
    kernel: InteractionKernel,
    clock: ReferenceClock | None = None,
    *,
    max_stride: float = 0.1,
    safety: float = 4.0,
    remainder_constant: float = 10.0,
) -> dict:
    """Compare finite-difference derivatives of sampled series with the closed-form identities.

    Identities that hold exactly for the reduced system (radial and angular rates)
    are checked against the finite-difference bound alone.  The leading angle law
    and the xi law carry their own remainder scale, F(L)/L^{3/2} and
    F(L)(|a|^2 + |d|^2 + L^{-1/2}), multiplied by ``remainder_constant``.
    """
    n, h = _uniform_block(traj.s, max_stride)
    s = traj.s[:n]
    z = traj.centers[:n]
    rtol = float(traj.stats.get("rtol", 1e-9))
    atol = float(traj.stats.get("atol", 1e-12))
    e_z = rtol * np.abs(z).max(axis=(1, 2)) + atol
    mid = slice(1, n - 1)
    report = {"stride": h, "n_checked": n - 2, "checks": []}
    # an active perturbation adds up to t * amplitude * e^{-theta D} to every center velocity
    pert = (traj.model or {}).get("perturbation") or {}
    amp = float(pert.get("amplitude", 0.0))
    if amp > 0:
        diffs = z[:, :, None, :] - z[:, None, :, :]
        dist = np.linalg.norm(diffs, axis=-1)
        dist[:, np.arange(traj.K), np.arange(traj.K)] = np.inf
        D_all = dist.min(axis=(1, 2))
        t_pert = np.exp(np.minimum(s[mid] + math.log(amp) - float(pert["theta"]) * D_all[mid], 700.0))
    else:
        t_pert = np.zeros(n - 2)
    report["perturbation_velocity_max"] = float(t_pert.max())

    if traj.K == 2 and int(traj.signs[0]) * int(traj.signs[1]) < 0:
        rho = np.linalg.norm(z[:, 1] - z[:, 0], axis=-1)
        dy, d3 = _central(rho, h)
        pred = np.exp(s[mid] + kernel.log_force(rho[mid]))
        fd = _fd_bound(d3, 2 * e_z[mid], h, safety) + 2 * t_pert
        report["checks"].append(_check("rho_dot_two_body", np.abs(dy - 2 * pred), fd))
        report["passed"] = all(c["passed"] for c in report["checks"])
        return report
    _require_13(traj)
    if clock is None:
        raise ValueError("the (1,3) identities need the reference clock")

    obs = observables_from_frames(s, z, kernel, clock)
    tF_op = np.exp(s[:, None] + kernel.log_force(obs.rho))
    tF_like = np.exp(s[:, None] + kernel.log_force(obs.rho_pair))
    e_rho = 2 * e_z
    e_c = 4 * e_z / obs.rho.min(axis=1)

    # radial rates
    pred = _rho_dot_13(obs.rho, obs.c, obs.u, obs.u_pair, tF_op, tF_like)
    for k in range(3):
        dy, d3 = _central(obs.rho[:, k], h)
        fd = _fd_bound(d3, e_rho[mid], h, safety) + 2 * t_pert
        report["checks"].append(_check(f"rho{k + 1}_dot", np.abs(dy - pred[mid, k]), fd))

    # exact angular rates and the leading angle law
    pred_c = _c_dot_13(obs.rho, obs.c, obs.rho_pair, tF_op, tF_like)
    tFL = np.exp(s + kernel.log_force(obs.L))
    lead = (tFL / obs.L)[:, None] * angle_ode_coefficients(obs.c)
    scale_c = remainder_constant * tFL / obs.L**1.5
    names = ("12", "13", "23")
    for m in range(3):
        dy, d3 = _central(obs.c[:, m], h)
        fd = _fd_bound(d3, e_c[mid], h, safety) + 4 * t_pert / obs.rho[mid].min(axis=1)
        report["checks"].append(_check(f"c{names[m]}_dot", np.abs(dy - pred_c[mid, m]), fd))
        report["checks"].append(
            _check(f"c{names[m]}_dot_leading", np.abs(dy - lead[mid, m]), fd, scale_c[mid])
        )

    # xi law; the clock's own discretisation error enters through a = rho - L
    dL_fd, _ = _central(obs.L, h)
    e_clock = np.abs(dL_fd - clock.dL_ds(s[mid]))
    lead_xi = tFL[:, None] * (obs.xi @ XI_GENERATOR.T)
    a2 = np.sum(obs.a**2, axis=1)
    d2 = np.sum(obs.d**2, axis=1)
    scale_xi = remainder_constant * tFL * (a2 + d2 + obs.L**-0.5)
    for k in range(3):
        dy, d3 = _central(obs.xi[:, k], h)
        fd = _fd_bound(d3, e_rho[mid] + 2 * e_c[mid], h, safety) + e_clock + 4 * t_pert
        report["checks"].append(_check(f"xi{k + 1}_dot", np.abs(dy - lead_xi[mid, k]), fd, scale_xi[mid]))

    report["passed"] = all(c["passed"] for c in report["checks"])
    return report


# ---------------------------------------------------------------------------
# separation hierarchy


def separation_hierarchy_check(
    traj: Trajectory,
    clock: ReferenceClock,
    *,
    s_burn: float = 20.0,
    v_floor: float = -0.01,
    strict: bool = False,
) -> dict:
    """Per-frame hierarchy and Gram bounds after the burn-in.

    With ``strict`` the first failing frame raises :class:`HierarchyViolated`;
    otherwise the report lists first-failure indices (or None) per check.
    """
    _require_13(traj)
    keep = traj.s >= s_burn
    if not np.any(keep):
        raise InsufficientSpan(f"no frames beyond the burn-in s={s_burn}")
    idx = np.nonzero(keep)[0]
    obs = observables_from_frames(traj.s[keep], traj.centers[keep], clock.kernel, clock)
    gap = obs.D_tilde - obs.D - obs.D**0.2
    offset = obs.D - radial_law(obs.s, traj.d)
    checks = {
        "gap": (gap, gap > 0),
        "V_over_FD": (obs.V_over_FD - v_floor, obs.V_over_FD > v_floor),
        "A": (obs.A, obs.A >= 0),
        "Dcal_low": (obs.Dcal - 4, obs.Dcal >= 4 - 1e-12),
        "Dcal_high": (10 - obs.Dcal, obs.Dcal <= 10 + 1e-12),
        "b_low": (obs.b.min(axis=1) - 1 / 20, obs.b.min(axis=1) >= 1 / 20 - 1e-12),
        "b_high": (15 / 4 - obs.b.max(axis=1), obs.b.max(axis=1) <= 15 / 4 + 1e-12),
    }
    out = {"s_burn": s_burn, "n_frames": int(keep.sum()), "checks": {}}
    for name, (margin, ok) in checks.items():
        bad = np.nonzero(~ok)[0]
        first = int(idx[bad[0]]) if bad.size else None
        if strict and first is not None:
            raise HierarchyViolated(f"{name} fails at s={traj.s[first]:.6g}", frame_index=first)
        out["checks"][name] = {
            "passed": bool(bad.size == 0),
            "worst_margin": float(np.min(margin)),
            "first_failure": first,
            "first_failure_s": None if first is None else float(traj.s[first]),
            "n_failures": int(bad.size),
        }
    out["C_D"] = float(np.max(np.abs(offset)))
    out["D_offset_final"] = float(offset[-1])
    out["passed"] = all(c["passed"] for c in out["checks"].values())
    return out


# ---------------------------------------------------------------------------
# two-body laws


def two_body_report(traj: Trajectory, *, direction_tol: float = 1e-10, const_tol: float = 0.1) -> dict:
    """Direction constancy and the radial law of a two-soliton run.

    For a same-sign pair the only check is that a collision was recorded.
    """
    if traj.K != 2:
        raise NotApplicable("two_body_report expects two centers")
    same = int(traj.signs[0]) == int(traj.signs[1])
    if same:
        return {"same_sign": True, "collision": traj.collision, "collision_s": traj.collision_s, "passed": traj.collision}
    if traj.collision:
        raise Collision("opposite-sign pair collided")
    Zr = traj.centers[:, 1] - traj.centers[:, 0]
    D = np.linalg.norm(Zr, axis=-1)
    u = Zr / D[:, None]
    drift = float(np.max(np.linalg.norm(u - u[0], axis=1)))
    s = traj.s
    s_end = s[-1]
    offsets = []
    for lo, hi in ((s_end / 4, s_end / 2), (s_end / 2, s_end)):
        m = (s >= lo) & (s <= hi) & (s > 1)
        if m.sum() < 10:
            raise InsufficientSpan("dyadic windows need at least 10 frames each")
        sw = s[m]
        A = np.column_stack([np.ones_like(sw), np.log(sw) / sw])
        coef, *_ = np.linalg.lstsq(A, D[m] - radial_law(sw, traj.d), rcond=None)
        offsets.append(float(coef[0]))
    stable = abs(offsets[1] - offsets[0]) <= const_tol
    return {
        "same_sign": False,
        "direction_drift": drift,
        "direction_fixed": drift <= direction_tol,
        "window_constants": offsets,
        "constant_stable": stable,
        "passed": bool(drift <= direction_tol and stable),
    }


def report_to_jsonable(obj):
    """Recursively convert numpy scalars and arrays for json.dump."""
    if isinstance(obj, dict):
        return {k: report_to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [report_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return report_to_jsonable(obj.to_dict())
    return obj

