"""Radial ground state of -Delta Q + Q - Q^p = 0 by shooting on q(0).

The profile is tabulated on a uniform grid with a fixed-step RK4 integrator.
Outward shooting is only reliable up to a moderate radius, since round-off
excites the growing mode like e^{2r}.  From there on the decaying branch is
integrated inward from r_max, starting on the linear tail
``A r^{-nu} K_nu(r)`` (``nu = (d - 2) / 2``), with A tuned so both pieces
meet.  Past ``r_match`` the linear tail itself is used; its leading
behaviour is ``c_q r^{-(d-1)/2} e^{-r}`` with ``c_q = A sqrt(pi/2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import integrate, special

from . import cache
from .errors import BlowUp, NonBracketedShoot
from .numerics import quintic_hermite

__all__ = [
    "ModelParams",
    "ShootingOptions",
    "RadialProfile",
    "ProfileConstants",
    "solve_profile",
    "profile_constants",
    "eval_profile",
    "sphere_measure",
    "closed_form_1d",
    "profile_header",
    "cached_profile",
]


@dataclass(frozen=True)
class ModelParams:
    d: int
    p: float
    alpha: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or not 1 <= self.d <= 5:
            raise ValueError(f"d must be an integer in [1, 5], got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "alpha", float(self.alpha))
        if not self.p > 2:
            raise ValueError(f"p must satisfy 2 < p, got {self.p}")
        if self.d >= 3 and not self.p < (self.d + 2) / (self.d - 2):
            raise ValueError(
                f"p must be energy sub-critical, p < {(self.d + 2) / (self.d - 2):.6g} for d={self.d}"
            )
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class ShootingOptions:
    r_max: float = 30.0
    h: float = 1e-3
    # relative width of the final bisection bracket on q(0); 0 means "to machine precision"
    bisection_tol: float = 0.0
    max_iter: int = 200
    bracket: tuple[float, float] | None = None
    # relative gap between the two bracketing shots below which the table is trusted
    trust_tol: float = 1e-10
    min_trust_radius: float = 4.0
    # the table is used up to r_max - far_field_margin, the analytic tail beyond
    far_field_margin: float = 5.0


def sphere_measure(n: int) -> float:
    """Surface measure of the unit sphere S^n in R^{n+1} (|S^0| = 2)."""
    if n < 0:
        raise ValueError("sphere dimension must be >= 0")
    return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)


def closed_form_1d(x, p):
    """Explicit one-dimensional ground state ((p+1)/2)^{1/(p-1)} sech^{2/(p-1)}((p-1)x/2)."""
    x = np.asarray(x, dtype=float)
    amp = ((p + 1) / 2) ** (1 / (p - 1))
    return amp / np.cosh((p - 1) * x / 2) ** (2 / (p - 1))


# RK4 loses accuracy when the step is comparable to r (the 1/r coefficient);
# near the origin each grid interval is split so that sub-steps stay below r/_FINE_RATIO.
_FINE_RATIO = 256


@numba.njit(cache=True)
def _accel(r, q, v, dm1, p):
    return -dm1 / r * v + q - q * abs(q) ** (p - 1.0)


@numba.njit(cache=True)
def _rk4(r, q, v, g, dm1, p):
    k1q = v
    k1v = _accel(r, q, v, dm1, p)
    k2q = v + 0.5 * g * k1v
    k2v = _accel(r + 0.5 * g, q + 0.5 * g * k1q, v + 0.5 * g * k1v, dm1, p)
    k3q = v + 0.5 * g * k2v
    k3v = _accel(r + 0.5 * g, q + 0.5 * g * k2q, v + 0.5 * g * k2v, dm1, p)
    k4q = v + g * k3v
    k4v = _accel(r + g, q + g * k3q, v + g * k3v, dm1, p)
    return (
        q + g * (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0,
        v + g * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0,
    )


@numba.njit(cache=True)
def _shoot(q0, d, p, h, n, qs, vs):
    """Integrate from r=0 with q(0)=q0.

    Returns (code, last_index): code +1 when q crosses zero (q0 too large),
    -1 when q' turns positive or q never decays (q0 too small), 0 when the grid
    end is reached while still decreasing and positive.
    """
    dm1 = d - 1.0
    # regular series q0 + c2 r^2 + c4 r^4 + c6 r^6 for the first node
    f1 = 1.0 - p * q0 ** (p - 1.0)
    f2 = -p * (p - 1.0) * q0 ** (p - 2.0)
    c2 = (q0 - q0 ** p) / (2.0 * d)
    c4 = c2 * f1 / (4.0 * (d + 2.0))
    c6 = (f1 * c4 + 0.5 * f2 * c2 * c2) / (6.0 * (d + 4.0))
    qs[0] = q0
    vs[0] = 0.0
    r2 = h * h
    qs[1] = q0 + r2 * (c2 + r2 * (c4 + r2 * c6))
    vs[1] = h * (2.0 * c2 + r2 * (4.0 * c4 + 6.0 * c6 * r2))
    if vs[1] > 0.0:
        return -1, 1
    for i in range(1, n):
        q = qs[i]
        v = vs[i]
        m = (_FINE_RATIO + i - 1) // i
        g = h / m
        for j in range(m):
            q, v = _rk4(i * h + j * g, q, v, g, dm1, p)
        qs[i + 1] = q
        vs[i + 1] = v
        if q < 0.0:
            return 1, i + 1
        if v > 0.0:
            return -1, i + 1
    return 0, n


@numba.njit(cache=True)
def _integrate_inward(q_end, v_end, d, p, h, n, m, qs, vs):
    """RK4 from grid index n down to index m (r_i = i h); the decaying mode is stable this way."""
    dm1 = d - 1.0
    qs[n] = q_end
    vs[n] = v_end
    for i in range(n, m, -1):
        qs[i - 1], vs[i - 1] = _rk4(i * h, qs[i], vs[i], -h, dm1, p)


def _classify(code):
    # reaching the end without turning counts as "decays too slowly": q(0) too small
    return 1 if code == 1 else -1


def _far_field(A, nu, r):
    """A r^{-nu} K_nu(r) and its r-derivative -A r^{-nu} K_{nu+1}(r)."""
    r = np.asarray(r, dtype=float)
    with np.errstate(under="ignore"):
        scale = A * r ** (-nu) * np.exp(-r)
        return scale * special.kve(nu, r), -scale * special.kve(nu + 1, r)


@dataclass(frozen=True, eq=False)
class RadialProfile:
    params: ModelParams
    grid: np.ndarray
    q_values: np.ndarray
    dq_values: np.ndarray
    c_q: float
    r_match: float
    bessel_amplitude: float
    r_trust: float
    q0_bracket: tuple[float, float]
    tail_constant: float
    options: ShootingOptions = field(default_factory=ShootingOptions)

    def __post_init__(self):
        for name in ("grid", "q_values", "dq_values"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        d, p = self.params.d, self.params.p
        n = int(np.searchsorted(self.grid, self.r_match, side="right"))
        r, q, dq = self.grid[:n], self.q_values[:n], self.dq_values[:n]
        ddq = np.empty_like(q)
        dddq = np.empty_like(q)
        ri = r[1:]
        ddq[1:] = -(d - 1) / ri * dq[1:] + q[1:] - q[1:] ** p
        ddq[0] = (q[0] - q[0] ** p) / d
        dddq[1:] = (d - 1) * (dq[1:] / ri - ddq[1:]) / ri + dq[1:] * (1 - p * q[1:] ** (p - 1))
        dddq[0] = 0.0
        object.__setattr__(self, "_q_spline", quintic_hermite(r, q, dq, ddq))
        object.__setattr__(self, "_dq_spline", quintic_hermite(r, dq, ddq, dddq))

    @property
    def nu(self) -> float:
        return (self.params.d - 2) / 2

    @property
    def q0(self) -> float:
        return float(self.q_values[0])

    def __call__(self, r):
        return eval_profile(self, r)

    def second_derivative(self, r):
        """q'' of the interpolant (table region) or of the far-field law."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inner = r <= self.r_match
        out[inner] = self._dq_spline(r[inner], 1)
        ro = r[~inner]
        q, dq = _far_field(self.bessel_amplitude, self.nu, ro)
        out[~inner] = q - (self.params.d - 1) / ro * dq
        return out


def eval_profile(profile: RadialProfile, r):
    """Return (q(r), q'(r)); accepts scalars or arrays, r >= 0."""
    r_arr = np.asarray(r, dtype=float)
    scalar = r_arr.ndim == 0
    r_arr = np.atleast_1d(r_arr)
    if np.any(r_arr < 0):
        raise ValueError("radius must be non-negative")
    q = np.empty_like(r_arr)
    dq = np.empty_like(r_arr)
    inner = r_arr <= profile.r_match
    if inner.any():
        ri = r_arr[inner]
        q[inner] = profile._q_spline(ri)
        dq[inner] = profile._dq_spline(ri)
    if (~inner).any():
        q[~inner], dq[~inner] = _far_field(profile.bessel_amplitude, profile.nu, r_arr[~inner])
    if scalar:
        return float(q[0]), float(dq[0])
    return q.reshape(np.shape(r)), dq.reshape(np.shape(r))


def _bisect_q0(params, opts, n):
    qs = np.empty(n + 1)
    vs = np.empty(n + 1)
    d, p, h = float(params.d), params.p, opts.h

    def shoot(q0):
        code, _ = _shoot(q0, d, p, h, n, qs, vs)
        return _classify(code)

    if opts.bracket is not None:
        lo, hi = map(float, opts.bracket)
        if not (shoot(lo) == -1 and shoot(hi) == 1):
            raise NonBracketedShoot(f"bracket {opts.bracket} does not enclose the ground state")
    else:
        lo, hi = 1.0, 2.0
        for _ in range(60):
            if shoot(hi) == 1:
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise NonBracketedShoot("no overshooting q(0) found below 2^61")
    for _ in range(opts.max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or (hi - lo) <= opts.bisection_tol * hi:
            break
        if shoot(mid) == 1:
            hi = mid
        else:
            lo = mid
    return lo, hi


def solve_profile(params: ModelParams, opts: ShootingOptions | None = None) -> RadialProfile:
    opts = opts or ShootingOptions()
    n = int(round(opts.r_max / opts.h))
    grid = np.arange(n + 1) * opts.h
    lo, hi = _bisect_q0(params, opts, n)

    d, p = float(params.d), params.p
    q_lo, v_lo = np.empty(n + 1), np.empty(n + 1)
    q_hi, v_hi = np.empty(n + 1), np.empty(n + 1)
    _, end_lo = _shoot(lo, d, p, opts.h, n, q_lo, v_lo)
    _, end_hi = _shoot(hi, d, p, opts.h, n, q_hi, v_hi)
    end = min(end_lo, end_hi)
    q_mid = 0.5 * (q_lo[: end + 1] + q_hi[: end + 1])
    v_mid = 0.5 * (v_lo[: end + 1] + v_hi[: end + 1])
    gap = np.abs(q_hi[: end + 1] - q_lo[: end + 1]) > opts.trust_tol * np.abs(q_mid)
    bad = np.flatnonzero(gap | (v_mid >= 0)) if end > 1 else np.array([0])
    bad = bad[bad > 0]
    i_trust = (int(bad[0]) if bad.size else end) - 1
    r_trust = float(grid[i_trust])
    if r_trust < opts.min_trust_radius:
        raise BlowUp(
            f"shooting solution trusted only up to r={r_trust:.3g}; refine h or bisection tolerance"
        )

    # Outer part: integrate the decaying branch inward from r_max and tune its
    # amplitude so that it meets the shooting solution at r_trust.
    nu = (params.d - 2) / 2
    q_in, v_in = np.empty(n + 1), np.empty(n + 1)
    unit_q, _ = _far_field(1.0, nu, r_trust)
    A = float(q_mid[i_trust] / unit_q)
    for _ in range(50):
        qe, ve = _far_field(A, nu, grid[n])
        _integrate_inward(float(qe), float(ve), d, p, opts.h, n, i_trust, q_in, v_in)
        A_new = A * q_mid[i_trust] / q_in[i_trust]
        done = abs(A_new - A) <= 4 * np.finfo(float).eps * abs(A)
        A = A_new
        if done:
            break
    qe, ve = _far_field(A, nu, grid[n])
    _integrate_inward(float(qe), float(ve), d, p, opts.h, n, i_trust, q_in, v_in)
    c_q = A * math.sqrt(math.pi / 2)

    q_values = np.empty(n + 1)
    dq_values = np.empty(n + 1)
    q_values[:i_trust] = q_mid[:i_trust]
    dq_values[:i_trust] = v_mid[:i_trust]
    dq_values[0] = 0.0
    q_values[i_trust:] = q_in[i_trust:]
    dq_values[i_trust:] = v_in[i_trust:]

    r_match = opts.r_max - opts.far_field_margin
    if r_match <= r_trust:
        r_match = r_trust
    i_match = int(round(r_match / opts.h))
    r_match = float(grid[i_match])
    q_values[i_match + 1 :], dq_values[i_match + 1 :] = _far_field(A, nu, grid[i_match + 1 :])

    if not (np.all(q_values > 0) and np.all(np.diff(q_values) < 0)):
        raise BlowUp("tabulated profile is not positive and strictly decreasing")
    if q_values[-1] >= 1e-12 * q_values[0]:
        raise BlowUp(f"q(r_max) = {q_values[-1]:.3g} not below 1e-12 q(0); increase r_max")

    tail = grid >= r_match
    rt = grid[tail]
    lead = c_q * rt ** (-(params.d - 1) / 2)
    tail_C = float(np.max(np.abs(q_values[tail] * np.exp(rt) - lead) * rt ** ((params.d + 1) / 2)))

    return RadialProfile(
        params=params,
        grid=grid,
        q_values=q_values,
        dq_values=dq_values,
        c_q=c_q,
        r_match=r_match,
        bessel_amplitude=A,
        r_trust=r_trust,
        q0_bracket=(lo, hi),
        tail_constant=tail_C,
        options=opts,
    )


@dataclass(frozen=True)
class ProfileConstants:
    c_q: float
    grad_component_norm_sq: float
    sphere_measures: dict


def profile_constants(profile: RadialProfile) -> ProfileConstants:
    d = profile.params.d
    n = int(np.searchsorted(profile.grid, profile.r_match, side="right"))
    r = profile.grid[:n]
    dq = profile.dq_values[:n]
    inner = integrate.simpson(dq**2 * r ** (d - 1), x=r)
    A, nu = profile.bessel_amplitude, profile.nu

    def tail_integrand(x):
        return (A * x ** (-nu) * special.kve(nu + 1, x)) ** 2 * np.exp(-2 * x) * x ** (d - 1)

    tail, _ = integrate.quad(tail_integrand, profile.r_match, np.inf, epsabs=0, epsrel=1e-10, limit=200)
    s_dm1 = sphere_measure(d - 1)
    measures = {"S^{d-1}": s_dm1}
    if d >= 2:
        measures["S^{d-2}"] = sphere_measure(d - 2)
    return ProfileConstants(
        c_q=profile.c_q,
        grad_component_norm_sq=s_dm1 / d * (inner + tail),
        sphere_measures=measures,
    )


def profile_header(params: ModelParams, opts: ShootingOptions | None = None) -> dict:
    opts = opts or ShootingOptions()
    return {
        "d": params.d,
        "p": params.p,
        "h": opts.h,
        "r_max": opts.r_max,
        "far_field_margin": opts.far_field_margin,
        "bisection_tol": opts.bisection_tol,
        "trust_tol": opts.trust_tol,
        "bracket": list(opts.bracket) if opts.bracket else None,
    }


_SCALARS = ("c_q", "r_match", "bessel_amplitude", "r_trust", "lo", "hi", "tail_constant")


def cached_profile(
    params: ModelParams, opts: ShootingOptions | None = None, use_cache: bool = True
) -> RadialProfile:
    """solve_profile with a disk cache keyed on the exact solver inputs."""
    opts = opts or ShootingOptions()
    header = profile_header(params, opts)
    if use_cache:
        hit = cache.load("profile", header)
        if hit is not None:
            sc = dict(zip(_SCALARS, hit["scalars"].tolist()))
            return RadialProfile(
                params=params,
                grid=hit["grid"],
                q_values=hit["q_values"],
                dq_values=hit["dq_values"],
                c_q=sc["c_q"],
                r_match=sc["r_match"],
                bessel_amplitude=sc["bessel_amplitude"],
                r_trust=sc["r_trust"],
                q0_bracket=(sc["lo"], sc["hi"]),
                tail_constant=sc["tail_constant"],
                options=opts,
            )
    prof = solve_profile(params, opts)
    if use_cache:
        scalars = [prof.c_q, prof.r_match, prof.bessel_amplitude, prof.r_trust, *prof.q0_bracket, prof.tail_constant]
        cache.save(
            "profile",
            header,
            {"grid": prof.grid, "q_values": prof.q_values, "dq_values": prof.dq_values, "scalars": np.array(scalars)},
        )
    return prof
