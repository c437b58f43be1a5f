"""Pair interaction g(r), force F(r) = g / (2 alpha |d_1 Q|^2) and the reference clock.

``g(r) = -int d_1(Q^p)(x) Q(x - r e_1) dx`` is reduced to a two-dimensional
integral over the radius s = |x| and the distance rho = |x - r e_1|:

    g(r) = -|S^{d-2}| int_0^oo p q^{p-1} q'(s) s^{d-1}
                       int_0^pi cos(th) sin^{d-2}(th) q(rho(th)) dth ds.

The angular part is taken in u = cos(th) with a Gauss-Jacobi rule for the
weight (1 - u^2)^{(d-3)/2}; the integrand q(sqrt(s^2 + r^2 - 2 s r u)) is
smooth in u because q is even.  The radial part uses composite
Gauss-Legendre panels with a break at s = r.

For large r, ``g(r) ~ c_g r^{-(d-1)/2} e^{-r}`` with
``c_g = c_q * int Q^p(x) e^{-x_1} dx``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import cache
from .errors import QuadratureNonConverged
from .ground_state import (
    ProfileConstants,
    RadialProfile,
    closed_form_1d,
    eval_profile,
    profile_constants,
    profile_header,
    sphere_measure,
)
from .numerics import jacobi_rule, legendre_rule, panel_breaks, panel_rule, quintic_hermite

__all__ = [
    "KernelOptions",
    "InteractionKernel",
    "ReferenceClock",
    "interaction_g",
    "tilted_mass",
    "asymptotic_constant_cg",
    "build_kernel",
    "cached_kernel",
    "force",
    "reference_clock",
    "fit_c_star",
]


@dataclass(frozen=True)
class KernelOptions:
    r_switch: float = 20.0
    r_min: float = 1.0
    dr: float = 0.05
    overlap: float = 2.0
    rtol: float = 1e-9
    atol: float = 1e-30
    panel_width: float = 1.0
    radial_order: int = 16
    angular_order: int = 32
    max_refine: int = 3


def _radial_cutoff(profile: RadialProfile) -> float:
    # q^{p-1} |q'| decays like e^{-p s}; relative weight e^{-(p-1) s} below ~1e-14
    p = profile.params.p
    return float(min(profile.grid[-1], 34.0 / (p - 1) + 2.0))


def _g_reduced(profile: RadialProfile, r: float, n_rad: int, n_ang: int, width: float) -> float:
    d, p = profile.params.d, profile.params.p
    s_cut = max(_radial_cutoff(profile), r + 1.0) if d == 1 else _radial_cutoff(profile)
    if d == 1:
        breaks = panel_breaks(-s_cut, s_cut, width, extra=(0.0, r))
        x, w = panel_rule(breaks, n_rad)
        qx, dqx = eval_profile(profile, np.abs(x))
        dqp = p * qx ** (p - 1) * dqx * np.sign(x)
        qs, _ = eval_profile(profile, np.abs(x - r))
        return float(-np.sum(w * dqp * qs))

    breaks = panel_breaks(0.0, s_cut, width, extra=(r,))
    s, ws = panel_rule(breaks, n_rad)
    u, wu = jacobi_rule(n_ang, (d - 3) / 2)
    # rho^2 = (s - r)^2 + 2 s r (1 - u), written to avoid cancellation near s = r, u = 1
    rho = np.sqrt((s - r)[:, None] ** 2 + (2.0 * s * r)[:, None] * (1.0 - u)[None, :])
    ang = eval_profile(profile, rho)[0] @ (u * wu)
    qs, dqs = eval_profile(profile, s)
    radial = p * qs ** (p - 1) * dqs * s ** (d - 1)
    return float(-sphere_measure(d - 2) * np.sum(ws * radial * ang))


def interaction_g(profile: RadialProfile, r, opts: KernelOptions | None = None):
    """Exact-quadrature g(r) with order doubling until successive values agree to rtol."""
    opts = opts or KernelOptions()
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r_arr <= 0):
        raise ValueError("r must be positive")
    out = np.empty_like(r_arr)
    for i, ri in enumerate(r_arr.flat):
        n_rad, n_ang = opts.radial_order, opts.angular_order
        prev = _g_reduced(profile, ri, n_rad, n_ang, opts.panel_width)
        for _ in range(opts.max_refine):
            n_rad, n_ang = 2 * n_rad, 2 * n_ang
            cur = _g_reduced(profile, ri, n_rad, n_ang, opts.panel_width)
            if abs(cur - prev) <= opts.rtol * abs(cur) + opts.atol:
                break
            prev = cur
        else:
            raise QuadratureNonConverged(
                f"g({ri:.6g}) did not settle: {prev!r} vs {cur!r} at orders {n_rad}/{n_ang}"
            )
        out.flat[i] = cur
    return float(out[0]) if np.ndim(r) == 0 else out.reshape(np.shape(r))


def _tilted_bessel(profile: RadialProfile, rtol: float) -> float:
    # (2 pi)^{d/2} int s^{d/2} q^p I_nu(s) ds, using the closed-form angular integral
    d, p = profile.params.d, profile.params.p
    nu = (d - 2) / 2

    def f(s):
        q, _ = eval_profile(profile, s)
        return s ** (d / 2) * q**p * special.ive(nu, s) * math.exp(s)

    pts = [float(v) for v in np.arange(1.0, profile.r_match, 1.0)]
    inner, _ = integrate.quad(f, 0, profile.r_match, points=pts, epsabs=0, epsrel=rtol, limit=400)
    A = profile.bessel_amplitude

    def f_tail(s):
        qe = A * s ** (-nu) * special.kve(nu, s)  # q e^{s}
        return s ** (d / 2) * qe**p * special.ive(nu, s) * math.exp(-(p - 1) * s)

    tail, _ = integrate.quad(f_tail, profile.r_match, np.inf, epsabs=0, epsrel=rtol, limit=200)
    return (2 * math.pi) ** (d / 2) * (inner + tail)


def _tilted_direct(profile: RadialProfile, n_rad: int, n_ang: int) -> float:
    d, p = profile.params.d, profile.params.p
    cut = _radial_cutoff(profile) + 4.0
    if d == 1:
        x, w = panel_rule(panel_breaks(-cut, cut, 1.0, extra=(0.0,)), n_rad)
        q, _ = eval_profile(profile, np.abs(x))
        return float(np.sum(w * q**p * np.exp(-x)))
    s, ws = panel_rule(panel_breaks(0.0, cut, 1.0), n_rad)
    u, wu = jacobi_rule(n_ang, (d - 3) / 2)
    ang = np.exp(-np.outer(s, u)) @ wu
    q, _ = eval_profile(profile, s)
    return float(sphere_measure(d - 2) * np.sum(ws * s ** (d - 1) * q**p * ang))


def tilted_mass(profile: RadialProfile, rtol: float = 1e-9, method: str = "bessel") -> float:
    """int Q^p(x) e^{-x_1} dx by the Bessel reduction or by a direct double rule."""
    if method == "bessel":
        return _tilted_bessel(profile, rtol)
    if method == "direct":
        prev = _tilted_direct(profile, 16, 16)
        for k in range(1, 4):
            cur = _tilted_direct(profile, 16 << k, 16 << k)
            if abs(cur - prev) <= rtol * abs(cur):
                return cur
            prev = cur
        raise QuadratureNonConverged("direct tilted-mass rule did not settle")
    raise ValueError(f"unknown method {method!r}")


def asymptotic_constant_cg(profile: RadialProfile, rtol: float = 1e-9) -> float:
    """Amplitude of g(r) ~ c_g r^{-(d-1)/2} e^{-r}; equals c_q times the tilted mass."""
    return profile.c_q * tilted_mass(profile, rtol)


@dataclass(frozen=True, eq=False)
class InteractionKernel:
    profile: RadialProfile
    constants: ProfileConstants
    alpha: float
    c_g: float
    tilted_mass: float
    r_switch: float
    r_table: np.ndarray
    g_table: np.ndarray
    options: KernelOptions = field(default_factory=KernelOptions)

    def __post_init__(self):
        for name in ("r_table", "g_table"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.g_table <= 0):
            raise QuadratureNonConverged("non-positive g value in table")
        d = self.profile.params.d
        object.__setattr__(self, "_log_g", CubicSpline(self.r_table, np.log(self.g_table)))
        object.__setattr__(self, "_half_dm1", (d - 1) / 2)
        # tail law times (1 + kappa/r + lam/r^2), matched in value and slope at r_switch
        R = self.r_switch
        E = float(np.exp(self._log_g(R)) / self.g_asymptotic(R))
        dh = float(self._log_g(R, 1)) + (d - 1) / (2 * R) + 1.0
        lam = -(R**3) * dh * E - R**2 * (E - 1.0)
        object.__setattr__(self, "kappa", R * (E - 1.0) - lam / R)
        object.__setattr__(self, "lam", lam)
        log_pref = -math.log(2 * self.alpha * self.constants.grad_component_norm_sq)
        object.__setattr__(self, "log_prefactor", log_pref)
        object.__setattr__(self, "log_c_g", math.log(self.c_g))

    @property
    def d(self) -> int:
        return self.profile.params.d

    @property
    def c_F(self) -> float:
        """Amplitude of F(r) ~ c_F r^{-(d-1)/2} e^{-r}."""
        return self.c_g * math.exp(self.log_prefactor)

    def g_asymptotic(self, r):
        r = np.asarray(r, dtype=float)
        return self.c_g * r ** (-(self.d - 1) / 2) * np.exp(-r)

    def g_exact(self, r):
        """Quadrature values: spline through the table inside it, fresh quadrature outside."""
        r = np.asarray(r, dtype=float)
        inside = (r >= self.r_table[0]) & (r <= self.r_table[-1])
        if np.all(inside):
            return np.exp(self._log_g(r))
        out = np.empty(r.shape)
        out[inside] = np.exp(self._log_g(r[inside]))
        out[~inside] = interaction_g(self.profile, r[~inside], self.options)
        return out

    def log_g(self, r):
        """log g on r >= r_min: table below r_switch, corrected tail law above."""
        r = np.asarray(r, dtype=float)
        if np.any(r < self.options.r_min):
            raise ValueError(f"force evaluated below r_min={self.options.r_min}")
        far = self.log_c_g - self._half_dm1 * np.log(r) - r + np.log1p((self.kappa + self.lam / r) / r)
        near = r <= self.r_switch
        if not np.any(near):
            return far
        return np.where(near, self._log_g(np.minimum(r, self.r_switch)), far)

    def dlog_g(self, r):
        r = np.asarray(r, dtype=float)
        corr = 1.0 + (self.kappa + self.lam / r) / r
        far = -self._half_dm1 / r - 1.0 - (self.kappa + 2.0 * self.lam / r) / (r * r * corr)
        near = r <= self.r_switch
        return np.where(near, self._log_g(np.minimum(r, self.r_switch), 1), far)

    def log_force(self, r):
        return self.log_g(r) + self.log_prefactor

    def force(self, r):
        return np.exp(self.log_force(r))


def force(kernel: InteractionKernel, r):
    """F(r) = g(r) / (2 alpha |d_1 Q|^2) for r >= 1."""
    out = kernel.force(r)
    return float(out) if np.ndim(r) == 0 else out


def kernel_header(profile: RadialProfile, alpha: float, opts: KernelOptions) -> dict:
    return {
        "profile": profile_header(profile.params, profile.options),
        "alpha": alpha,
        "kernel": {k: getattr(opts, k) for k in opts.__dataclass_fields__},
    }


def build_kernel(profile: RadialProfile, alpha: float | None = None, opts: KernelOptions | None = None) -> InteractionKernel:
    opts = opts or KernelOptions()
    alpha = profile.params.alpha if alpha is None else float(alpha)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = int(round((opts.r_switch + opts.overlap - opts.r_min) / opts.dr))
    r_tab = opts.r_min + opts.dr * np.arange(n + 1)
    g_tab = interaction_g(profile, r_tab, opts)
    t_mass = tilted_mass(profile, opts.rtol)
    return InteractionKernel(
        profile=profile,
        constants=profile_constants(profile),
        alpha=alpha,
        c_g=profile.c_q * t_mass,
        tilted_mass=t_mass,
        r_switch=opts.r_switch,
        r_table=r_tab,
        g_table=g_tab,
        options=opts,
    )


def cached_kernel(
    profile: RadialProfile, alpha: float | None = None, opts: KernelOptions | None = None, use_cache: bool = True
) -> InteractionKernel:
    opts = opts or KernelOptions()
    alpha = profile.params.alpha if alpha is None else float(alpha)
    header = kernel_header(profile, alpha, opts)
    if use_cache:
        hit = cache.load("kernel", header)
        if hit is not None:
            t_mass = float(hit["tilted_mass"])
            return InteractionKernel(
                profile=profile,
                constants=profile_constants(profile),
                alpha=alpha,
                c_g=profile.c_q * t_mass,
                tilted_mass=t_mass,
                r_switch=opts.r_switch,
                r_table=hit["r_table"],
                g_table=hit["g_table"],
                options=opts,
            )
    kern = build_kernel(profile, alpha, opts)
    if use_cache:
        cache.save(
            "kernel",
            header,
            {"r_table": kern.r_table, "g_table": kern.g_table, "tilted_mass": np.array(kern.tilted_mass)},
        )
    return kern


def g_closed_form_1d(r: float, p: float, rtol: float = 1e-12) -> float:
    """d = 1 check value: -int (Q^p)'(x) Q(x - r) dx with the explicit profile."""
    a = 2 / (p - 1)
    k = (p - 1) / 2

    def dqp(x):
        return -p * a * k * np.tanh(k * x) * closed_form_1d(x, p) ** p

    def f(x):
        return -dqp(x) * closed_form_1d(x - r, p)

    pts = sorted({0.0, float(r)})
    lim = 40.0 + r
    total = 0.0
    edges = [-lim, *pts, lim]
    for a_, b_ in zip(edges[:-1], edges[1:]):
        total += integrate.quad(f, a_, b_, epsabs=0, epsrel=rtol, limit=200)[0]
    return total


# ---------------------------------------------------------------------------
# reference clock


@dataclass(frozen=True, eq=False)
class ReferenceClock:
    """Solution of dL/dt = F(L), L(0) = 1, tabulated in s = log t."""

    kernel: InteractionKernel
    s_nodes: np.ndarray
    L_nodes: np.ndarray
    c_star: float
    c_star_exact: float
    fit_window: tuple[float, float]

    def __post_init__(self):
        s, L = self.s_nodes, self.L_nodes
        dL = np.exp(s + self.kernel.log_force(L))
        ddL = dL * (1.0 + dL * self.kernel.dlog_g(L))
        object.__setattr__(self, "_spline", quintic_hermite(s, L, dL, ddL))

    @property
    def s_max(self) -> float:
        return float(self.s_nodes[-1])

    def L_of_s(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s > self.s_max):
            raise ValueError(f"clock tabulated only up to s={self.s_max:.6g}")
        low = s < self.s_nodes[0]
        if not np.any(low):
            return self._spline(s)
        out = np.empty(s.shape)
        out[~low] = self._spline(s[~low])
        out[low] = [self._invert_small(float(v)) for v in np.atleast_1d(s[low])]
        return out

    def dL_ds(self, s):
        return self._spline(np.asarray(s, dtype=float), 1)

    def L_of_t(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("t must be >= 0")
        out = np.ones(t.shape)
        pos = t > 0
        out[pos] = self.L_of_s(np.log(t[pos]))
        return out if out.ndim else float(out)

    def _invert_small(self, s: float) -> float:
        target = math.exp(s)
        kern = self.kernel

        def t_of(L):
            return integrate.quad(lambda x: math.exp(-float(kern.log_force(x))), 1.0, L, epsabs=0, epsrel=1e-12)[0]

        return float(brentq(lambda L: t_of(L) - target, 1.0, float(self.L_nodes[0]), xtol=1e-15, rtol=1e-15))

    def log_t_of_L(self, L):
        """log t at which the clock reaches L (monotone inverse)."""
        return np.interp(L, self.L_nodes, self.s_nodes)


def _log_segment_integrals(kernel: InteractionKernel, edges: np.ndarray, n: int) -> np.ndarray:
    """log int_{a}^{b} dx / F(x) for consecutive edges, evaluated stably."""
    x, w = legendre_rule(n)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    phi = -kernel.log_force(nodes.ravel()).reshape(nodes.shape)
    top = phi.max(axis=1)
    return top + np.log(np.sum(w[None, :] * np.exp(phi - top[:, None]), axis=1) * half)


def fit_c_star(s, L, d: int, with_inverse: bool = True):
    """Regress L - s + ((d-1)/2) log s on [1, log s / s (, 1/s)]; return (intercept, rms residual)."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(L, dtype=float) - s + 0.5 * (d - 1) * np.log(s)
    cols = [np.ones_like(s), np.log(s) / s]
    if with_inverse:
        cols.append(1.0 / s)
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def reference_clock(
    kernel: InteractionKernel,
    t_max: float | None = None,
    *,
    s_max: float | None = None,
    dL_near: float = 0.01,
    dL_far: float = 0.25,
    order: int = 12,
) -> ReferenceClock:
    """Tabulate L(t) by inverting t(L) = int_1^L dx / F(x).

    Either ``t_max`` or ``s_max = log t_max`` may be given; the latter allows
    horizons far beyond floating-point range of t.
    """
    if s_max is None:
        if t_max is None:
            raise ValueError("give t_max or s_max")
        if t_max < 10:
            raise ValueError("t_max must be >= 10")
        s_max = math.log(t_max)
    s_max = float(s_max)
    d = kernel.d
    r_sw = kernel.r_switch
    near = np.arange(1.0, r_sw, dL_near)
    L_end = max(r_sw + 5.0, s_max + 0.5 * (d - 1) * math.log(max(s_max, 2.0)) + 10.0)
    far = np.arange(r_sw, L_end + dL_far, dL_far)
    edges = np.concatenate([near, far])
    logI = _log_segment_integrals(kernel, edges, order)
    log_t = np.logaddexp.accumulate(logI)
    while log_t[-1] < s_max + 1.0:
        more = edges[-1] + dL_far * np.arange(1, 401)
        logI2 = _log_segment_integrals(kernel, np.concatenate([[edges[-1]], more]), order)
        log_t = np.concatenate([log_t, np.logaddexp.accumulate(np.concatenate([[log_t[-1]], logI2]))[1:]])
        edges = np.concatenate([edges, more])
    L_nodes = edges[1:]
    keep = L_nodes <= L_end + 1e-12 if log_t[np.searchsorted(L_nodes, L_end) - 1] > s_max + 1.0 else slice(None)
    L_nodes, s_nodes = L_nodes[keep], log_t[keep]

    c_exact = math.log(kernel.c_F)
    hi = min(s_max, float(s_nodes[-1]))
    lo = max(math.e, hi / 2)
    sel = (s_nodes >= lo) & (s_nodes <= hi)
    if sel.sum() < 8:
        c_fit = c_exact
    else:
        c_fit, _ = fit_c_star(s_nodes[sel], L_nodes[sel], d)
    return ReferenceClock(
        kernel=kernel,
        s_nodes=s_nodes,
        L_nodes=L_nodes,
        c_star=c_fit,
        c_star_exact=c_exact,
        fit_window=(lo, hi),
    )
