"""Reduced center dynamics for K signed solitons.

Centers obey dz_k/dt = -sum_i sigma_i sigma_k F(|z_k - z_i|) (z_k - z_i)/|z_k - z_i|.
Integration runs in s = log t, where dz/ds = t dz/dt.  The product t F(r) is
formed as exp(s + log F(r)) so that horizons with t far outside floating-point
range are reachable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.integrate import RK45

from .errors import StepFailure, TooClose
from .kernel import InteractionKernel

__all__ = [
    "SolitonConfiguration",
    "PerturbationSpec",
    "SimulationConfig",
    "Trajectory",
    "rhs",
    "perturbed_rhs",
    "noise_vectors",
    "noise_at",
    "simulate",
    "equilateral_13",
    "perturbed_equilateral",
    "two_body",
    "GENERATORS",
]

# exponent guard: beyond this t F(r) would overflow long before a step could resolve it
_EXPONENT_LIMIT = 600.0
# a step-size underflow with a pair rate above e^14 per unit s is read as a collapse
_COLLAPSE_EXPONENT = 14.0


@dataclass(frozen=True, eq=False)
class SolitonConfiguration:
    centers: np.ndarray
    signs: np.ndarray
    d_min: float = 5.0

    def __post_init__(self):
        z = np.array(self.centers, dtype=float)
        sig = np.array(self.signs, dtype=int)
        if z.ndim != 2 or z.shape[0] != sig.shape[0]:
            raise ValueError("centers must be (K, d) with one sign per center")
        if not np.all(np.isin(sig, (-1, 1))):
            raise ValueError("signs must be +1 or -1")
        if z.shape[0] >= 2 and min_distance(z) < self.d_min:
            raise ValueError(f"initial separation {min_distance(z):.6g} below d_min={self.d_min}")
        z.setflags(write=False)
        sig.setflags(write=False)
        object.__setattr__(self, "centers", z)
        object.__setattr__(self, "signs", sig)

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def is_13(self) -> bool:
        """One +1 followed by three -1 (the convention used throughout)."""
        return self.K == 4 and self.signs[0] == 1 and np.all(self.signs[1:] == -1)


def min_distance(z: np.ndarray) -> float:
    diff = z[:, None, :] - z[None, :, :]
    r = np.sqrt(np.sum(diff**2, axis=-1))
    r[np.diag_indices(len(z))] = np.inf
    return float(r.min())


@dataclass(frozen=True)
class PerturbationSpec:
    """Bounded extra velocity |delta_k| <= amplitude * exp(-theta D) per center."""

    amplitude: float = 0.0
    theta: float = 1.5
    seed: int = 0
    # noise nodes sit every `spacing` units of s; values in between are linear blends
    spacing: float = 1.0

    @property
    def active(self) -> bool:
        return self.amplitude > 0


@dataclass(frozen=True)
class SimulationConfig:
    kernel: InteractionKernel
    s_max: float
    t0: float = 1.0
    rtol: float = 1e-9
    atol: float = 1e-12
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    output_stride: float = 0.1
    d_min: float = 5.0
    max_step: float = np.inf

    def __post_init__(self):
        if not 1e-12 <= self.rtol <= 1e-6:
            raise ValueError(f"rtol must lie in [1e-12, 1e-6], got {self.rtol}")
        if self.atol <= 0:
            raise ValueError("atol must be positive")
        if self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if not self.s_max > self.s0:
            raise ValueError("s_max must exceed log(t0)")
        if self.output_stride <= 0:
            raise ValueError("output_stride must be positive")
        pert = self.perturbation
        if pert.amplitude < 0:
            raise ValueError("perturbation amplitude must be >= 0")
        upper = min(self.kernel.profile.params.p - 1, 2.0)
        if pert.active and not 1 < pert.theta < upper:
            raise ValueError(f"theta must lie in (1, {upper:g}), got {pert.theta}")

    @property
    def s0(self) -> float:
        return math.log(self.t0)


@dataclass(eq=False)
class Trajectory:
    s: np.ndarray
    centers: np.ndarray
    signs: np.ndarray
    model: dict
    stats: dict
    collision: bool = False
    collision_s: float | None = None

    @property
    def n_frames(self) -> int:
        return len(self.s)

    @property
    def K(self) -> int:
        return self.centers.shape[1]

    @property
    def d(self) -> int:
        return self.centers.shape[2]

    @property
    def log_t(self) -> np.ndarray:
        return self.s

    def t(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.s)


class _PairSystem:
    """Pair bookkeeping for the s-form right-hand side."""

    def __init__(self, signs, kernel: InteractionKernel):
        K = len(signs)
        pairs = np.array(list(combinations(range(K), 2)), dtype=int).reshape(-1, 2)
        self.i, self.j = pairs[:, 0], pairs[:, 1]
        self.sigprod = (np.asarray(signs)[self.i] * np.asarray(signs)[self.j]).astype(float)
        inc = np.zeros((K, len(pairs)))
        inc[self.i, np.arange(len(pairs))] = 1.0
        inc[self.j, np.arange(len(pairs))] = -1.0
        self.incidence = inc
        self.kernel = kernel

    def velocity(self, s: float, z: np.ndarray):
        """dz/ds at log-time s, plus the largest exponent s + log F used."""
        diff = z[self.i] - z[self.j]
        r = np.sqrt(np.einsum("pd,pd->p", diff, diff))
        if r.min() < self.kernel.options.r_min:
            raise TooClose(f"pair distance {r.min():.6g} below kernel domain r >= {self.kernel.options.r_min}")
        expo = s + self.kernel.log_force(r)
        top = float(expo.max())
        # trial stages may probe far ahead; capping keeps them finite so the step is rejected
        f = (-self.sigprod * np.exp(np.minimum(expo, _EXPONENT_LIMIT)) / r)[:, None] * diff
        return self.incidence @ f, top


def rhs(config: SolitonConfiguration, kernel: InteractionKernel) -> np.ndarray:
    """dz_k/dt for every center (t-units)."""
    vel, top = _PairSystem(config.signs, kernel).velocity(0.0, config.centers)
    if top > _EXPONENT_LIMIT:
        raise OverflowError("force exponent out of range")
    return vel


def noise_vectors(seed: int, step: int, K: int, d: int) -> np.ndarray:
    """Uniform vectors in the closed unit ball, one per center, keyed by (seed, step, k)."""
    out = np.empty((K, d))
    for k in range(K):
        bitgen = np.random.Philox(key=np.array([seed, 0], dtype=np.uint64), counter=np.array([step % 2**64, k, 0, 0], dtype=np.uint64))
        gen = np.random.Generator(bitgen)
        v = gen.standard_normal(d)
        radius = gen.random() ** (1.0 / d)
        out[k] = radius * v / np.linalg.norm(v)
    return out


def noise_at(seed: int, s: float, K: int, d: int, spacing: float = 1.0) -> np.ndarray:
    """Continuous noise path: linear blend of the node draws around s (stays in the unit ball)."""
    x = s / spacing
    n = math.floor(x)
    w = x - n
    return (1 - w) * noise_vectors(seed, n, K, d) + w * noise_vectors(seed, n + 1, K, d)


def perturbed_rhs(
    config: SolitonConfiguration, kernel: InteractionKernel, pert: PerturbationSpec, s: float = 0.0
) -> np.ndarray:
    """rhs plus the seeded bounded perturbation at log-time s (t-units)."""
    vel = rhs(config, kernel)
    if not pert.active:
        return vel
    D = min_distance(config.centers)
    eta = noise_at(pert.seed, s, config.K, config.d, pert.spacing)
    return vel + pert.amplitude * math.exp(-pert.theta * D) * eta


def simulate(init: SolitonConfiguration, sim: SimulationConfig) -> Trajectory:
    kernel = sim.kernel
    K, d = init.K, init.d
    system = _PairSystem(init.signs, kernel)
    pert = sim.perturbation
    state = {"top": -np.inf, "pert_ratio": 0.0}
    node_cache: dict = {}

    def eta_at(s):
        x = s / pert.spacing
        n = math.floor(x)
        for m in (n, n + 1):
            if m not in node_cache:
                node_cache[m] = noise_vectors(pert.seed, m, K, d)
        for m in [m for m in node_cache if m < n - 1]:
            del node_cache[m]
        w = x - n
        return (1 - w) * node_cache[n] + w * node_cache[n + 1]

    def fun(s, y):
        z = y.reshape(K, d)
        vel, _ = system.velocity(s, z)
        if pert.active:
            eta = eta_at(s)
            D = min_distance(z)
            log_bound = math.log(pert.amplitude) - pert.theta * D
            ratio = float(np.sqrt(np.sum(eta**2, axis=1)).max())
            state["pert_ratio"] = max(state["pert_ratio"], ratio)
            # t * amplitude * e^{-theta D}, formed in log space
            vel = vel + math.exp(min(s + log_bound, _EXPONENT_LIMIT)) * eta
        return vel.ravel()

    s0 = sim.s0
    y0 = init.centers.ravel().copy()
    first = min(0.01, sim.max_step, sim.s_max - s0)
    solver = RK45(fun, s0, y0, sim.s_max, rtol=sim.rtol, atol=sim.atol, max_step=sim.max_step, first_step=first)
    n_out = int(math.floor((sim.s_max - s0) / sim.output_stride + 1e-9))
    grid = s0 + sim.output_stride * np.arange(n_out + 1)
    if grid[-1] < sim.s_max:
        grid = np.append(grid, sim.s_max)
    frames_s = [s0]
    frames_z = [y0.copy()]
    next_idx = 1
    collision = False
    collision_s = None
    h_min = np.inf
    n_steps = 0
    message = "completed"
    while solver.status == "running":
        s_prev = solver.t
        msg = solver.step()
        if solver.status == "failed":
            _, top = system.velocity(solver.t, solver.y.reshape(K, d))
            if top < _COLLAPSE_EXPONENT:
                raise StepFailure(f"integrator failed at s={solver.t:.6g}: {msg}")
            collision, collision_s = True, float(solver.t)
            message = "step-size underflow during collapse"
            if frames_s[-1] < solver.t:
                frames_s.append(float(solver.t))
                frames_z.append(solver.y.copy())
            break
        n_steps += 1
        h_min = min(h_min, solver.t - s_prev)
        _, top = system.velocity(solver.t, solver.y.reshape(K, d))
        state["top"] = max(state["top"], top)
        if top > _EXPONENT_LIMIT:
            collision, collision_s = True, float(solver.t)
            message = "force exponent overflow (collapse)"
            break
        dense = None
        while next_idx < len(grid) and grid[next_idx] <= solver.t:
            dense = dense or solver.dense_output()
            frames_s.append(float(grid[next_idx]))
            frames_z.append(solver.y.copy() if grid[next_idx] == solver.t else dense(grid[next_idx]))
            next_idx += 1
        if min_distance(solver.y.reshape(K, d)) < sim.d_min / 2:
            collision, collision_s = True, float(solver.t)
            message = "collision"
            if frames_s[-1] < solver.t:
                frames_s.append(float(solver.t))
                frames_z.append(solver.y.copy())
            break
    s_arr = np.array(frames_s)
    z_arr = np.array(frames_z).reshape(len(frames_s), K, d)
    params = kernel.profile.params
    stats = {
        "n_steps": n_steps,
        "nfev": solver.nfev,
        "min_step": float(h_min) if n_steps else 0.0,
        "max_exponent": float(state["top"]),
        "perturbation_max_ratio": state["pert_ratio"],
        "message": message,
        "rtol": sim.rtol,
        "atol": sim.atol,
    }
    model = {
        "d": params.d,
        "p": params.p,
        "alpha": kernel.alpha,
        "signs": [int(v) for v in init.signs],
        "perturbation": {"amplitude": pert.amplitude, "theta": pert.theta, "seed": pert.seed, "spacing": pert.spacing},
    }
    return Trajectory(s_arr, z_arr, np.array(init.signs), model, stats, collision, collision_s)


# ---------------------------------------------------------------------------
# initial-data generators

_TRIPLE = np.array([[1.0, 0.0], [-0.5, math.sqrt(3) / 2], [-0.5, -math.sqrt(3) / 2]])


def _embed(vecs2: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros((len(vecs2), d))
    out[:, :2] = vecs2
    return out


def equilateral_13(d: int, R0: float, offset=None, d_min: float = 5.0) -> SolitonConfiguration:
    """+1 soliton at the origin, three -1 solitons at distance R0 along an equilateral triple."""
    if d < 2:
        raise ValueError("an equilateral triple needs d >= 2")
    z = np.vstack([np.zeros((1, d)), R0 * _embed(_TRIPLE, d)])
    if offset is not None:
        z = z + np.asarray(offset, dtype=float)
    return SolitonConfiguration(z, [1, -1, -1, -1], d_min=d_min)


def perturbed_equilateral(d: int, R0: float, eps: float, seed: int, d_min: float = 5.0) -> SolitonConfiguration:
    """Equilateral start with every center displaced by at most eps*R0 (uniform in a ball)."""
    base = equilateral_13(d, R0, d_min=0.0).centers
    gen = np.random.default_rng(seed)
    v = gen.standard_normal(base.shape)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    radius = gen.random(len(base)) ** (1.0 / d)
    return SolitonConfiguration(base + eps * R0 * radius[:, None] * v, [1, -1, -1, -1], d_min=d_min)


def two_body(d: int, R0: float, same_sign: bool, d_min: float = 5.0) -> SolitonConfiguration:
    z = np.zeros((2, d))
    z[1, 0] = R0
    return SolitonConfiguration(z, [1, 1] if same_sign else [1, -1], d_min=d_min)


GENERATORS = {
    "equilateral": equilateral_13,
    "perturbed-equilateral": perturbed_equilateral,
    "two-body": two_body,
}
