"""Observables of a (1,3) configuration and the Gram-angle algebra.

Conventions: center 0 carries sign +1, centers 1..3 carry sign -1.  Pair
quantities are ordered (12, 13, 23) everywhere, including the angle triple
c = (c12, c13, c23).  All functions broadcast over leading frame axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateFrame, HypothesisUnmet, InequalityViolated

__all__ = [
    "C_HEART",
    "XI_MATRIX",
    "mid3",
    "gram_det",
    "gram_matrix",
    "GramPackage",
    "gram_package",
    "angle_ode_coefficients",
    "max_angle_lhs",
    "lyapunov_package",
    "FrameObservables",
    "frame_observables",
    "observables_from_frames",
    "OBSERVABLE_COLUMNS",
    "observable_columns",
    "gram_inequality_suite",
    "triangle_angle_bounds",
    "xi_map_condition_number",
]

C_HEART = math.log((4 + math.sqrt(3)) / 4)
PAIRS = ((0, 1), (0, 2), (1, 2))  # indices into (Z1, Z2, Z3) for 12, 13, 23
XI_MATRIX = np.array([[4.0, 4.0, 2.0], [4.0, 2.0, 4.0], [2.0, 4.0, 4.0]]) / 5.0
GRAM_SLACK = 1e-10


def mid3(a, b, c):
    """Second-smallest of three values (a + b + c - max - min)."""
    a, b, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c)))
    stack = np.stack([a, b, c])
    out = np.sort(stack, axis=0)[1]
    return float(out) if out.ndim == 0 else out


def _split(c):
    c = np.asarray(c, dtype=float)
    return c[..., 0], c[..., 1], c[..., 2]


def gram_det(c):
    """A = 1 + 2 c12 c13 c23 - c12^2 - c13^2 - c23^2."""
    c12, c13, c23 = _split(c)
    return 1 + 2 * c12 * c13 * c23 - c12**2 - c13**2 - c23**2


def gram_matrix(c) -> np.ndarray:
    """The matrix with 2 on the diagonal and the angles off it."""
    c12, c13, c23 = _split(c)
    two = np.full_like(c12, 2.0)
    return np.stack(
        [np.stack([two, c12, c13], -1), np.stack([c12, two, c23], -1), np.stack([c13, c23, two], -1)], -2
    )


@dataclass(frozen=True)
class GramPackage:
    Dcal: np.ndarray
    b: np.ndarray
    a_tilde: np.ndarray
    Ncal: np.ndarray


def gram_package(c) -> GramPackage:
    c12, c13, c23 = _split(c)
    Dcal = 2 * (4 + c12 * c13 * c23 - c12**2 - c13**2 - c23**2)
    b = np.stack(
        [
            (2 - c23) * (2 + c23 - c12 - c13),
            (2 - c13) * (2 + c13 - c12 - c23),
            (2 - c12) * (2 + c12 - c13 - c23),
        ],
        -1,
    ) / Dcal[..., None]
    Ncal = (
        8
        + 4 * c12 * c13 * c23
        - 3 * (c12**2 + c13**2 + c23**2)
        - (c12 * c13 + c12 * c23 + c13 * c23)
        + 2 * (c12 + c13 + c23)
    )
    return GramPackage(Dcal=Dcal, b=b, a_tilde=-np.log(b), Ncal=Ncal)


def angle_ode_coefficients(c) -> np.ndarray:
    """Leading factors of (dc12, dc13, dc23)/dt once F(L)/L is divided out."""
    c12, c13, c23 = _split(c)
    pk = gram_package(c)
    N, D = pk.Ncal, pk.Dcal
    return np.stack(
        [
            (1 - c12) * (N - c12**2 - c23 * c13 + 2 * c12) / D,
            (1 - c13) * (N - c13**2 - c12 * c23 + 2 * c13) / D,
            (1 - c23) * (N - c23**2 - c12 * c13 + 2 * c23) / D,
        ],
        -1,
    )


def max_angle_lhs(c):
    """N - max^2 + 2 max - mid * min over the angle triple."""
    srt = np.sort(np.asarray(c, dtype=float), axis=-1)
    lo, mi, hi = srt[..., 0], srt[..., 1], srt[..., 2]
    return gram_package(c).Ncal - hi**2 + 2 * hi - mi * lo


def lyapunov_package(a, c):
    """(zeta, Lyapunov value, xi) from radial offsets a = rho - L and angles c."""
    a = np.asarray(a, dtype=float)
    pk = gram_package(c)
    zeta = a - pk.a_tilde
    lyap = np.sum(pk.b * (np.exp(-zeta) + zeta - 1), axis=-1)
    d = np.asarray(c, dtype=float) + 0.5
    xi = a - d @ XI_MATRIX.T
    return zeta, lyap, xi


def xi_map_condition_number() -> float:
    """2-norm condition number of (a, d) -> (xi, d)."""
    block = np.block([[np.eye(3), -XI_MATRIX], [np.zeros((3, 3)), np.eye(3)]])
    return float(np.linalg.cond(block))


@dataclass(frozen=True, eq=False)
class FrameObservables:
    """Per-frame observables; every field carries a leading frame axis."""

    s: np.ndarray
    Z: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    rho_pair: np.ndarray
    u_pair: np.ndarray
    c: np.ndarray
    A: np.ndarray
    D: np.ndarray
    D_tilde: np.ndarray
    D_hat: np.ndarray
    D_mod: np.ndarray
    V_t: np.ndarray
    V_over_FD: np.ndarray
    b: np.ndarray
    Dcal: np.ndarray
    Ncal: np.ndarray
    d: np.ndarray
    cfrak: np.ndarray
    L: np.ndarray
    a: np.ndarray
    a_tilde: np.ndarray
    zeta: np.ndarray
    Lyap: np.ndarray
    xi: np.ndarray
    R: np.ndarray
    W: np.ndarray
    Wnorm: np.ndarray
    X: np.ndarray

    def frame(self, i: int) -> dict:
        return {f.name: getattr(self, f.name)[i] for f in fields(self)}


def observables_from_frames(s, centers, kernel, clock) -> FrameObservables:
    """Vectorised observables for frames of shape (n, 4, d) at log-times s."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    z = np.asarray(centers, dtype=float)
    if z.ndim == 2:
        z = z[None]
    if z.shape[1] != 4:
        raise ValueError("observables are defined for four centers")
    Z = z[:, 1:] - z[:, :1]
    rho = np.linalg.norm(Z, axis=-1)
    if np.any(rho == 0):
        raise DegenerateFrame("a like-signed center coincides with the +1 center")
    u = Z / rho[..., None]
    ii = np.array([p[0] for p in PAIRS])
    jj = np.array([p[1] for p in PAIRS])
    Zp = Z[:, jj] - Z[:, ii]
    rho_pair = np.linalg.norm(Zp, axis=-1)
    u_pair = Zp / np.where(rho_pair > 0, rho_pair, 1.0)[..., None]
    c = np.einsum("nkd,nkd->nk", u[:, ii], u[:, jj])
    A = gram_det(c)
    A = np.where((A < 0) & (A >= -GRAM_SLACK), 0.0, A)
    D_tilde = rho_pair.min(axis=1)
    D_hat = rho.min(axis=1)
    D = np.minimum(D_tilde, D_hat)
    D_mod = np.minimum(np.minimum(rho[:, 0], rho[:, 1]), rho[:, 2] + C_HEART)

    # V = sum_k F(rho_k) - sum_{j<k} F(rho_jk), held as t V and V / F(D)
    logF_op = kernel.log_force(rho)
    logF_like = kernel.log_force(rho_pair)
    logF_D = kernel.log_force(D)
    with np.errstate(over="ignore"):
        V_t = np.exp(s[:, None] + logF_op).sum(1) - np.exp(s[:, None] + logF_like).sum(1)
    V_over_FD = np.exp(logF_op - logF_D[:, None]).sum(1) - np.exp(logF_like - logF_D[:, None]).sum(1)

    pk = gram_package(c)
    dvec = c + 0.5
    L = clock.L_of_s(s)
    a = rho - L[:, None]
    zeta, lyap, xi = lyapunov_package(a, c)
    W = Z.sum(axis=1)
    Wnorm = np.linalg.norm(W, axis=-1)
    R = rho_pair.sum(axis=1)
    with np.errstate(divide="ignore"):
        X = np.where(Wnorm > 0, R / np.where(Wnorm > 0, Wnorm, 1.0), np.inf)
    return FrameObservables(
        s=s, Z=Z, rho=rho, u=u, rho_pair=rho_pair, u_pair=u_pair, c=c, A=A,
        D=D, D_tilde=D_tilde, D_hat=D_hat, D_mod=D_mod, V_t=V_t, V_over_FD=V_over_FD,
        b=pk.b, Dcal=pk.Dcal, Ncal=pk.Ncal, d=dvec, cfrak=np.abs(dvec).sum(1),
        L=L, a=a, a_tilde=pk.a_tilde, zeta=zeta, Lyap=lyap, xi=xi,
        R=R, W=W, Wnorm=Wnorm, X=X,
    )  # fmt: skip


def frame_observables(config, kernel, clock, t: float) -> FrameObservables:
    """Observables of a single (1,3) configuration at time t > 0."""
    if not config.is_13():
        raise ValueError("frame_observables expects signs (+1, -1, -1, -1)")
    return observables_from_frames([math.log(t)], config.centers[None], kernel, clock)


# CSV column block, in order: name -> (field, component or None)
OBSERVABLE_COLUMNS: dict = {}
for _k in range(3):
    OBSERVABLE_COLUMNS[f"rho{_k + 1}"] = ("rho", _k)
for _k, _nm in enumerate(("12", "13", "23")):
    OBSERVABLE_COLUMNS[f"rho{_nm}"] = ("rho_pair", _k)
for _k, _nm in enumerate(("12", "13", "23")):
    OBSERVABLE_COLUMNS[f"c{_nm}"] = ("c", _k)
for _nm in ("A", "D", "D_tilde", "D_hat", "D_mod", "V_t", "V_over_FD"):
    OBSERVABLE_COLUMNS[_nm] = (_nm, None)
for _k in range(3):
    OBSERVABLE_COLUMNS[f"b{_k + 1}"] = ("b", _k)
OBSERVABLE_COLUMNS["Dcal"] = ("Dcal", None)
OBSERVABLE_COLUMNS["Ncal"] = ("Ncal", None)
for _k, _nm in enumerate(("12", "13", "23")):
    OBSERVABLE_COLUMNS[f"d{_nm}"] = ("d", _k)
OBSERVABLE_COLUMNS["cfrak"] = ("cfrak", None)
OBSERVABLE_COLUMNS["L"] = ("L", None)
for _fld in ("a", "a_tilde", "zeta"):
    for _k in range(3):
        OBSERVABLE_COLUMNS[f"{_fld}{_k + 1}"] = (_fld, _k)
OBSERVABLE_COLUMNS["Lyap"] = ("Lyap", None)
for _k in range(3):
    OBSERVABLE_COLUMNS[f"xi{_k + 1}"] = ("xi", _k)
for _nm in ("R", "Wnorm", "X"):
    OBSERVABLE_COLUMNS[_nm] = (_nm, None)


def observable_columns(obs: FrameObservables) -> dict:
    out = {}
    for name, (fld, comp) in OBSERVABLE_COLUMNS.items():
        arr = getattr(obs, fld)
        out[name] = arr if comp is None else arr[:, comp]
    return out


# ---------------------------------------------------------------------------
# sampled inequality suite


def _random_unit(gen, n, d):
    v = gen.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _angle_triples(gen, n, d):
    u1, u2, u3 = (_random_unit(gen, n, d) for _ in range(3))
    c = np.stack([np.einsum("nd,nd->n", u1, u2), np.einsum("nd,nd->n", u1, u3), np.einsum("nd,nd->n", u2, u3)], -1)
    return c


def _margins(c) -> dict:
    pk = gram_package(c)
    dvec = c + 0.5
    cfrak = np.abs(dvec).sum(-1)
    mx = dvec.max(-1)
    c12, c13, c23 = _split(c)
    return {
        "A>=0": gram_det(c),
        "Dcal>=4": pk.Dcal - 4,
        "Dcal<=10": 10 - pk.Dcal,
        "b>=1/20": pk.b.min(-1) - 1 / 20,
        "b<=15/4": 15 / 4 - pk.b.max(-1),
        "max_angle_bound": max_angle_lhs(c) - (2 / 3) * mx,
        "cfrak/4<=max": mx - cfrak / 4,
        "max<=cfrak": cfrak - mx,
        "2+c_jk-c_ij-c_ik>=1/2": np.minimum(
            np.minimum(2 + c23 - c12 - c13, 2 + c13 - c12 - c23), 2 + c12 - c13 - c23
        )
        - 0.5,
    }


def gram_inequality_suite(
    samples: int,
    seed: int,
    d: int = 3,
    *,
    x_triples: int = 1000,
    x_per_triple: int = 1000,
    tol: float = 1e-10,
    chunk: int = 200_000,
    raise_on_violation: bool = True,
) -> dict:
    """Sample random unit-vector triples and check the Gram-angle inequalities.

    Returns worst margins and violation counts per inequality; a margin below
    -tol is a violation and raises InequalityViolated with the witness angles.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    gen = np.random.default_rng(seed)
    worst: dict = {}
    counts: dict = {}
    witness: dict = {}
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        c = _angle_triples(gen, n, d)
        for name, m in _margins(c).items():
            i = int(np.argmin(m))
            if name not in worst or m[i] < worst[name]:
                worst[name] = float(m[i])
                witness[name] = c[i].tolist()
            counts[name] = counts.get(name, 0) + int(np.sum(m < -tol))
        done += n

    # quadratic-form bound x.Cx >= |x|^2 on a sub-sample
    nt = min(x_triples, samples)
    c = _angle_triples(gen, nt, d)
    C = gram_matrix(c)
    x = gen.standard_normal((nt, x_per_triple, 3))
    quad = np.einsum("nmi,nij,nmj->nm", x, C, x)
    rel = (quad - np.einsum("nmi,nmi->nm", x, x)) / np.einsum("nmi,nmi->nm", x, x)
    i, j = np.unravel_index(int(np.argmin(rel)), rel.shape)
    worst["xCx>=|x|^2"] = float(rel[i, j])
    witness["xCx>=|x|^2"] = c[i].tolist()
    counts["xCx>=|x|^2"] = int(np.sum(rel < -tol))

    report = {"samples": samples, "seed": seed, "d": d, "tol": tol, "worst_margin": worst,
              "violations": counts, "witness": witness}  # fmt: skip
    bad = [k for k, v in counts.items() if v]
    if bad and raise_on_violation:
        raise InequalityViolated(f"violated: {', '.join(bad)}", witness={k: witness[k] for k in bad})
    return report


def triangle_angle_bounds(p1, p2, p3, M: float) -> dict:
    """Check the large-triangle angle bounds with slack 5 M^{-1/100}.

    Case 1: |p1p2|, |p1p3| within M^{99/100} of M and |p2p3| >= M - M^{99/100}.
    Case 2: |p1p2| within M^{99/100} of M and both other sides >= M - M^{99/100}.
    """
    p1, p2, p3 = (np.asarray(v, dtype=float) for v in (p1, p2, p3))
    eps = M ** (-1 / 100)
    tol = M ** (99 / 100)
    l12, l13, l23 = (float(np.linalg.norm(x - y)) for x, y in ((p1, p2), (p1, p3), (p2, p3)))
    if min(l12, l13, l23) == 0:
        raise HypothesisUnmet("coincident points")

    def cosine(apex, x, y):
        a, b = x - apex, y - apex
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    bound = 5 * eps
    if abs(l12 - M) <= tol and abs(l13 - M) <= tol and l23 - M >= -tol:
        case = 1
        cos = {"at1": cosine(p1, p2, p3), "at2": cosine(p2, p1, p3), "at3": cosine(p3, p1, p2)}
        margins = {"at1": 0.5 + bound - cos["at1"], "at2": cos["at2"] - 0.5 + bound, "at3": cos["at3"] - 0.5 + bound}
    elif abs(l12 - M) <= tol and l13 - M >= -tol and l23 - M >= -tol:
        case = 2
        cos = {"at3": cosine(p3, p1, p2)}
        margins = {"at3": cos["at3"] - 0.5 + bound}
    else:
        raise HypothesisUnmet("side lengths satisfy neither case")
    report = {"case": case, "M": M, "bound": bound, "cosines": cos, "margins": margins}
    if min(margins.values()) < 0:
        raise InequalityViolated("triangle angle bound violated", witness=report)
    return report
