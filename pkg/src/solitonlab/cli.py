"""Command-line entry point: scenarios, validation, sweeps and the algebra suite.

A scenario file is one JSON tree::

    {"name": "equilateral-d2-p3",
     "model": {"d": 2, "p": 3, "alpha": 1},
     "generator": {"name": "equilateral", "params": {"R0": 15}},
     "simulation": {"s_max": 200, "output_stride": 0.1},
     "validation": {"s_burn": 20}}

Cache location follows ``SOLITONLAB_CACHE_DIR``.
"""
from __future__ import annotations

import argparse
import csv
import inspect
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import asymptotics, cache
from .artifacts import read_trajectory, write_json, write_trajectory
from .dynamics import GENERATORS, PerturbationSpec, SimulationConfig, SolitonConfiguration, simulate
from .errors import ConfigError, SolitonLabError
from .geometry import gram_inequality_suite
from .ground_state import ModelParams, cached_profile, profile_constants, profile_header
from .kernel import KernelOptions, cached_kernel, kernel_header, reference_clock


CHECKS_13 = ("rigidity", "decay", "ode", "hierarchy")
CHECKS_TWO_BODY = ("two_body", "ode")


# ---------------------------------------------------------------------------
# scenario schema


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelBlock(_Block):
    d: int
    p: float
    alpha: float = 1.0

    @model_validator(mode="after")
    def _admissible(self):
        ModelParams(self.d, self.p, self.alpha)
        return self


def _explicit(d: int, centers, signs, d_min: float = 5.0) -> SolitonConfiguration:
    z = np.asarray(centers, dtype=float)
    if z.ndim != 2 or z.shape[1] != d:
        raise ValueError(f"centers must have shape (K, {d})")
    return SolitonConfiguration(z, list(signs), d_min=d_min)


_GENERATORS = dict(GENERATORS, explicit=_explicit)


class GeneratorBlock(_Block):
    name: str
    params: dict = Field(default_factory=dict)
    seed: int | None = None

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in _GENERATORS:
            raise ValueError(f"unknown generator {v!r}; choose from {sorted(_GENERATORS)}")
        return v

    @model_validator(mode="after")
    def _arguments(self):
        sig = inspect.signature(_GENERATORS[self.name])
        allowed = set(sig.parameters) - {"d", "d_min"}
        extra = set(self.params) - allowed
        if extra:
            raise ValueError(f"unexpected parameters {sorted(extra)} for {self.name}")
        need = {
            n for n, prm in sig.parameters.items()
            if prm.default is inspect.Parameter.empty and n not in ("d", "seed")
        }  # fmt: skip
        missing = need - set(self.params)
        if missing:
            raise ValueError(f"missing parameters {sorted(missing)} for {self.name}")
        return self


class SimulationBlock(_Block):
    s_max: float = Field(gt=0)
    t0: float = Field(1.0, gt=0)
    rtol: float = Field(1e-9, ge=1e-12, le=1e-6)
    atol: float = Field(1e-12, gt=0)
    output_stride: float = Field(0.1, gt=0)
    d_min: float = Field(5.0, gt=0)
    max_step: float | None = Field(None, gt=0)


class PerturbationBlock(_Block):
    amplitude: float = Field(0.0, ge=0)
    theta: float = 1.5
    seed: int | None = None
    spacing: float = Field(1.0, gt=0)


class ValidationBlock(_Block):
    checks: list[Literal["rigidity", "decay", "ode", "hierarchy", "two_body"]] | None = None
    s_burn: float = 20.0
    omega_tol: float = 1e-2
    c0_factor: float = 10.0
    slack: float = 0.2
    min_span: float = 100.0


class OutputBlock(_Block):
    dir: str | None = None
    trajectory: str = "trajectory.csv"
    report: str = "report.json"


class ScenarioSpec(_Block):
    name: str = "scenario"
    model: ModelBlock
    generator: GeneratorBlock
    simulation: SimulationBlock
    perturbation: PerturbationBlock = Field(default_factory=PerturbationBlock)
    validation: ValidationBlock = Field(default_factory=ValidationBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)


def _field_path(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_scenario(data: dict) -> ScenarioSpec:
    """Validate a scenario tree; schema problems become ConfigError with a dotted field path."""
    try:
        return ScenarioSpec.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        path = _field_path(first)
        raise ConfigError(first["msg"], field=path) from None


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}", field="--config") from None


# ---------------------------------------------------------------------------
# running


@dataclass
class RunArtifacts:
    trajectory_csv: Path
    report_json: Path
    cache_keys: dict
    wall_clock: float
    stats: dict
    passed: bool
    report: dict = field(repr=False, default_factory=dict)


def build_model(model: ModelBlock):
    """Profile and kernel from the disk cache (built on a miss)."""
    params = ModelParams(model.d, model.p, model.alpha)
    profile = cached_profile(params)
    kernel = cached_kernel(profile, model.alpha)
    keys = {
        "profile": cache.cache_key("profile", profile_header(params)),
        "kernel": cache.cache_key("kernel", kernel_header(profile, model.alpha, KernelOptions())),
    }
    return kernel, keys


def initial_configuration(spec: ScenarioSpec, seed: int | None = None) -> SolitonConfiguration:
    gen = spec.generator
    fn = _GENERATORS[gen.name]
    kwargs = dict(gen.params)
    if "seed" in inspect.signature(fn).parameters:
        chosen = seed if seed is not None else (gen.seed if gen.seed is not None else kwargs.get("seed"))
        if chosen is None:
            raise ConfigError(f"generator {gen.name} needs a seed", field="generator.seed")
        kwargs["seed"] = int(chosen)
    try:
        return fn(spec.model.d, d_min=spec.simulation.d_min, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field="generator.params") from None


def simulation_config(spec: ScenarioSpec, kernel, seed: int | None = None) -> SimulationConfig:
    sim, pert = spec.simulation, spec.perturbation
    pseed = pert.seed if pert.seed is not None else (seed if seed is not None else (spec.generator.seed or 0))
    try:
        return SimulationConfig(
            kernel=kernel,
            s_max=sim.s_max,
            t0=sim.t0,
            rtol=sim.rtol,
            atol=sim.atol,
            perturbation=PerturbationSpec(pert.amplitude, pert.theta, int(pseed), pert.spacing),
            output_stride=sim.output_stride,
            d_min=sim.d_min,
            max_step=sim.max_step if sim.max_step is not None else math.inf,
        )
    except ValueError as exc:
        raise ConfigError(str(exc), field="simulation") from None


def _default_checks(traj) -> tuple:
    return CHECKS_TWO_BODY if traj.K == 2 else CHECKS_13


def validate_trajectory(traj, kernel, clock, vb: ValidationBlock) -> dict:
    """Run the requested checks; module errors are recorded as failed checks."""
    checks = vb.checks or _default_checks(traj)
    out: dict = {"checks": {}}
    for name in checks:
        try:
            if name == "rigidity":
                rep = asymptotics.fit_rigidity(
                    traj, clock, min_span=vb.min_span, omega_tol=vb.omega_tol, c0_factor=vb.c0_factor
                ).to_dict()
            elif name == "decay":
                fits = asymptotics.decay_envelopes(traj, clock, slack=vb.slack, min_span=vb.min_span)
                rep = {"fits": [f.to_dict() for f in fits], "passed": all(f.passed for f in fits)}
            elif name == "ode":
                rep = asymptotics.ode_residuals(traj, kernel, clock)
            elif name == "hierarchy":
                rep = asymptotics.separation_hierarchy_check(traj, clock, s_burn=vb.s_burn)
            else:
                rep = asymptotics.two_body_report(traj)
        except SolitonLabError as exc:
            rep = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
        out["checks"][name] = asymptotics.report_to_jsonable(rep)
    out["passed"] = all(c["passed"] for c in out["checks"].values())
    return out


def _output_dir(spec: ScenarioSpec, out: str | Path | None) -> Path:
    base = Path(out) if out is not None else Path(spec.output.dir or Path("runs") / spec.name)
    try:
        base.mkdir(parents=True, exist_ok=True)
        probe = base / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}", field="output.dir") from None
    return base


def run_scenario(spec: ScenarioSpec | dict, out: str | Path | None = None, seed: int | None = None) -> RunArtifacts:
    """Build or load the model, simulate, validate and write the artifacts."""
    if isinstance(spec, dict):
        spec = parse_scenario(spec)
    outdir = _output_dir(spec, out)
    t_start = time.perf_counter()
    kernel, keys = build_model(spec.model)
    init = initial_configuration(spec, seed)
    sim = simulation_config(spec, kernel, seed)
    traj = simulate(init, sim)
    clock = reference_clock(kernel, s_max=max(sim.s_max, 10.0))
    validation = validate_trajectory(traj, kernel, clock, spec.validation)

    used_seed = seed if seed is not None else spec.generator.seed
    traj_path = write_trajectory(
        outdir / spec.output.trajectory, traj, kernel, clock,
        extra_meta={"scenario": spec.model_dump(), "seed": used_seed, "cache_keys": keys},
    )  # fmt: skip
    report = {
        "scenario": spec.name,
        "seed": used_seed,
        "model": spec.model.model_dump(),
        "c_F": kernel.c_F,
        "c_g": kernel.c_g,
        "c_star": clock.c_star_exact,
        "c_star_fit": clock.c_star,
        "collision": traj.collision,
        "collision_s": traj.collision_s,
        **validation,
    }
    report_path = write_json(outdir / spec.output.report, asymptotics.report_to_jsonable(report))
    wall = time.perf_counter() - t_start
    write_json(outdir / "run.json", {"wall_clock_s": wall, "stats": traj.stats, "cache_keys": keys})
    return RunArtifacts(traj_path, report_path, keys, wall, traj.stats, bool(report["passed"]), report)


# ---------------------------------------------------------------------------
# sweeps


def expand_sweep(data: dict) -> list[dict]:
    """Scenario list from ``{"scenarios": [...]}`` or a base with ``seeds`` and/or ``models``."""
    if "scenarios" in data:
        specs = list(data["scenarios"])
    else:
        if "base" not in data:
            raise ConfigError("sweep needs 'scenarios' or 'base'", field="base")
        base = data["base"]
        models = data.get("models") or [base.get("model")]
        seeds = data.get("seeds") or [None]
        specs = []
        for m in models:
            for sd in seeds:
                spec = json.loads(json.dumps(base))
                spec["model"] = m
                tag = f"d{m.get('d')}-p{m.get('p')}" if len(models) > 1 else None
                if sd is not None:
                    spec.setdefault("generator", {})["seed"] = sd
                parts = [base.get("name", "sweep"), tag, None if sd is None else f"seed{sd}"]
                spec["name"] = "-".join(x for x in parts if x)
                specs.append(spec)
    if not specs:
        raise ConfigError("sweep is empty", field="scenarios")
    return specs


SUMMARY_FIELDS = (
    "name", "d", "p", "alpha", "seed", "passed", "collision", "collision_s",
    "c_star", "c0", "omega_sum_norm", "error",
)  # fmt: skip


def _summary_row(spec_dict: dict, out_root: str) -> dict:
    name = spec_dict.get("name", "scenario")
    model = spec_dict.get("model") or {}
    row = {k: "" for k in SUMMARY_FIELDS}
    row.update(name=name, d=model.get("d", ""), p=model.get("p", ""), alpha=model.get("alpha", 1.0))
    row["seed"] = (spec_dict.get("generator") or {}).get("seed", "")
    try:
        art = run_scenario(spec_dict, Path(out_root) / name)
    except SolitonLabError as exc:
        row.update(passed=False, error=f"{type(exc).__name__}: {exc}")
        return row
    rep = art.report
    rig = rep["checks"].get("rigidity", {})
    row.update(
        passed=art.passed,
        collision=rep["collision"],
        collision_s="" if rep["collision_s"] is None else rep["collision_s"],
        c_star=rep["c_star"],
        c0=rig.get("c0", ""),
        omega_sum_norm=rig.get("omega_sum_norm", ""),
        error=rig.get("error", ""),
    )
    return row


def sweep(specs: list[dict], out_root: str | Path, parallel: int = 1) -> Path:
    """Run scenarios independently and write ``summary.csv``; failures are isolated per row."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    # build each distinct model once up front so workers only read the cache
    for m in {json.dumps(s.get("model"), sort_keys=True) for s in specs}:
        try:
            build_model(ModelBlock.model_validate(json.loads(m)))
        except (ValidationError, SolitonLabError, ValueError):
            pass  # reported per row
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_summary_row, specs, [str(out_root)] * len(specs)))
    else:
        rows = [_summary_row(s, str(out_root)) for s in specs]
    path = out_root / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return path


# ---------------------------------------------------------------------------
# subcommands


def _model_from_config(path) -> ModelBlock:
    data = load_config(path)
    try:
        return ModelBlock.model_validate(data.get("model", data))
    except ValidationError as exc:
        first = exc.errors()[0]
        path_ = "model." + _field_path(first)
        raise ConfigError(first["msg"], field=path_) from None


def cmd_ground_state(args) -> int:
    model = _model_from_config(args.config)
    prof = cached_profile(ModelParams(model.d, model.p, model.alpha))
    consts = profile_constants(prof)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    step = max(1, int(round(args.dr / prof.options.h)))
    r = prof.grid[::step]
    with (out / "profile.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "q", "dq"])
        for ri, qi, dqi in zip(r, prof.q_values[::step], prof.dq_values[::step]):
            w.writerow([repr(float(ri)), repr(float(qi)), repr(float(dqi))])
    write_json(out / "ground_state.json", {
        "model": model.model_dump(),
        "q0": prof.q0,
        "c_q": prof.c_q,
        "r_trust": prof.r_trust,
        "r_match": prof.r_match,
        "grad_component_norm_sq": consts.grad_component_norm_sq,
    })  # fmt: skip
    print(f"q(0) = {prof.q0!r}  c_q = {prof.c_q!r}  -> {out}")
    return 0


def cmd_kernel(args) -> int:
    model = _model_from_config(args.config)
    kernel, keys = build_model(model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r = np.round(np.arange(1.0, args.r_max + 1e-9, args.dr), 10)
    g_ex = kernel.g_exact(r)
    g_as = kernel.g_asymptotic(r)
    F = kernel.force(r)
    with (out / "kernel.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "g_exact", "g_asym", "F"])
        for row in zip(r, g_ex, g_as, F):
            w.writerow([repr(float(v)) for v in row])
    clock = reference_clock(kernel, s_max=100.0)
    write_json(out / "kernel.json", {
        "model": model.model_dump(), "c_g": kernel.c_g, "c_F": kernel.c_F, "tilted_mass": kernel.tilted_mass,
        "c_star": clock.c_star_exact, "c_star_fit": clock.c_star, "cache_keys": keys,
    })  # fmt: skip
    print(f"c_g = {kernel.c_g!r}  c_F = {kernel.c_F!r}  c_star = {clock.c_star_exact!r}  -> {out}")
    return 0


def cmd_simulate(args) -> int:
    spec = parse_scenario(load_config(args.config))
    art = run_scenario(spec, args.out, args.seed)
    status = "PASS" if art.passed else "FAIL"
    print(f"{spec.name}: {status}  trajectory={art.trajectory_csv}  report={art.report_json}  ({art.wall_clock:.1f} s)")
    return 0 if art.passed else 1


def cmd_validate(args) -> int:
    traj, meta = read_trajectory(args.trajectory)
    scen = meta.get("scenario") or {}
    if args.config:
        scen = load_config(args.config)
    model = ModelBlock.model_validate(scen.get("model") or {k: meta["model"][k] for k in ("d", "p", "alpha")})
    vb = ValidationBlock.model_validate(scen.get("validation") or {})
    kernel, _ = build_model(model)
    clock = reference_clock(kernel, s_max=max(float(traj.s[-1]), 10.0))
    rep = validate_trajectory(traj, kernel, clock, vb)
    rep.update(c_star=clock.c_star_exact, trajectory=str(args.trajectory))
    out = Path(args.out) if args.out else Path(args.trajectory).with_suffix(".report.json")
    if out.suffix != ".json":
        out = out / "report.json"
    write_json(out, asymptotics.report_to_jsonable(rep))
    print(f"{'PASS' if rep['passed'] else 'FAIL'} -> {out}")
    return 0 if rep["passed"] else 1


def cmd_algebra(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for d in (2, 3):
        reports[f"d{d}"] = gram_inequality_suite(args.samples, args.seed, d, raise_on_violation=False)
    total = sum(v for r in reports.values() for v in r["violations"].values())
    write_json(out / "algebra.json", {"reports": reports, "total_violations": total})
    print(f"{args.samples} triples per dimension, {total} violations -> {out}")
    return 0 if total == 0 else 1


def cmd_sweep(args) -> int:
    data = load_config(args.config)
    specs = expand_sweep(data)
    if args.seed is not None:
        for s in specs:
            s.setdefault("generator", {})["seed"] = args.seed
    path = sweep(specs, args.out, args.parallel)
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    ok = sum(r["passed"] == "True" for r in rows)
    print(f"{ok}/{len(rows)} scenarios passed -> {path}")
    return 0 if ok == len(rows) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="solitonlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground-state", help="solve the radial profile and write it as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out/ground-state")
    p.add_argument("--dr", type=float, default=0.01, help="output spacing in r")
    p.set_defaults(func=cmd_ground_state)

    p = sub.add_parser("kernel", help="tabulate g and F")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out/kernel")
    p.add_argument("--dr", type=float, default=0.05)
    p.add_argument("--r-max", type=float, default=30.0)
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("simulate", help="run a scenario: simulate, validate, write artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="validate a trajectory CSV and write a JSON report")
    p.add_argument("trajectory")
    p.add_argument("--config", default=None, help="scenario file overriding the CSV sidecar")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("algebra", help="sampled Gram-angle inequality suite")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out/algebra")
    p.set_defaults(func=cmd_algebra)

    p = sub.add_parser("sweep", help="run many scenarios and summarise")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out/sweep")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolitonLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
