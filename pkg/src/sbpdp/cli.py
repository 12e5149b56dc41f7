"""Experiment driver: ``sbp-dp <subcommand> --config file [--out dir]``.

Subcommands mirror the experiment kinds in the config files:

    converge          mesh-refinement study, emits dofs/l2/eoc CSV
    conserve          long run tracking mass and energy over time
    spectrum          eigenvalues of the assembled global operator
    max-cfl           bisection for the largest stable CFL number
    build-operator    construct and certify one 1D operator
    build-projection  construct one projection pair

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Every run writes a manifest recording the config hash, the operator
certificates, and the tolerances in effect; re-running a config
reproduces the CSV artifacts byte for byte.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, glue, jsonio, sbp1d
from .advect import integrate
from .analysis import (
    ConvergenceRow,
    assemble_global,
    conservation_metric,
    energy,
    eoc,
    l2_error,
    mass,
    max_cfl,
    spectrum,
    write_convergence_csv,
    write_spectrum_csv,
    write_trace_csv,
)
from .errors import ConfigurationError, SbpDpError
from .mesh import (
    GLUE_POLICIES,
    GluePolicy,
    MeshPattern,
    OperatorRegistry,
    build_mesh,
)
from .sbp1d import OperatorKind, verify_sbp

EXPERIMENTS = ("converge", "conserve", "spectrum", "max-cfl",
               "build-operator", "build-projection")

INITIAL_CONDITIONS = {
    "sine_cos": lambda x, y: 2.0 + np.sin(2 * np.pi * x) + np.cos(2 * np.pi * y),
    "step_x": lambda x, y: np.where(x <= 0.3, 3.0, 1.0),
}


def exact_solution(name: str, beta):
    ic = INITIAL_CONDITIONS[name]
    bx, by = beta

    def fn(x, y, t):
        return ic(np.mod(x - bx * t, 1.0), np.mod(y - by * t, 1.0))

    return fn


def _tolerances() -> dict:
    return {
        "operator_positivity_floor": sbp1d.EPS_POS,
        "operator_feasibility_rtol": sbp1d.FEASIBILITY_RTOL,
        "operator_nullspace_rtol": sbp1d.NULLSPACE_RTOL,
        "projection_feasibility_rtol": glue.FEASIBILITY_RTOL,
        "projection_nullspace_rtol": glue.NULLSPACE_RTOL,
        "projection_identity_atol": glue.IDENTITY_ATOL,
        "lm_iterations": glue.LM_ITERATIONS,
        "lm_initial_damping": glue.LM_LAMBDA0,
    }


# ---------------------------------------------------------------------------
# configuration


def _require_keys(data: dict, allowed: dict, context: str) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigurationError(
            f"unknown keys {sorted(unknown)} in {context}")
    missing = {k for k, required in allowed.items() if required} - set(data)
    if missing:
        raise ConfigurationError(
            f"missing keys {sorted(missing)} in {context}")


@dataclass
class ExperimentConfig:
    experiment: str
    kind: OperatorKind
    p: int
    n1: int
    n2: int | None
    pattern: str | None
    levels: tuple | None
    elements: tuple | None
    glue_policy: str
    glue_nodes: list | None
    glue_weights: list | None
    sigma: float
    cfl: float
    final_time: float
    initial_condition: str
    beta: tuple
    output: str
    bounds: tuple = (1.5, 3.5)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        _require_keys(data, {
            "experiment": True, "operator": True, "nodes": True,
            "mesh": False, "glue": False, "sigma": False, "cfl": False,
            "final_time": False, "initial_condition": False,
            "wave_speeds": False, "output": False, "bounds": False,
        }, "config")
        experiment = data["experiment"]
        if experiment not in EXPERIMENTS:
            raise ConfigurationError(
                f"unknown experiment {experiment!r}; expected one of "
                f"{EXPERIMENTS}")

        op = data["operator"]
        _require_keys(op, {"kind": True, "p": True}, "config.operator")
        try:
            kind = OperatorKind(op["kind"])
        except ValueError:
            raise ConfigurationError(
                f"unknown operator kind {op['kind']!r}") from None
        p = int(op["p"])
        if not 1 <= p <= 4:
            raise ConfigurationError(f"operator degree p={p} out of range")

        nodes = data["nodes"]
        _require_keys(nodes, {"n1": True, "n2": False}, "config.nodes")
        n1 = int(nodes["n1"])
        n2 = int(nodes["n2"]) if "n2" in nodes else None

        pattern = levels = elements = None
        if "mesh" in data:
            mesh = data["mesh"]
            _require_keys(mesh, {"pattern": True, "levels": False,
                                 "elements": False}, "config.mesh")
            pattern = mesh["pattern"]
            if pattern not in ("uniform", "quadrant", "checkerboard"):
                raise ConfigurationError(
                    f"unknown mesh pattern {pattern!r}")
            if "levels" in mesh:
                levels = tuple(int(v) for v in mesh["levels"])
                if len(levels) != 2 or levels[0] < 1 or levels[1] < levels[0]:
                    raise ConfigurationError(
                        "mesh.levels must be [d_min, d_max] with "
                        "1 <= d_min <= d_max")
            if "elements" in mesh:
                elements = tuple(int(v) for v in mesh["elements"])
                if len(elements) != 2 or min(elements) < 1:
                    raise ConfigurationError(
                        "mesh.elements must be [n_x, n_y]")
            if pattern in ("quadrant", "checkerboard") and n2 is None:
                raise ConfigurationError(
                    f"mesh pattern {pattern!r} needs nodes.n2")

        glue_policy = "left"
        glue_nodes = glue_weights = None
        if "glue" in data:
            g = data["glue"]
            _require_keys(g, {"policy": True, "nodes": False,
                              "weights": False}, "config.glue")
            glue_policy = g["policy"]
            if glue_policy not in GLUE_POLICIES:
                raise ConfigurationError(
                    f"unknown glue policy {glue_policy!r}")
            if glue_policy == "explicit":
                if "nodes" not in g or "weights" not in g:
                    raise ConfigurationError(
                        "explicit glue needs nodes and weights")
                glue_nodes = [float(v) for v in g["nodes"]]
                glue_weights = [float(v) for v in g["weights"]]

        sigma = float(data.get("sigma", 1.0))
        if sigma < 0:
            raise ConfigurationError("sigma must be non-negative")
        ic_name = data.get("initial_condition", "sine_cos")
        if ic_name not in INITIAL_CONDITIONS:
            raise ConfigurationError(
                f"unknown initial condition {ic_name!r}; expected one of "
                f"{sorted(INITIAL_CONDITIONS)}")
        beta = tuple(float(v) for v in data.get("wave_speeds", (1.0, 1.0)))
        if len(beta) != 2:
            raise ConfigurationError("wave_speeds must be [beta_x, beta_y]")
        bounds = tuple(float(v) for v in data.get("bounds", (1.5, 3.5)))
        if len(bounds) != 2 or bounds[0] >= bounds[1]:
            raise ConfigurationError("bounds must be [lo, hi] with lo < hi")

        return cls(
            experiment=experiment, kind=kind, p=p, n1=n1, n2=n2,
            pattern=pattern, levels=levels, elements=elements,
            glue_policy=glue_policy, glue_nodes=glue_nodes,
            glue_weights=glue_weights, sigma=sigma,
            cfl=float(data.get("cfl", 1.0)),
            final_time=float(data.get("final_time", 0.1)),
            initial_condition=ic_name, beta=beta,
            output=str(data.get("output", "experiment")),
            bounds=bounds, raw=data,
        )

    def mesh_pattern(self, level: int = None,
                     elements: tuple = None) -> MeshPattern:
        if elements is None:
            if level is None:
                if self.elements is None:
                    raise ConfigurationError(
                        "config.mesh.elements required for this experiment")
                elements = self.elements
            else:
                elements = (2 ** level, 2 ** level)
        n_x, n_y = elements
        if self.pattern == "uniform":
            return MeshPattern.uniform(self.n1, n_x, n_y)
        if self.pattern == "quadrant":
            return MeshPattern.quadrant(self.n1, self.n2, n_x, n_y)
        if self.pattern == "checkerboard":
            return MeshPattern.checkerboard(self.n1, self.n2, n_x, n_y)
        raise ConfigurationError("config.mesh is required for this experiment")

    def glue(self) -> GluePolicy:
        if self.glue_policy == "explicit":
            inter = glue.make_intermediate(np.array(self.glue_nodes),
                                           np.array(self.glue_weights))
            return GluePolicy("explicit", grid=inter)
        return GluePolicy(self.glue_policy)

    def node_counts(self) -> list:
        counts = {self.n1}
        if self.n2 is not None and self.pattern in ("quadrant",
                                                    "checkerboard"):
            counts.add(self.n2)
        if self.glue_policy == "double" and self.n2 is not None:
            counts.add(2 * max(self.n1, self.n2))
        return sorted(counts)


def load_config(path) -> ExperimentConfig:
    try:
        data = jsonio.load(path)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from None
    return ExperimentConfig.from_dict(data)


def _config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.raw, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _build_registry(config: ExperimentConfig) -> OperatorRegistry:
    registry = OperatorRegistry()
    for n in config.node_counts():
        registry.ensure(config.kind, config.p, n)
    return registry


def _manifest(config: ExperimentConfig, registry: OperatorRegistry,
              extra: dict) -> dict:
    certificates = []
    for op in registry.operators():
        report = verify_sbp(op)
        certificates.append({
            "kind": op.kind.value, "p": op.p, "N": op.n, "bp": op.bp,
            "norm_degree": op.norm_degree, "passed": report.passed,
        })
    manifest = {
        "package_version": __version__,
        "config_sha256": _config_hash(config),
        "created_unix": time.time(),
        "tolerances": _tolerances(),
        "operator_certificates": certificates,
    }
    manifest.update(extra)
    return manifest


# ---------------------------------------------------------------------------
# experiments


def _converge_level(config: ExperimentConfig, registry, pair_cache, level):
    mesh = build_mesh(config.mesh_pattern(level=level), registry,
                      config.glue(), config.sigma, config.kind, config.p,
                      beta=config.beta, pair_cache=pair_cache)
    mesh.apply_initial_condition(INITIAL_CONDITIONS[config.initial_condition])
    integrate(mesh, config.final_time, config.cfl)
    exact = exact_solution(config.initial_condition, config.beta)
    return mesh.dofs, l2_error(mesh, exact, config.final_time)


def _converge_level_worker(args):
    raw, level = args
    config = ExperimentConfig.from_dict(raw)
    registry = _build_registry(config)
    return _converge_level(config, registry, {}, level)


def _max_workers() -> int:
    env = os.environ.get("SBP_DP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_converge(config: ExperimentConfig, out_dir: Path,
                 parallel: bool = False) -> dict:
    registry = _build_registry(config)
    d_min, d_max = config.levels if config.levels else (1, 4)
    levels = list(range(d_min, d_max + 1))
    if parallel and len(levels) > 1:
        with ProcessPoolExecutor(
                max_workers=min(_max_workers(), len(levels))) as pool:
            results = list(pool.map(_converge_level_worker,
                                    [(config.raw, d) for d in levels]))
    else:
        pair_cache = {}
        results = [_converge_level(config, registry, pair_cache, d)
                   for d in levels]
    rows = eoc([ConvergenceRow(dofs, err) for dofs, err in results])
    csv_path = out_dir / f"{config.output}.csv"
    write_convergence_csv(csv_path, rows)
    manifest = _manifest(config, registry, {
        "experiment": "converge",
        "levels": levels,
        "rows": [{"dofs": r.dofs, "l2": r.l2_error, "eoc": r.eoc}
                 for r in rows],
    })
    manifest_path = out_dir / f"{config.output}_manifest.json"
    jsonio.dump(manifest, manifest_path)
    return {"csv": str(csv_path), "manifest": str(manifest_path),
            "rows": rows}


def run_conserve(config: ExperimentConfig, out_dir: Path, **_kw) -> dict:
    registry = _build_registry(config)
    mesh = build_mesh(config.mesh_pattern(), registry, config.glue(),
                      config.sigma, config.kind, config.p, beta=config.beta)
    mesh.apply_initial_condition(INITIAL_CONDITIONS[config.initial_condition])
    state0 = mesh.state()
    times, energies, masses = [], [], []

    def record(_k, t, m):
        times.append(t)
        energies.append(energy(m))
        masses.append(mass(m))

    integrate(mesh, config.final_time, config.cfl, callback=record)
    trace_path = out_dir / f"{config.output}_trace.csv"
    write_trace_csv(trace_path, times, energies, masses)
    drift = conservation_metric(mesh, state0, mesh.state())
    energies_arr = np.array(energies)
    summary = {
        "experiment": "conserve",
        "sigma": config.sigma,
        "steps": len(times) - 1,
        "mass_initial": masses[0],
        "mass_final": masses[-1],
        "mass_drift": drift,
        "mass_drift_max": float(np.abs(np.array(masses) - masses[0]).max()),
        "energy_initial": energies[0],
        "energy_final": energies[-1],
        "energy_drift_rel": (energies[-1] - energies[0]) / energies[0],
        "energy_max_step_increase": float(np.diff(energies_arr).max()),
        "energy_monotone_slack": 1e-12 * energies[0],
    }
    manifest_path = out_dir / f"{config.output}_manifest.json"
    jsonio.dump(_manifest(config, registry, summary), manifest_path)
    return {"trace": str(trace_path), "manifest": str(manifest_path),
            "summary": summary}


def run_spectrum(config: ExperimentConfig, out_dir: Path, **_kw) -> dict:
    registry = _build_registry(config)
    mesh = build_mesh(config.mesh_pattern(), registry, config.glue(),
                      config.sigma, config.kind, config.p, beta=config.beta)
    report = spectrum(assemble_global(mesh))
    csv_path = out_dir / f"{config.output}_spectrum.csv"
    write_spectrum_csv(csv_path, report)
    summary = {
        "experiment": "spectrum",
        "sigma": config.sigma,
        "dimension": report.dimension,
        "max_real": report.max_real,
        "max_abs_real": report.max_abs_real,
        "operator_norm": report.operator_norm,
    }
    manifest_path = out_dir / f"{config.output}_manifest.json"
    jsonio.dump(_manifest(config, registry, summary), manifest_path)
    return {"csv": str(csv_path), "manifest": str(manifest_path),
            "summary": summary}


def run_max_cfl(config: ExperimentConfig, out_dir: Path, **_kw) -> dict:
    registry = _build_registry(config)

    def factory():
        return build_mesh(config.mesh_pattern(), registry, config.glue(),
                          config.sigma, config.kind, config.p,
                          beta=config.beta)

    result = max_cfl(factory, lo=config.bounds[0], hi=config.bounds[1])
    summary = {
        "experiment": "max-cfl",
        "max_cfl": result.value,
        "criterion": result.criterion,
        "dimension": result.dimension,
        "tolerance": result.tolerance,
    }
    manifest_path = out_dir / f"{config.output}_manifest.json"
    jsonio.dump(_manifest(config, registry, summary), manifest_path)
    return {"manifest": str(manifest_path), "summary": summary}


def run_build_operator(config: ExperimentConfig, out_dir: Path, **_kw) -> dict:
    registry = _build_registry(config)
    op = registry.get(config.kind, config.p, config.n1)
    op_path = out_dir / f"{config.output}.json"
    op.save(op_path)
    report = verify_sbp(sbp1d.SbpOperator1D.load(op_path))
    if not report.passed:
        raise ArithmeticError("serialized operator failed verification")
    manifest_path = out_dir / f"{config.output}_manifest.json"
    jsonio.dump(_manifest(config, registry, {
        "experiment": "build-operator",
        "certificate": report.as_dict(),
    }), manifest_path)
    return {"operator": str(op_path), "manifest": str(manifest_path),
            "certificate": report}


def run_build_projection(config: ExperimentConfig, out_dir: Path,
                         **_kw) -> dict:
    if config.n2 is None:
        raise ConfigurationError("build-projection needs nodes.n2")
    registry = OperatorRegistry()
    op_l = registry.ensure(config.kind, config.p, config.n1)
    op_r = registry.ensure(config.kind, config.p, config.n2)
    if config.glue_policy == "double":
        registry.ensure(config.kind, config.p, 2 * max(config.n1, config.n2))
    policy = config.glue()
    from .mesh import _intermediate_for
    inter = _intermediate_for(policy, registry, config.kind, config.p,
                              op_l, op_r)
    if config.kind is OperatorKind.DEGREE_PRESERVING:
        pair = glue.build_projection(op_l.grid, op_r.grid, inter,
                                     op_l.h_diag, op_r.h_diag, config.p)
    else:
        pair = glue.build_reduced_projection(op_l.grid, op_r.grid, inter,
                                             op_l.h_diag, op_r.h_diag,
                                             config.p)
    pair_path = out_dir / f"{config.output}.json"
    pair.save(pair_path)
    manifest_path = out_dir / f"{config.output}_manifest.json"
    jsonio.dump(_manifest(config, registry, {
        "experiment": "build-projection",
        "degree": pair.degree,
        "condition_residual": pair.condition_residual(),
        "intermediate_nodes": pair.inter.n,
    }), manifest_path)
    return {"projection": str(pair_path), "manifest": str(manifest_path),
            "pair": pair}


RUNNERS = {
    "converge": run_converge,
    "conserve": run_conserve,
    "spectrum": run_spectrum,
    "max-cfl": run_max_cfl,
    "build-operator": run_build_operator,
    "build-projection": run_build_projection,
}


def run(config: ExperimentConfig, out_dir, parallel: bool = False) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return RUNNERS[config.experiment](config, out_dir, parallel=parallel)


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbp-dp",
        description="Degree-preserving SBP operator toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True)
        cmd.add_argument("--out", default="out")
        cmd.add_argument("--parallel", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if config.experiment != args.command:
            raise ConfigurationError(
                f"config declares experiment {config.experiment!r} but the "
                f"{args.command!r} subcommand was invoked")
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    try:
        artifacts = run(config, args.out, parallel=args.parallel)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (SbpDpError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    for key, value in artifacts.items():
        if isinstance(value, str):
            print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
