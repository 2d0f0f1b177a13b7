"""Command-line driver: ``weakfind <command> --config project.cfg``.

The config file is flat ``key = value`` text (``#`` starts a comment line);
relative paths are resolved against the config file's directory.

Every stage reads and writes plain files, so stages can be chained or run
against data produced elsewhere. Exit codes: 0 success, 2 bad input,
3 solver failure, 4 inversion stopped at the iteration limit.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, SolverError
from .fem import STRAIN_COMPONENTS, MaterialParams, assemble_global, check_loads, compute_strains, parse_loads
from .inverse import (
    InverseConfig,
    InverseProblem,
    InversionFailed,
    WeightScheme,
    format_alpha,
    parse_alpha,
    run_inversion,
)
from .mesh import DEFAULT_THICKNESS, Mesh, cluster_elements, cluster_labels, read_mesh
from .placement import (
    CoverageInstance,
    Neighbourhood,
    format_selection_report,
    greedy_select_loads,
    greedy_select_sensors,
    greedy_select_sensors_with_regions,
)
from .sensing import (
    SensorSet,
    format_sensors,
    format_measurements,
    parse_measurements,
    parse_sensors,
    resolve_sensors,
    synthesize_measurements,
)
from .sensitivity import build_sensitivity_map, code_to_bytes, encode_sensing, format_sensitivity_csv
from .smoothing import SmootherConfig
from .vtk import format_vtk_points, write_vtk

log = logging.getLogger("weakfind")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_NOT_CONVERGED = 0, 2, 3, 4

# group -> key -> (type, default); groups only organize the code, the file is flat
SCHEMA = {
    "paths": {
        "mesh": (str, None),
        "loads": (str, None),
        "sensors": (str, None),
        "measurements": (str, None),
        "alpha": (str, None),
        "alpha_target": (str, None),
        "output": (str, "out"),
    },
    "material": {
        "young_modulus": (float, 2e12),
        "poisson": (float, 0.3),
        "thickness": (float, DEFAULT_THICKNESS),
    },
    "sensing": {"u0": (float, 0.0), "s0": (float, 0.0), "noise": (float, 0.0)},
    "inverse": {
        "weight_scheme": (str, "local-max"),
        "eps_w": (float, 0.05),
        "smoother": (str, "pseudo-laplacian"),
        "lambda": (float, 0.05),
        "smooth_iters": (int, 1),
        "gamma0": (float, 0.5),
        "step_rule": (str, "bb"),
        "line_search": (bool, True),
        "max_iters": (int, 500),
        "tol_cost": (float, 1e-6),
        "window": (int, 10),
        "eps_alpha": (float, 0.01),
        "solver": (str, "direct"),
        "vtk_stride": (int, 0),
    },
    "sensitivity": {
        "sensitivity_method": (str, "adjoint"),
        "delta_alpha": (float, -0.5),
        "cluster_min_elements": (int, None),
        "cluster_min_radius": (float, None),
    },
    "placement": {
        "placement": (str, "plain"),
        "neighbourhood": (str, "radius"),
        "neighbourhood_size": (float, None),
        "load_measure": (str, "volume"),
        "load_threshold": (float, None),  # strain threshold for load coverage; falls back to s0
    },
}


@dataclass
class ProjectConfig:
    root: Path
    values: dict = field(default_factory=dict)  # (section, key) -> value

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    def path(self, key: str, required: bool = True, must_exist: bool = True) -> Path | None:
        raw = self.get("paths", key)
        if raw is None:
            if required:
                raise InputError(f"config: '{key}' is required for this command")
            return None
        p = Path(raw)
        p = p if p.is_absolute() else self.root / p
        if must_exist and not p.is_file():
            raise InputError(f"config: {key} = {raw}: file not found")
        return p

    @property
    def output(self) -> Path:
        out = self.root / self.get("paths", "output")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {out}: {exc}") from None
        return out

    @property
    def material(self) -> MaterialParams:
        return MaterialParams(self.get("material", "young_modulus"), self.get("material", "poisson"))

    def inverse_config(self) -> InverseConfig:
        g = lambda k: self.get("inverse", k)  # noqa: E731
        try:
            return InverseConfig(
                weight_scheme=WeightScheme(g("weight_scheme"), g("eps_w")),
                smoother=SmootherConfig(g("smoother"), g("lambda"), g("smooth_iters")),
                gamma0=g("gamma0"),
                line_search=g("line_search"),
                step_rule=g("step_rule"),
                max_iters=g("max_iters"),
                eps_alpha=g("eps_alpha"),
                tol_cost=g("tol_cost"),
                window=g("window"),
            )
        except ValueError as exc:
            raise InputError(f"config: {exc}") from None


def load_config(path) -> ProjectConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file {path} not found")
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string("[project]\n" + path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise InputError(f"config: {exc}") from None
    if cp.sections() != ["project"]:
        raise InputError("config: sections are not supported; use flat 'key = value' lines")
    raw = cp["project"]
    groups = {key: group for group, keys in SCHEMA.items() for key in keys}
    for key in raw:
        if key not in groups:
            raise InputError(f"config: unknown key {key!r}")
    values = {}
    for group, keys in SCHEMA.items():
        for key, (typ, default) in keys.items():
            if key not in raw:
                values[(group, key)] = default
                continue
            try:
                values[(group, key)] = raw.getboolean(key) if typ is bool else typ(raw[key].strip())
            except ValueError:
                raise InputError(f"config: {key} = {raw[key]!r} is not a valid {typ.__name__}") from None
    return ProjectConfig(path.resolve().parent, values)


# ---------------------------------------------------------------------------
# shared loading


def _mesh(cfg: ProjectConfig) -> Mesh:
    return read_mesh(cfg.path("mesh"), thickness=cfg.get("material", "thickness"))


def _loads(cfg: ProjectConfig, mesh: Mesh):
    loads = parse_loads(cfg.path("loads").read_text())
    if not loads:
        raise InputError("load file defines no load cases")
    check_loads(mesh, loads)
    return loads


def _sensors(cfg: ProjectConfig, mesh: Mesh):
    sensors = parse_sensors(cfg.path("sensors").read_text(), cfg.get("sensing", "u0"), cfg.get("sensing", "s0"))
    return resolve_sensors(mesh, sensors)


def _alpha(cfg: ProjectConfig, key: str, mesh: Mesh, required: bool):
    p = cfg.path(key, required=required)
    return None if p is None else parse_alpha(p.read_text(), mesh.n_elements)


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _threads(args) -> int:
    return max(1, args.threads or os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# commands


def cmd_forward(cfg: ProjectConfig, args) -> int:
    mesh = _mesh(cfg)
    loads = _loads(cfg, mesh)
    alpha = _alpha(cfg, "alpha", mesh, required=False)
    out = cfg.output
    system = assemble_global(mesh, cfg.material, alpha, solver=cfg.get("inverse", "solver"))
    comps = STRAIN_COMPONENTS[mesh.kind]
    point_data, cell_data = {}, {}
    if alpha is not None:
        cell_data["alpha"] = alpha
    for case in loads:
        u = system.solve_full(case.vector(mesh)).reshape(-1, 3)
        eps = compute_strains(mesh, u)
        rows = ["node,ux,uy,uz"] + [f"{i + 1},{a!r},{b!r},{c!r}" for i, (a, b, c) in enumerate(u.tolist())]
        _write(out / f"displacements_case{case.id}.csv", "\n".join(rows) + "\n")
        rows = ["element," + ",".join(comps)]
        rows += [f"{e + 1}," + ",".join(repr(v) for v in row) for e, row in enumerate(eps.tolist())]
        _write(out / f"strains_case{case.id}.csv", "\n".join(rows) + "\n")
        point_data[f"displacement_case{case.id}"] = u
        cell_data[f"strain_norm_case{case.id}"] = np.linalg.norm(eps, axis=1)
    write_vtk(out / "forward.vtk", mesh, point_data, cell_data, title="weakfind forward")
    return EXIT_OK


def cmd_synth(cfg: ProjectConfig, args) -> int:
    mesh = _mesh(cfg)
    loads = _loads(cfg, mesh)
    sensors = _sensors(cfg, mesh)
    alpha = _alpha(cfg, "alpha_target", mesh, required=True)
    target = cfg.path("measurements", must_exist=False)
    rng = np.random.default_rng(args.seed)
    ms = synthesize_measurements(mesh, cfg.material, alpha, loads, sensors, cfg.get("sensing", "noise"), rng)
    target.parent.mkdir(parents=True, exist_ok=True)
    _write(target, format_measurements(ms))
    return EXIT_OK


def _misfit_outputs(out: Path, problem: InverseProblem, result, mesh: Mesh) -> None:
    ev = result.evaluation
    computed = problem.computed_readings(ev)
    rows = ["case,sensor,component,measured,computed,difference"]
    per_sensor = {}
    for c in problem.cases:
        for (sid, comp), m in zip(c.keys, c.measured):
            v = computed[(c.load.id, sid, comp)]
            rows.append(f"{c.load.id},{sid},{comp},{float(m)!r},{v!r},{float(m) - v!r}")
            per_sensor.setdefault(c.load.id, {}).setdefault(sid, []).append(float(m) - v)
    _write(out / "misfit.csv", "\n".join(rows) + "\n")
    sensors = problem.sensors
    data = {}
    for case_id, diffs in per_sensor.items():
        data[f"misfit_case{case_id}"] = [float(np.linalg.norm(diffs.get(s.id, [0.0]))) for s in sensors]
    text = format_vtk_points([s.position for s in sensors], data, title="weakfind misfit")
    _write(out / "misfit.vtk", text)


def cmd_invert(cfg: ProjectConfig, args) -> int:
    mesh = _mesh(cfg)
    loads = _loads(cfg, mesh)
    sensors = _sensors(cfg, mesh)
    ms = parse_measurements(cfg.path("measurements").read_text())
    alpha0 = _alpha(cfg, "alpha", mesh, required=False)
    config = cfg.inverse_config()
    stride = cfg.get("inverse", "vtk_stride")
    if stride < 0:
        raise InputError("vtk_stride must be >= 0")
    out = cfg.output
    problem = InverseProblem(
        mesh, cfg.material, loads, sensors, ms, config.weight_scheme, cfg.get("inverse", "solver"), _threads(args)
    )
    snap_dir = out / "snapshots"

    def snapshot(it, ev):
        if stride and it % stride == 0:
            snap_dir.mkdir(exist_ok=True)
            write_vtk(snap_dir / f"alpha_{it:05d}.vtk", mesh, cell_data={"alpha": ev.alpha}, title=f"weakfind iteration {it}")

    code = EXIT_OK
    try:
        result = run_inversion(problem, config, alpha0, callback=snapshot)
    except InversionFailed as exc:
        log.error("%s", exc)
        result, code = exc.state, EXIT_SOLVER
    if code == EXIT_OK and not result.converged:
        log.warning("no convergence after %d iterations; writing the best field found", result.iterations)
        code = EXIT_NOT_CONVERGED
    _write(out / "alpha.txt", format_alpha(result.alpha))
    rows = ["iter,cost"] + [f"{i},{c!r}" for i, c in enumerate(result.cost_history)]
    _write(out / "cost_history.csv", "\n".join(rows) + "\n")
    cells = {"alpha": result.alpha}
    target = _alpha(cfg, "alpha_target", mesh, required=False)
    if target is not None:
        cells["alpha_target"] = target
    write_vtk(out / "alpha.vtk", mesh, cell_data=cells, title="weakfind strength field")
    if result.evaluation is not None:
        _misfit_outputs(out, problem, result, mesh)
    log.info("inversion %s after %d iterations, cost %.6e", result.status, result.iterations, result.cost_history[-1])
    return code


def _clusters(cfg: ProjectConfig, mesh: Mesh):
    n = cfg.get("sensitivity", "cluster_min_elements")
    r = cfg.get("sensitivity", "cluster_min_radius")
    if n is None and r is None:
        n = max(1, -(-mesh.n_elements // 2000))
    try:
        return cluster_elements(mesh, min_elements=n, min_radius=r)
    except ValueError as exc:
        raise InputError(f"config: {exc}") from None


def cmd_plan_sensors(cfg: ProjectConfig, args) -> int:
    mesh = _mesh(cfg)
    loads = _loads(cfg, mesh)
    sensors = _sensors(cfg, mesh)
    alpha = _alpha(cfg, "alpha", mesh, required=False)
    clusters = _clusters(cfg, mesh)
    out = cfg.output
    smap = build_sensitivity_map(
        mesh,
        cfg.material,
        loads,
        sensors,
        clusters,
        method=cfg.get("sensitivity", "sensitivity_method"),
        delta_alpha=cfg.get("sensitivity", "delta_alpha"),
        alpha=alpha,
        threads=_threads(args),
    )
    code = encode_sensing(smap)
    _write(out / "sensitivity.csv", format_sensitivity_csv(smap))
    (out / "sensing.wsc").write_bytes(code_to_bytes(code))
    _write(out / "clusters.txt", "".join(f"{e + 1} {c}\n" for e, c in enumerate(cluster_labels(clusters, mesh.n_elements))))

    instance = CoverageInstance.from_code(code, smap.sensor_ids, smap.cluster_ids)
    lines = [f"{sid}: " + " ".join(str(c) for c in sorted(instance.candidates[sid])) for sid in smap.sensor_ids]
    _write(out / "sensor_coverage.txt", "\n".join(lines) + "\n")

    mode = cfg.get("placement", "placement")
    if mode == "plain":
        result = greedy_select_sensors(instance)
    elif mode == "regions":
        size = cfg.get("placement", "neighbourhood_size")
        if size is None:
            raise InputError("config: neighbourhood_size is required for region-aware placement")
        policy = Neighbourhood(cfg.get("placement", "neighbourhood"), size)
        positions = {s.id: s.position for s in sensors}
        result = greedy_select_sensors_with_regions(instance, mesh, clusters, positions, policy)
    else:
        raise InputError(f"config: unknown placement mode {mode!r}")
    if not result.picks:
        log.warning("no candidate sensor notices any cluster; selection is empty")
    _write(out / "sensor_selection.csv", format_selection_report(result))
    picked = SensorSet(tuple(sensors.by_id(sid) for sid in sorted(result.picks)), sensors.u0, sensors.s0)
    _write(out / "selected.sensors", format_sensors(picked) if len(picked) else "")

    counts = smap.sensor_counts()[cluster_labels(clusters, mesh.n_elements)]
    write_vtk(out / "sensor_counts.vtk", mesh, cell_data={"sensors_activated": counts}, title="weakfind sensitivity")
    return EXIT_OK


def cmd_plan_loads(cfg: ProjectConfig, args) -> int:
    mesh = _mesh(cfg)
    loads = _loads(cfg, mesh)
    s0 = cfg.get("placement", "load_threshold")
    s0 = cfg.get("sensing", "s0") if s0 is None else s0
    result = greedy_select_loads(mesh, cfg.material, loads, s0, cfg.get("placement", "load_measure"), _threads(args))
    if not result.picks:
        log.warning("no candidate load reaches the strain threshold anywhere")
    _write(cfg.output / "load_selection.csv", format_selection_report(result))
    return EXIT_OK


COMMANDS = {
    "forward": cmd_forward,
    "synth": cmd_synth,
    "invert": cmd_invert,
    "plan-sensors": cmd_plan_sensors,
    "plan-loads": cmd_plan_loads,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakfind", description="Locate weakened regions from load/measurement pairs.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", required=True, help="flat key = value project file")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--seed", type=int, default=0, help="seed for synthetic noise")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except SolverError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
