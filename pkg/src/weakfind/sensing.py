"""Displacement and strain sensors, their interpolation operators, and
measurement sets (synthetic or read from file)."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import InputError
from .fem import (
    STRAIN_COMPONENTS,
    LoadCase,
    MaterialParams,
    assemble_global,
    compute_strains,
    element_dofs,
    solve_forward,
    strain_displacement,
)
from .mesh import Mesh, locate_point

DISPLACEMENT_COMPONENTS = ("ux", "uy", "uz")
ALL_STRAIN_COMPONENTS = STRAIN_COMPONENTS["tet4"]


def is_displacement(component: str) -> bool:
    return component in DISPLACEMENT_COMPONENTS


@dataclass(frozen=True)
class Sensor:
    id: int
    kind: str  # "displacement" | "strain"
    position: tuple
    components: tuple
    element: int | None = None
    weights: tuple | None = None  # barycentric, displacement sensors only

    def __post_init__(self):
        if self.kind not in ("displacement", "strain"):
            raise InputError(f"sensor {self.id}: unknown kind {self.kind!r}")
        if not self.components:
            raise InputError(f"sensor {self.id}: no components")
        allowed = DISPLACEMENT_COMPONENTS if self.kind == "displacement" else ALL_STRAIN_COMPONENTS
        bad = [c for c in self.components if c not in allowed]
        if bad:
            raise InputError(f"sensor {self.id}: invalid component(s) {bad} for {self.kind} sensor")
        if len(set(self.components)) != len(self.components):
            raise InputError(f"sensor {self.id}: repeated component")

    @property
    def resolved(self) -> bool:
        return self.element is not None


@dataclass(frozen=True)
class SensorSet:
    sensors: tuple
    u0: float = 0.0
    s0: float = 0.0

    def __post_init__(self):
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate sensor ids")
        if self.u0 < 0 or self.s0 < 0:
            raise InputError("sensing thresholds must be non-negative")

    def __len__(self):
        return len(self.sensors)

    def __iter__(self):
        return iter(self.sensors)

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.sensors]

    def by_id(self, sid: int) -> Sensor:
        for s in self.sensors:
            if s.id == sid:
                return s
        raise KeyError(sid)

    @property
    def keys(self) -> list[tuple[int, str]]:
        """Reading keys ``(sensor_id, component)`` in sensor order."""
        return [(s.id, c) for s in self.sensors for c in s.components]

    def threshold(self, component: str) -> float:
        return self.u0 if is_displacement(component) else self.s0


def resolve_sensors(mesh: Mesh, sensors: SensorSet) -> SensorSet:
    """Attach every sensor to its containing element.

    Displacement sensors also get barycentric weights over the element nodes.
    """
    comps = STRAIN_COMPONENTS[mesh.kind]
    out = []
    for s in sensors:
        if s.kind == "strain":
            bad = [c for c in s.components if c not in comps]
            if bad:
                raise InputError(f"sensor {s.id}: component(s) {bad} not available on {mesh.kind} meshes")
        elif mesh.kind == "tri3" and "uz" in s.components:
            raise InputError(f"sensor {s.id}: uz is constrained on plane-stress meshes")
        try:
            e, lam = locate_point(mesh, s.position)
        except InputError as exc:
            raise InputError(f"sensor {s.id}: {exc}") from None
        weights = tuple(float(w) for w in lam) if s.kind == "displacement" else None
        out.append(replace(s, element=e, weights=weights))
    return replace(sensors, sensors=tuple(out))


def reading_operator(mesh: Mesh, sensors: SensorSet) -> sp.csr_matrix:
    """Sparse operator mapping the flat displacement vector (3N) to all
    readings, one row per key in ``sensors.keys``.

    Displacement rows hold barycentric weights; strain rows hold the
    containing element's row of the strain-displacement matrix.
    """
    B = None
    comps = STRAIN_COMPONENTS[mesh.kind]
    dofs = element_dofs(mesh)
    rows, cols, vals = [], [], []
    r = 0
    for s in sensors:
        if not s.resolved:
            raise ValueError("sensors must be resolved against the mesh first")
        nodes = mesh.elements[s.element]
        for c in s.components:
            if s.kind == "displacement":
                axis = DISPLACEMENT_COMPONENTS.index(c)
                rows += [r] * len(nodes)
                cols += (3 * nodes + axis).tolist()
                vals += list(s.weights)
            else:
                if B is None:
                    B = strain_displacement(mesh)
                rows += [r] * dofs.shape[1]
                cols += dofs[s.element].tolist()
                vals += B[s.element, comps.index(c)].tolist()
            r += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, 3 * mesh.n_nodes))


def read_sensors(mesh: Mesh, u, strains, sensors: SensorSet) -> dict:
    """Readings ``{(sensor_id, component): value}`` from nodal displacements
    and element strains."""
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    comps = STRAIN_COMPONENTS[mesh.kind]
    out = {}
    for s in sensors:
        if s.kind == "displacement":
            nodes = mesh.elements[s.element]
            val = np.asarray(s.weights) @ u[nodes]
            for c in s.components:
                out[(s.id, c)] = float(val[DISPLACEMENT_COMPONENTS.index(c)])
        else:
            for c in s.components:
                out[(s.id, c)] = float(strains[s.element, comps.index(c)])
    return out


@dataclass
class MeasurementSet:
    values: dict = field(default_factory=dict)  # (case, sensor, component) -> value
    provenance: str = "file"

    @property
    def case_ids(self) -> list[int]:
        return sorted({k[0] for k in self.values})

    def for_case(self, case_id: int) -> dict:
        return {(s, c): v for (i, s, c), v in self.values.items() if i == case_id}

    def check(self, loads: list[LoadCase], sensors: SensorSet) -> None:
        cases = {c.id for c in loads}
        declared = set(sensors.keys)
        for i, s, c in self.values:
            if i not in cases:
                raise InputError(f"measurement references unknown load case {i}")
            if (s, c) not in declared:
                raise InputError(f"measurement references undeclared sensor component ({s}, {c})")

    def scaled(self, c: float) -> "MeasurementSet":
        return MeasurementSet({k: c * v for k, v in self.values.items()}, self.provenance)


def synthesize_measurements(
    mesh: Mesh,
    mat: MaterialParams,
    alpha_target,
    loads: list[LoadCase],
    sensors: SensorSet,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> MeasurementSet:
    """Forward-solve every load case with ``alpha_target`` and record the
    sensor readings.

    ``noise`` adds uniform relative perturbations in ``[-noise, noise]``; it
    is off by default.
    """
    if not all(s.resolved for s in sensors):
        sensors = resolve_sensors(mesh, sensors)
    system = assemble_global(mesh, mat, alpha_target)
    B = strain_displacement(mesh)
    values = {}
    for case in loads:
        u = solve_forward(system, case)
        readings = read_sensors(mesh, u, compute_strains(mesh, u, B), sensors)
        for (sid, comp), v in readings.items():
            values[(case.id, sid, comp)] = v
    if noise > 0.0:
        rng = rng if rng is not None else np.random.default_rng(0)
        keys = sorted(values)
        factors = 1.0 + rng.uniform(-noise, noise, size=len(keys))
        values = {k: values[k] * f for k, f in zip(keys, factors)}
    return MeasurementSet(values, provenance="synthetic")


# ---------------------------------------------------------------------------
# file formats


def parse_sensors(text: str, u0: float = 0.0, s0: float = 0.0) -> SensorSet:
    """Parse ``id kind x y z components`` lines, e.g. ``3 strain 1 2 0 exx,gxy``."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 6:
            raise InputError(f"line {lineno}: expected 'id kind x y z components'")
        try:
            sid = int(tok[0])
            pos = tuple(float(t) for t in tok[2:5])
        except ValueError:
            raise InputError(f"line {lineno}: malformed sensor line") from None
        try:
            out.append(Sensor(sid, tok[1], pos, tuple(tok[5].split(","))))
        except InputError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
    return SensorSet(tuple(out), u0=u0, s0=s0)


def format_sensors(sensors: SensorSet) -> str:
    lines = []
    for s in sensors:
        x, y, z = (float(v) for v in s.position)
        lines.append(f"{s.id} {s.kind} {x!r} {y!r} {z!r} {','.join(s.components)}")
    return "\n".join(lines) + "\n"


def parse_measurements(text: str, provenance: str = "file") -> MeasurementSet:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 4:
            raise InputError(f"line {lineno}: expected 'case sensor component value'")
        try:
            key = (int(tok[0]), int(tok[1]), tok[2])
            val = float(tok[3])
        except ValueError:
            raise InputError(f"line {lineno}: malformed measurement line") from None
        if key in values:
            raise InputError(f"line {lineno}: duplicate measurement {key}")
        values[key] = val
    return MeasurementSet(values, provenance)


def format_measurements(ms: MeasurementSet) -> str:
    order = {c: i for i, c in enumerate(DISPLACEMENT_COMPONENTS + ALL_STRAIN_COMPONENTS)}
    keys = sorted(ms.values, key=lambda k: (k[0], k[1], order[k[2]]))
    return "".join(f"{i} {s} {c} {float(ms.values[(i, s, c)])!r}\n" for i, s, c in keys)
