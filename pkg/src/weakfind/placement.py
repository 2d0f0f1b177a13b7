"""Greedy max-coverage for sensor and load selection.

Sensors cover the clusters whose weakening they notice; loads cover the
elements they strain beyond ``s0``. The greedy pass repeatedly picks the
candidate adding the most uncovered weight, lowest id first on ties.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .fem import LoadCase, MaterialParams, assemble_global, compute_strains, strain_displacement
from .mesh import ElementCluster, Mesh, cluster_labels
from .sensitivity import SensingCode, decode_sensing


@dataclass
class CoverageInstance:
    universe: frozenset
    candidates: dict  # candidate id -> frozenset of covered items
    weights: dict | None = None  # item -> weight, default 1

    def __post_init__(self):
        self.universe = frozenset(self.universe)
        self.candidates = {k: frozenset(v) for k, v in self.candidates.items()}
        for cid, cov in self.candidates.items():
            if not cov <= self.universe:
                raise InputError(f"candidate {cid} covers items outside the universe")

    def weight(self, items) -> float:
        if self.weights is None:
            return len(items)
        return float(sum(self.weights[i] for i in items))

    @property
    def total(self) -> float:
        return self.weight(self.universe)

    @classmethod
    def from_code(cls, code: SensingCode, sensor_ids, cluster_ids=None) -> "CoverageInstance":
        bits = decode_sensing(code)
        cluster_ids = list(range(code.n_clusters)) if cluster_ids is None else list(cluster_ids)
        cands = {sid: {cluster_ids[c] for c in np.flatnonzero(bits[:, j])} for j, sid in enumerate(sensor_ids)}
        return cls(frozenset(cluster_ids), cands)


@dataclass
class SelectionResult:
    picks: list = field(default_factory=list)
    new_coverage: list = field(default_factory=list)
    residual: frozenset = frozenset()
    total: float = 0.0

    @property
    def covered(self) -> float:
        return float(sum(self.new_coverage))


def _best(instance, remaining, exclude):
    best, gain = None, 0.0
    for cid in sorted(instance.candidates):
        if cid in exclude:
            continue
        g = instance.weight(instance.candidates[cid] & remaining)
        if g > gain:
            best, gain = cid, g
    return best, gain


def greedy_select_sensors(instance: CoverageInstance) -> SelectionResult:
    """Classic greedy max-coverage; stops when no candidate adds coverage."""
    remaining = set(instance.universe)
    res = SelectionResult(total=instance.total)
    while remaining:
        cid, gain = _best(instance, remaining, set(res.picks))
        if cid is None:
            break
        res.picks.append(cid)
        res.new_coverage.append(gain)
        remaining -= instance.candidates[cid]
    res.residual = frozenset(remaining)
    return res


@dataclass(frozen=True)
class Neighbourhood:
    """Elements around a picked sensor: the ``n`` nearest ("elements"), the
    nearest ones up to total volume ``v`` ("volume"), or all within radius
    ``r`` ("radius"); distances are measured to element centroids."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("elements", "volume", "radius"):
            raise InputError(f"unknown neighbourhood kind {self.kind!r}")
        if not self.value > 0:
            raise InputError("neighbourhood size must be positive")

    def elements(self, mesh: Mesh, position) -> np.ndarray:
        d = np.linalg.norm(mesh.centroids - np.asarray(position, dtype=float), axis=1)
        order = np.lexsort((np.arange(len(d)), d))
        if self.kind == "elements":
            return order[: int(np.ceil(self.value))]
        if self.kind == "volume":
            cum = np.cumsum(mesh.volumes[order])
            n = int(np.searchsorted(cum, self.value * (1 - 1e-12))) + 1
            return order[:n]
        return np.flatnonzero(d <= self.value)


def greedy_select_sensors_with_regions(
    instance: CoverageInstance,
    mesh: Mesh,
    clusters: list[ElementCluster],
    positions: dict,
    policy: Neighbourhood,
) -> SelectionResult:
    """Greedy selection that, after each pick, retires only the sensed
    clusters lying in the pick's neighbourhood.

    A candidate's score is the weight of the clusters it would retire, so a
    single sensor noticing the whole structure no longer ends the search.
    """
    if not isinstance(policy, Neighbourhood):
        raise InputError("neighbourhood policy required")
    labels = cluster_labels(clusters, mesh.n_elements)
    near = {}
    for cid in instance.candidates:
        if cid not in positions:
            raise InputError(f"no position for candidate sensor {cid}")
        near[cid] = frozenset(int(c) for c in np.unique(labels[policy.elements(mesh, positions[cid])]))
    removal = {cid: instance.candidates[cid] & near[cid] for cid in instance.candidates}
    scoring = CoverageInstance(instance.universe, removal, instance.weights)
    return greedy_select_sensors(scoring)


def load_coverage(mesh: Mesh, mat: MaterialParams, loads: list[LoadCase], s0: float, threads: int = 1) -> dict:
    """Elements strained to at least ``s0`` (any component) by each load,
    computed on the pristine structure."""
    sys = assemble_global(mesh, mat)
    B = strain_displacement(mesh)

    def covered(load):
        eps = compute_strains(mesh, sys.solve_full(load.vector(mesh)), B)
        return frozenset(np.flatnonzero((np.abs(eps) >= s0).any(axis=1) & (np.abs(eps) > 0).any(axis=1)).tolist())

    if threads > 1 and len(loads) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sets = list(pool.map(covered, loads))
    else:
        sets = [covered(ld) for ld in loads]
    return {ld.id: s for ld, s in zip(loads, sets)}


def greedy_select_loads(
    mesh: Mesh, mat: MaterialParams, loads: list[LoadCase], s0: float, measure: str = "volume", threads: int = 1
) -> SelectionResult:
    """Greedy load selection maximizing the strained volume (or element count)."""
    if measure not in ("volume", "count"):
        raise InputError(f"unknown coverage measure {measure!r}")
    ids = [ld.id for ld in loads]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate load case ids")
    weights = dict(enumerate(mesh.volumes.tolist())) if measure == "volume" else None
    inst = CoverageInstance(frozenset(range(mesh.n_elements)), load_coverage(mesh, mat, loads, s0, threads), weights)
    return greedy_select_sensors(inst)


def format_selection_report(result: SelectionResult) -> str:
    lines = ["rank,candidate,new_coverage,cumulative_coverage_fraction"]
    cum = 0.0
    for rank, (cid, gain) in enumerate(zip(result.picks, result.new_coverage), start=1):
        cum += gain
        frac = cum / result.total if result.total > 0 else 0.0
        gain_s = str(int(gain)) if float(gain).is_integer() else repr(float(gain))
        lines.append(f"{rank},{cid},{gain_s},{frac!r}")
    return "\n".join(lines) + "\n"
