"""Which sensors notice a weakening of which element clusters.

Two routes to the reading changes:

* forward: one solve per (case, cluster) of ``K du = -dK u`` (optionally
  iterated to the exact weakened response);
* adjoint: one solve per (case, reading) of ``K v = -p`` where ``p`` is the
  reading row; the derivative with respect to element e is ``v^T K_e u``.

Both fill the same reading-by-cluster matrix. Sensed/not-sensed relations
are packed into 64-bit words per cluster, bit i standing for sensor i.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InputError
from .fem import (
    EPS_ALPHA,
    GlobalSystem,
    LoadCase,
    MaterialParams,
    assemble_global,
    element_dofs,
    element_stiffness,
)
from .mesh import ElementCluster, Mesh
from .sensing import SensorSet, reading_operator, resolve_sensors

WORD_BITS = 64
CODE_MAGIC = b"WSC1"


@dataclass(frozen=True)
class WeakeningScenario:
    cluster: ElementCluster
    delta_alpha: float = -0.5


def scenario_deltas(sys: GlobalSystem, scenario: WeakeningScenario, eps_alpha: float = EPS_ALPHA) -> np.ndarray:
    """Per-element strength change, clipped so the weakened field stays in
    ``[eps_alpha, 1]``."""
    d = np.zeros(sys.mesh.n_elements)
    ids = np.asarray(scenario.cluster.element_ids, dtype=np.int64)
    base = sys.alpha[ids]
    d[ids] = np.clip(base + scenario.delta_alpha, eps_alpha, 1.0) - base
    return d


def _delta_force(sys, Ke, dofs, delta, u):
    """``dK u`` as a full-length vector, touching only elements with delta != 0."""
    u = np.asarray(u, dtype=float).ravel()
    ids = np.flatnonzero(delta)
    f = np.zeros(3 * sys.mesh.n_nodes)
    if len(ids):
        local = delta[ids, None] * np.einsum("eij,ej->ei", Ke[ids], u[dofs[ids]])
        np.add.at(f, dofs[ids], local)
    return f


def _stiffness(sys, Ke, mat):
    if Ke is None:
        if mat is None:
            raise ValueError("pass either Ke or mat")
        Ke = element_stiffness(sys.mesh, mat)
    return Ke, element_dofs(sys.mesh)


def forward_delta_linear(sys, u, scenario, Ke=None, mat=None) -> np.ndarray:
    """Linearized response change ``-K^{-1} dK u`` (full-length vector)."""
    Ke, dofs = _stiffness(sys, Ke, mat)
    return sys.solve_full(-_delta_force(sys, Ke, dofs, scenario_deltas(sys, scenario), u))


def forward_delta_iterative(
    sys, u, scenario, k: int, Ke=None, mat=None, tol: float = 1e-12, return_iterations: bool = False
):
    """Fixed-point iteration ``K du_{j+1} = -dK (u + du_j)`` from ``du_0 = 0``.

    Stops after ``k`` iterations or once the update falls below ``tol``
    relative to ``|du|``. Raises DivergenceError if the update norm grows on
    two consecutive iterations.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    Ke, dofs = _stiffness(sys, Ke, mat)
    delta = scenario_deltas(sys, scenario)
    u = np.asarray(u, dtype=float).ravel()
    du = np.zeros_like(u)
    prev, grown = np.inf, 0
    it = 0
    for it in range(1, k + 1):
        new = sys.solve_full(-_delta_force(sys, Ke, dofs, delta, u + du))
        step = np.linalg.norm(new - du)
        du = new
        if step <= tol * max(np.linalg.norm(du), np.finfo(float).tiny):
            break
        grown = grown + 1 if step > prev else 0
        if grown >= 2:
            raise DivergenceError(f"iterative response update diverging at iteration {it} (|step| = {step:.3e})")
        prev = step
    return (du, it) if return_iterations else du


def adjoint_sensitivity(sys, u, row, Ke=None, mat=None) -> np.ndarray:
    """Derivative of one reading ``row @ u`` with respect to every element's
    strength factor: ``v^T K_e u`` with ``K v = -row``."""
    Ke, dofs = _stiffness(sys, Ke, mat)
    row = row.toarray().ravel() if hasattr(row, "toarray") else np.asarray(row, dtype=float).ravel()
    v = sys.solve_full(-row)
    u = np.asarray(u, dtype=float).ravel()
    return np.einsum("ei,eij,ej->e", v[dofs], Ke, u[dofs])


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def derivative_matrix(sys, u, P, Ke, method: str, threads: int = 1) -> np.ndarray:
    """Reading-by-element derivative matrix ``d(P u)/d alpha`` for one case."""
    dofs = element_dofs(sys.mesh)
    u = np.asarray(u, dtype=float).ravel()
    if method == "forward":
        def column(e):
            delta = np.zeros(sys.mesh.n_elements)
            delta[e] = 1.0
            return P @ sys.solve_full(-_delta_force(sys, Ke, dofs, delta, u))

        return np.column_stack(_map(column, range(sys.mesh.n_elements), threads))
    if method == "adjoint":
        return np.vstack(_map(lambda r: adjoint_sensitivity(sys, u, P[r], Ke=Ke), range(P.shape[0]), threads))
    raise ValueError(f"unknown method {method!r}")


@dataclass
class SensitivityMap:
    case_ids: list
    cluster_ids: list
    sensor_ids: list
    keys: list  # (sensor_id, component) per reading
    deltas: np.ndarray  # (cases, clusters, readings)
    sensed: np.ndarray  # (cases, clusters, sensors) bool
    method: str
    n_solves: int = 0

    def sensed_any(self) -> np.ndarray:
        """(clusters, sensors): sensed under at least one load case."""
        return self.sensed.any(axis=0)

    def sensor_counts(self) -> np.ndarray:
        """Number of sensors noticing each cluster."""
        return self.sensed_any().sum(axis=1)


def _classify(deltas, keys, sensors: SensorSet):
    sid_index = {sid: i for i, sid in enumerate(sensors.ids)}
    thr = np.array([sensors.threshold(c) for _, c in keys])
    hit = (np.abs(deltas) >= thr) & (deltas != 0.0)
    sensed = np.zeros(deltas.shape[:2] + (len(sid_index),), dtype=bool)
    for r, (sid, _) in enumerate(keys):
        sensed[:, :, sid_index[sid]] |= hit[:, :, r]
    return sensed


def build_sensitivity_map(
    mesh: Mesh,
    mat: MaterialParams,
    loads: list[LoadCase],
    sensors: SensorSet,
    clusters: list[ElementCluster],
    method: str = "adjoint",
    delta_alpha: float = -0.5,
    alpha=None,
    threads: int = 1,
) -> SensitivityMap:
    """Reading changes for every (load case, cluster) and the sensed relation.

    ``forward`` solves the linearized response to each cluster weakened by
    ``delta_alpha``; ``adjoint`` multiplies per-element derivatives by the
    same strength change. Both give the same deltas up to round-off.
    """
    if method not in ("forward", "adjoint"):
        raise InputError(f"unknown sensitivity method {method!r}")
    covered = np.concatenate([np.asarray(c.element_ids) for c in clusters]) if clusters else np.array([], int)
    if len(covered) != mesh.n_elements or len(np.unique(covered)) != mesh.n_elements:
        raise InputError("clusters must partition the elements")
    if not all(s.resolved for s in sensors):
        sensors = resolve_sensors(mesh, sensors)
    Ke = element_stiffness(mesh, mat)
    dofs = element_dofs(mesh)
    sys = assemble_global(mesh, mat, alpha, Ke=Ke)
    P = reading_operator(mesh, sensors)
    keys = sensors.keys
    deltas = np.zeros((len(loads), len(clusters), len(keys)))
    for ci, load in enumerate(loads):
        u = sys.solve_full(load.vector(mesh))
        if method == "forward":
            def response(cluster):
                delta = scenario_deltas(sys, WeakeningScenario(cluster, delta_alpha))
                return P @ sys.solve_full(-_delta_force(sys, Ke, dofs, delta, u))

            deltas[ci] = np.vstack(_map(response, clusters, threads)) if clusters else 0.0
        else:
            D = np.vstack(_map(lambda r: adjoint_sensitivity(sys, u, P[r], Ke=Ke), range(len(keys)), threads))
            for k, cluster in enumerate(clusters):
                delta = scenario_deltas(sys, WeakeningScenario(cluster, delta_alpha))
                ids = list(cluster.element_ids)
                deltas[ci, k] = D[:, ids] @ delta[ids]
    return SensitivityMap(
        case_ids=[c.id for c in loads],
        cluster_ids=[c.cluster_id for c in clusters],
        sensor_ids=sensors.ids,
        keys=keys,
        deltas=deltas,
        sensed=_classify(deltas, keys, sensors),
        method=method,
        n_solves=sys.n_solves,
    )


# ---------------------------------------------------------------------------
# packed sensing codes


@dataclass
class SensingCode:
    words: np.ndarray  # (clusters, ceil(sensors / 64)) uint64
    n_sensors: int

    @property
    def n_clusters(self) -> int:
        return self.words.shape[0]

    def covered(self, sensor_index: int) -> list[int]:
        """Cluster indices sensed by one sensor."""
        w, b = divmod(sensor_index, WORD_BITS)
        return np.flatnonzero((self.words[:, w] >> np.uint64(b)) & np.uint64(1)).tolist()


def encode_sensing(sensed) -> SensingCode:
    """Pack a (clusters, sensors) boolean array, or a SensitivityMap, into words."""
    if isinstance(sensed, SensitivityMap):
        sensed = sensed.sensed_any()
    sensed = np.asarray(sensed, dtype=bool)
    if sensed.ndim != 2 or sensed.shape[1] < 1:
        raise ValueError("need a (clusters, sensors) array with at least one sensor")
    n_c, m = sensed.shape
    n_words = -(-m // WORD_BITS)
    padded = np.zeros((n_c, n_words * WORD_BITS), dtype=np.uint64)
    padded[:, :m] = sensed
    shifts = np.arange(WORD_BITS, dtype=np.uint64)
    words = np.bitwise_or.reduce(padded.reshape(n_c, n_words, WORD_BITS) << shifts, axis=2)
    return SensingCode(words.astype(np.uint64), m)


def decode_sensing(code: SensingCode, cluster: int | None = None, sensor: int | None = None):
    """Unpack a code; with both indices given, return that single bit."""
    if cluster is not None and sensor is not None:
        w, b = divmod(sensor, WORD_BITS)
        return bool((int(code.words[cluster, w]) >> b) & 1)
    shifts = np.arange(WORD_BITS, dtype=np.uint64)
    bits = (code.words[:, :, None] >> shifts) & np.uint64(1)
    return bits.reshape(code.n_clusters, -1)[:, : code.n_sensors].astype(bool)


def code_to_bytes(code: SensingCode) -> bytes:
    head = CODE_MAGIC + struct.pack("<II", code.n_clusters, code.n_sensors)
    return head + code.words.astype("<u8").tobytes()


def code_from_bytes(data: bytes) -> SensingCode:
    if data[:4] != CODE_MAGIC:
        raise InputError("not a sensing code file (bad magic)")
    n_c, m = struct.unpack("<II", data[4:12])
    n_words = -(-m // WORD_BITS)
    body = data[12:]
    if len(body) != 8 * n_c * n_words:
        raise InputError("sensing code file is truncated or has trailing bytes")
    return SensingCode(np.frombuffer(body, dtype="<u8").reshape(n_c, n_words).astype(np.uint64), m)


def format_sensitivity_csv(smap: SensitivityMap) -> str:
    lines = ["case,cluster,sensor,component,delta"]
    for i, case in enumerate(smap.case_ids):
        for k, cl in enumerate(smap.cluster_ids):
            for r, (sid, comp) in enumerate(smap.keys):
                lines.append(f"{case},{cl},{sid},{comp},{float(smap.deltas[i, k, r])!r}")
    return "\n".join(lines) + "\n"
