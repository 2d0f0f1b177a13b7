"""Simplex meshes (tri3 plane stress, tet4), the mesh file format, point
location and advancing-front element clustering.

Ids are 0-based in memory and 1-based in files.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import MeshError

log = logging.getLogger(__name__)

NODES_PER_ELEMENT = {"tri3": 3, "tet4": 4}
DEFAULT_THICKNESS = 0.1


@dataclass(eq=False)
class Mesh:
    """Uniform simplex mesh.

    ``fixed`` is an (N, 3) boolean mask of displacement dofs constrained to
    zero. For tri3 meshes the z dofs are always treated as constrained.
    Elements with negative orientation are repaired on construction by
    swapping their last two nodes; the count is kept in ``n_reoriented``.
    """

    nodes: np.ndarray
    elements: np.ndarray
    kind: str
    fixed: np.ndarray
    thickness: float = DEFAULT_THICKNESS
    n_reoriented: int = field(default=0, init=False)

    def __post_init__(self):
        if self.kind not in NODES_PER_ELEMENT:
            raise MeshError(f"unknown element kind {self.kind!r}")
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, NODES_PER_ELEMENT[self.kind])
        self.fixed = np.asarray(self.fixed, dtype=bool).reshape(-1, 3).copy()
        n = len(self.nodes)
        if len(self.elements) == 0:
            raise MeshError("mesh has no elements")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinates")
        if self.fixed.shape[0] != n:
            raise MeshError("fixed-dof mask does not match node count")
        if self.elements.min() < 0 or self.elements.max() >= n:
            raise MeshError("element references a node that does not exist")
        used = np.zeros(n, dtype=bool)
        used[self.elements.ravel()] = True
        if not used.all():
            raise MeshError(f"{int((~used).sum())} node(s) not referenced by any element")
        if self.kind == "tri3":
            if self.thickness <= 0:
                raise MeshError("thickness must be positive")
            self.fixed[:, 2] = True
        if not self.fixed[:, : self.dim].any():
            raise MeshError("no fixed dofs: the structure has rigid-body modes")
        self._normalize_orientation()

    def _normalize_orientation(self):
        vol = self._signed_measure(self.elements)
        tol = 1e-14 * self.scale**self.dim
        bad = np.abs(vol) <= tol
        if bad.any():
            raise MeshError(f"degenerate element(s) {np.flatnonzero(bad)[:10].tolist()}")
        neg = vol < 0
        if neg.any():
            self.elements[neg, -2:] = self.elements[neg, -1:-3:-1]
            self.n_reoriented = int(neg.sum())
            log.warning("reoriented %d inverted element(s)", self.n_reoriented)

    def _signed_measure(self, elements):
        x = self.nodes[elements][:, :, : self.dim]
        edges = x[:, 1:] - x[:, :1]
        return np.linalg.det(edges) / (2.0 if self.dim == 2 else 6.0)

    @property
    def dim(self) -> int:
        return 2 if self.kind == "tri3" else 3

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def nodes_per_element(self) -> int:
        return self.elements.shape[1]

    @cached_property
    def scale(self) -> float:
        """Bounding-box diagonal."""
        return float(np.linalg.norm(self.nodes.max(0) - self.nodes.min(0)))

    @cached_property
    def volumes(self) -> np.ndarray:
        v = self._signed_measure(self.elements)
        return v * self.thickness if self.kind == "tri3" else v

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def _affine(self) -> np.ndarray:
        # rows of inv([1, x_a]) give barycentric coordinates as affine functions
        x = self.nodes[self.elements][:, :, : self.dim]
        ones = np.ones(x.shape[:2] + (1,))
        return np.linalg.inv(np.concatenate([ones, x], axis=2)).transpose(0, 2, 1)

    @cached_property
    def grads(self) -> np.ndarray:
        """Shape-function gradients, shape (E, nodes_per_element, dim)."""
        return np.ascontiguousarray(self._affine[:, :, 1:])

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Node-by-element 0/1 matrix."""
        e = np.repeat(np.arange(self.n_elements), self.nodes_per_element)
        data = np.ones(e.size)
        return sp.csr_matrix((data, (self.elements.ravel(), e)), shape=(self.n_nodes, self.n_elements))

    @cached_property
    def node_to_elements(self) -> list[np.ndarray]:
        inc = self.incidence
        return [inc.indices[inc.indptr[i] : inc.indptr[i + 1]] for i in range(self.n_nodes)]

    @cached_property
    def element_neighbours(self) -> list[list[int]]:
        """Elements sharing a face (tet4) or an edge (tri3), ascending ids."""
        k = self.nodes_per_element
        faces: dict[tuple, list[int]] = {}
        for e, conn in enumerate(self.elements.tolist()):
            for skip in range(k):
                key = tuple(sorted(conn[:skip] + conn[skip + 1 :]))
                faces.setdefault(key, []).append(e)
        nbrs: list[set] = [set() for _ in range(self.n_elements)]
        for owners in faces.values():
            for a in owners:
                nbrs[a].update(b for b in owners if b != a)
        return [sorted(s) for s in nbrs]

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        """Faces (tet4) or edges (tri3) owned by exactly one element."""
        k = self.nodes_per_element
        count: dict[tuple, int] = {}
        oriented: dict[tuple, tuple] = {}
        for conn in self.elements.tolist():
            for skip in range(k):
                f = tuple(conn[:skip] + conn[skip + 1 :])
                key = tuple(sorted(f))
                count[key] = count.get(key, 0) + 1
                oriented[key] = f
        return np.array([oriented[key] for key, c in count.items() if c == 1], dtype=np.int64)

    def barycentric(self, x) -> np.ndarray:
        """Barycentric coordinates of point ``x`` with respect to every element."""
        x = np.asarray(x, dtype=float)[: self.dim]
        return self._affine[:, :, 0] + self._affine[:, :, 1:] @ x


def locate_point(mesh: Mesh, x, tol: float | None = None) -> tuple[int, np.ndarray]:
    """Return ``(element, barycentric)`` for the lowest-id element containing ``x``.

    Containment allows a signed distance of ``-tol`` outside an element face,
    with ``tol`` defaulting to 1e-8 times the bounding-box diagonal. For tri3
    meshes only the x and y coordinates are used.
    """
    if tol is None:
        tol = 1e-8 * mesh.scale
    lam = mesh.barycentric(x)
    # lambda_i / |grad lambda_i| is the signed distance to the opposite face
    dist = lam / np.linalg.norm(mesh.grads, axis=2)
    inside = np.flatnonzero(dist.min(axis=1) >= -tol)
    if inside.size == 0:
        raise MeshError(f"point {np.asarray(x).tolist()} lies outside the mesh")
    e = int(inside[0])
    return e, lam[e]


def cluster_elements(mesh: Mesh, min_elements: int | None = None, min_radius: float | None = None) -> list["ElementCluster"]:
    """Partition elements into connected clusters by advancing-front growth.

    Seeds are the lowest unclaimed element id. With ``min_elements`` a cluster
    stops growing once it holds that many elements; with ``min_radius`` it
    absorbs adjacent elements whose centroid lies within that distance of the
    seed centroid.
    """
    if (min_elements is None) == (min_radius is None):
        raise ValueError("give exactly one of min_elements, min_radius")
    if min_elements is not None and min_elements < 1:
        raise ValueError("min_elements must be >= 1")
    if min_radius is not None and min_radius <= 0:
        raise ValueError("min_radius must be > 0")

    nbrs = mesh.element_neighbours
    cent = mesh.centroids
    owner = np.full(mesh.n_elements, -1, dtype=np.int64)
    clusters = []
    for seed in range(mesh.n_elements):
        if owner[seed] >= 0:
            continue
        cid = len(clusters)
        owner[seed] = cid
        members = [seed]
        queue = deque(n for n in nbrs[seed] if owner[n] < 0)
        while queue:
            if min_elements is not None and len(members) >= min_elements:
                break
            e = queue.popleft()
            if owner[e] >= 0:
                continue
            if min_radius is not None and np.linalg.norm(cent[e] - cent[seed]) > min_radius:
                continue
            owner[e] = cid
            members.append(e)
            queue.extend(n for n in nbrs[e] if owner[n] < 0)
        clusters.append(ElementCluster(cid, tuple(sorted(members)), seed))
    return clusters


@dataclass(frozen=True)
class ElementCluster:
    cluster_id: int
    element_ids: tuple[int, ...]
    seed_element: int


def cluster_labels(clusters: list[ElementCluster], n_elements: int) -> np.ndarray:
    labels = np.full(n_elements, -1, dtype=np.int64)
    for c in clusters:
        labels[list(c.element_ids)] = c.cluster_id
    return labels


# ---------------------------------------------------------------------------
# file format


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _expect(it, keyword):
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise MeshError(f"unexpected end of file, expected '{keyword}' section") from None
    if tok[0] != keyword:
        raise MeshError(f"line {lineno}: expected '{keyword}', got {tok[0]!r}")
    return lineno, tok


def _int(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise MeshError(f"line {lineno}: expected an integer, got {tok!r}") from None


def _float(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise MeshError(f"line {lineno}: expected a number, got {tok!r}") from None


def parse_mesh(text: str, thickness: float = DEFAULT_THICKNESS) -> Mesh:
    """Parse the plain-text mesh format.

    ::

        nodes N
        id x y z            (N lines)
        elements E kind     (kind: tri3 | tet4)
        id n1 n2 n3 [n4]    (E lines)
        fixed F
        node mx my mz       (F lines, 1 = constrained)
    """
    it = _content_lines(text)
    lineno, tok = _expect(it, "nodes")
    if len(tok) != 2:
        raise MeshError(f"line {lineno}: expected 'nodes N'")
    n = _int(tok[1], lineno)

    node_index: dict[int, int] = {}
    coords = np.empty((n, 3))
    for i in range(n):
        lineno, tok = next(it, (None, None))
        if tok is None:
            raise MeshError("unexpected end of file in nodes section")
        if len(tok) != 4:
            raise MeshError(f"line {lineno}: expected 'id x y z'")
        nid = _int(tok[0], lineno)
        if nid in node_index:
            raise MeshError(f"line {lineno}: duplicate node id {nid}")
        node_index[nid] = i
        coords[i] = [_float(t, lineno) for t in tok[1:]]

    lineno, tok = _expect(it, "elements")
    if len(tok) != 3 or tok[2] not in NODES_PER_ELEMENT:
        raise MeshError(f"line {lineno}: expected 'elements E tri3|tet4'")
    n_el, kind = _int(tok[1], lineno), tok[2]
    k = NODES_PER_ELEMENT[kind]
    seen: set[int] = set()
    conn = np.empty((n_el, k), dtype=np.int64)
    for i in range(n_el):
        lineno, tok = next(it, (None, None))
        if tok is None:
            raise MeshError("unexpected end of file in elements section")
        if len(tok) != k + 1:
            raise MeshError(f"line {lineno}: expected element id and {k} node ids")
        eid = _int(tok[0], lineno)
        if eid in seen:
            raise MeshError(f"line {lineno}: duplicate element id {eid}")
        seen.add(eid)
        for a, t in enumerate(tok[1:]):
            nid = _int(t, lineno)
            if nid not in node_index:
                raise MeshError(f"line {lineno}: element {eid} references unknown node {nid}")
            conn[i, a] = node_index[nid]

    lineno, tok = _expect(it, "fixed")
    if len(tok) != 2:
        raise MeshError(f"line {lineno}: expected 'fixed F'")
    fixed = np.zeros((n, 3), dtype=bool)
    for _ in range(_int(tok[1], lineno)):
        lineno, tok = next(it, (None, None))
        if tok is None:
            raise MeshError("unexpected end of file in fixed section")
        if len(tok) != 4 or any(t not in ("0", "1") for t in tok[1:]):
            raise MeshError(f"line {lineno}: expected 'node mx my mz' with m in {{0,1}}")
        nid = _int(tok[0], lineno)
        if nid not in node_index:
            raise MeshError(f"line {lineno}: fixed entry references unknown node {nid}")
        fixed[node_index[nid]] |= np.array([t == "1" for t in tok[1:]])

    extra = next(it, None)
    if extra is not None:
        raise MeshError(f"line {extra[0]}: unexpected trailing content")
    return Mesh(coords, conn, kind, fixed, thickness=thickness)


def format_mesh(mesh: Mesh) -> str:
    out = [f"nodes {mesh.n_nodes}"]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.nodes.tolist())]
    out.append(f"elements {mesh.n_elements} {mesh.kind}")
    out += [f"{i + 1} " + " ".join(str(n + 1) for n in conn) for i, conn in enumerate(mesh.elements.tolist())]
    rows = np.flatnonzero(mesh.fixed.any(axis=1))
    out.append(f"fixed {rows.size}")
    out += [f"{i + 1} " + " ".join(str(int(m)) for m in mesh.fixed[i]) for i in rows]
    return "\n".join(out) + "\n"


def read_mesh(path, thickness: float = DEFAULT_THICKNESS) -> Mesh:
    with open(path) as fh:
        return parse_mesh(fh.read(), thickness=thickness)


def write_mesh(path, mesh: Mesh) -> None:
    with open(path, "w") as fh:
        fh.write(format_mesh(mesh))
