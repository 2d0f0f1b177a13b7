"""Structured fixture meshes used by tests and experiment scripts.

These are mapped grids, not a general mesh generator: a rectangle or box,
and a plate with a centred hole built as an O-grid between the hole and the
outer rectangle (optionally extruded into tetrahedra with a conical hole).
"""
from __future__ import annotations

import numpy as np

from .fem import LoadCase
from .mesh import Mesh

# Freudenthal split of the unit cube: each tet is a monotone path 000 -> 111,
# so neighbouring cells agree on the diagonal of every shared face.
_KUHN = [
    ((0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)),
]


def _oriented(nodes, cells, dim):
    cells = np.array(cells, dtype=np.int64)
    x = nodes[cells][:, :, :dim]
    neg = np.linalg.det(x[:, 1:] - x[:, :1]) < 0
    cells[neg, -2:] = cells[neg, -1:-3:-1]
    return cells


def rectangle_mesh(nx, ny, length=1.0, width=1.0, thickness=1.0, clamp="left", mirror=True) -> Mesh:
    """Triangulated rectangle, 2*nx*ny elements.

    With ``mirror`` the quad diagonals in the upper half mirror those of the
    lower half, so the mesh is symmetric about ``y = width/2`` whenever ny is
    even.
    """
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, width, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    nid = np.arange(X.size).reshape(nx + 1, ny + 1)
    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = nid[i, j], nid[i + 1, j], nid[i + 1, j + 1], nid[i, j + 1]
            if mirror and j >= ny / 2:
                tris += [(a, b, d), (b, c, d)]
            else:
                tris += [(a, b, c), (a, c, d)]
    fixed = np.zeros((len(nodes), 3), dtype=bool)
    if clamp == "left":
        fixed[nid[0, :]] = True
    return Mesh(nodes, tris, "tri3", fixed, thickness=thickness)


def box_mesh(nx, ny, nz, size=(1.0, 1.0, 1.0), clamp="left") -> Mesh:
    """Box split into 6*nx*ny*nz tetrahedra."""
    xs, ys, zs = (np.linspace(0.0, s, n + 1) for s, n in zip(size, (nx, ny, nz)))
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    nid = np.arange(X.size).reshape(nx + 1, ny + 1, nz + 1)
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for path in _KUHN:
                    tets.append([nid[i + a, j + b, k + c] for a, b, c in path])
    fixed = np.zeros((len(nodes), 3), dtype=bool)
    if clamp == "left":
        fixed[nid[0].ravel()] = True
    return Mesh(nodes, _oriented(nodes, tets, 3), "tet4", fixed)


def _ring_points(n_short, length, width, center, radius, grading, n_radial):
    """Node coordinates (n_around, n_radial + 1, 2) of the O-grid."""
    cx, cy = center
    n_long = 2 * n_short
    # outer loop, counterclockwise from the bottom-right corner
    pts = []
    for s in range(n_short):
        pts.append((length, width * s / n_short))
    for s in range(n_long):
        pts.append((length - length * s / n_long, width))
    for s in range(n_short):
        pts.append((0.0, width - width * s / n_short))
    for s in range(n_long):
        pts.append((length * s / n_long, 0.0))
    outer = np.array(pts)
    n_around = len(outer)
    theta0 = np.arctan2(-cy, length - cx)
    theta = theta0 + 2 * np.pi * np.arange(n_around) / n_around
    inner = np.column_stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)])
    if grading == 1.0:
        t = np.linspace(0.0, 1.0, n_radial + 1)
    else:
        t = (grading ** np.arange(n_radial + 1) - 1.0) / (grading**n_radial - 1.0)
    return inner[:, None, :] * (1 - t)[None, :, None] + outer[:, None, :] * t[None, :, None], inner, outer


def plate_with_hole(
    n_short=8,
    n_radial=7,
    length=60.0,
    width=30.0,
    center=(30.0, 15.0),
    diameter=10.0,
    thickness=0.1,
    grading=1.2,
) -> Mesh:
    """Plate with a circular hole, tri3 plane stress, left edge clamped.

    The default settings give 48 x 7 quads split into 672 triangles.
    """
    ring, _, _ = _ring_points(n_short, length, width, center, diameter / 2, grading, n_radial)
    n_around = ring.shape[0]
    nodes = np.column_stack([ring.reshape(-1, 2), np.zeros(ring.shape[0] * ring.shape[1])])
    nid = np.arange(n_around * (n_radial + 1)).reshape(n_around, n_radial + 1)
    tris = []
    for i in range(n_around):
        ip = (i + 1) % n_around
        for j in range(n_radial):
            a, b, c, d = nid[i, j], nid[ip, j], nid[ip, j + 1], nid[i, j + 1]
            tris += [(a, d, c), (a, c, b)]
    fixed = np.zeros((len(nodes), 3), dtype=bool)
    fixed[np.isclose(nodes[:, 0], 0.0)] = True
    return Mesh(nodes, tris, "tri3", fixed, thickness=thickness)


def thick_plate_with_conical_hole(
    n_short=8,
    n_radial=7,
    n_layers=2,
    length=60.0,
    width=30.0,
    depth=10.0,
    center=(30.0, 15.0),
    d_top=5.0,
    d_bottom=15.0,
    grading=1.2,
) -> Mesh:
    """Thick plate with a conical hole, tet4, face x = 0 clamped.

    The hole diameter varies linearly from ``d_top`` at z = 0 to
    ``d_bottom`` at z = depth.
    """
    layers = []
    for k in range(n_layers + 1):
        z = depth * k / n_layers
        radius = 0.5 * (d_top + (d_bottom - d_top) * z / depth)
        ring, _, _ = _ring_points(n_short, length, width, center, radius, grading, n_radial)
        layers.append(np.concatenate([ring, np.full(ring.shape[:2] + (1,), z)], axis=2))
    grid = np.stack(layers, axis=2)  # (around, radial, layer, 3)
    n_around = grid.shape[0]
    nid = np.arange(grid[..., 0].size).reshape(grid.shape[:3])
    nodes = grid.reshape(-1, 3)
    tets = []
    for i in range(n_around):
        for j in range(n_radial):
            for k in range(n_layers):
                for path in _KUHN:
                    # periodic in the circumferential index
                    tets.append([nid[(i + a) % n_around, j + b, k + c] for a, b, c in path])
    fixed = np.zeros((len(nodes), 3), dtype=bool)
    fixed[np.isclose(nodes[:, 0], 0.0)] = True
    return Mesh(nodes, _oriented(nodes, tets, 3), "tet4", fixed)


def face_load(mesh: Mesh, axis: int, coordinate: float, force, case_id: int = 1) -> LoadCase:
    """Total force ``force`` (3-vector) spread over the boundary on the plane
    ``x[axis] == coordinate`` in proportion to tributary edge length / face area."""
    force = np.asarray(force, dtype=float)
    faces = mesh.boundary_faces
    on_plane = np.all(np.isclose(mesh.nodes[faces][:, :, axis], coordinate), axis=1)
    faces = faces[on_plane]
    if len(faces) == 0:
        raise ValueError(f"no boundary faces on plane x[{axis}] = {coordinate}")
    x = mesh.nodes[faces]
    if mesh.kind == "tri3":
        measure = np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
    else:
        measure = 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
    share = np.zeros(mesh.n_nodes)
    np.add.at(share, faces, measure[:, None] / faces.shape[1])
    share /= share.sum()
    forces = {}
    for node in np.flatnonzero(share):
        for ax in range(3):
            if force[ax] != 0.0:
                forces[(int(node), ax)] = float(share[node] * force[ax])
    return LoadCase(case_id, forces)


def patch_alpha(mesh: Mesh, center, radius: float, value: float = 0.5) -> np.ndarray:
    """Strength field equal to ``value`` on elements whose centroid lies
    within ``radius`` of ``center`` and 1 elsewhere."""
    c = np.zeros(3)
    c[: len(center)] = center
    alpha = np.ones(mesh.n_elements)
    alpha[np.linalg.norm(mesh.centroids - c, axis=1) <= radius] = value
    return alpha


def dense_sensors(mesh: Mesh, strain_offset: int = 100000):
    """Displacement sensors at every node with a free dof plus strain sensors
    at every element centroid (all in-plane components for tri3)."""
    from .fem import STRAIN_COMPONENTS
    from .sensing import Sensor, SensorSet

    disp_axes = ("ux", "uy") if mesh.kind == "tri3" else ("ux", "uy", "uz")
    sensors = []
    for n in np.flatnonzero(~mesh.fixed.all(axis=1)):
        sensors.append(Sensor(int(n) + 1, "displacement", tuple(mesh.nodes[n].tolist()), disp_axes))
    comps = STRAIN_COMPONENTS[mesh.kind]
    for e, c in enumerate(mesh.centroids):
        sensors.append(Sensor(strain_offset + e + 1, "strain", tuple(c.tolist()), comps))
    return SensorSet(tuple(sensors))


def grid_sensors(xs, ys, z=0.0, kind="displacement", components=("ux", "uy"), first_id=1):
    from .sensing import Sensor, SensorSet

    pts = [(float(x), float(y), float(z)) for y in ys for x in xs]
    return SensorSet(tuple(Sensor(first_id + i, kind, p, tuple(components)) for i, p in enumerate(pts)))
