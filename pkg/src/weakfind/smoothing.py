"""Element/point averaging and gradient smoothers.

Element fields hold one value per element, point fields one per node. The
Laplacian-type smoothers solve a nodal system and return point fields; use
``point_to_element`` to bring them back to elements.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .mesh import Mesh

SMOOTHERS = ("none", "simple", "h1-laplacian", "pseudo-laplacian")


def element_to_point(mesh: Mesh, field) -> np.ndarray:
    """Volume-weighted average of the elements surrounding each node."""
    inc = mesh.incidence
    V = mesh.volumes
    return (inc @ (V * np.asarray(field, dtype=float))) / (inc @ V)


def point_to_element(mesh: Mesh, field) -> np.ndarray:
    """Arithmetic mean of each element's node values."""
    return np.asarray(field, dtype=float)[mesh.elements].mean(axis=1)


def smooth_simple(mesh: Mesh, field, iters: int = 1) -> np.ndarray:
    if iters < 1:
        raise ValueError("iters must be >= 1")
    f = np.asarray(field, dtype=float)
    for _ in range(iters):
        f = point_to_element(mesh, element_to_point(mesh, f))
    return f


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    k = mesh.nodes_per_element
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def consistent_mass(mesh: Mesh) -> sp.csr_matrix:
    """Exact P1 mass matrix: ``V / (k (k+1)) * (1 + delta_ij)`` per element."""
    k = mesh.nodes_per_element
    pattern = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return _scatter(mesh, mesh.volumes[:, None, None] * pattern)


def lumped_mass(mesh: Mesh) -> sp.dia_matrix:
    return sp.diags(np.asarray(consistent_mass(mesh).sum(axis=1)).ravel())


def diffusion_matrix(mesh: Mesh) -> sp.csr_matrix:
    g = mesh.grads
    return _scatter(mesh, mesh.volumes[:, None, None] * np.einsum("eid,ejd->eij", g, g))


def projection_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Element-to-node projection ``M_p1p0``: entry ``V_e / k`` where node p
    belongs to element e (the integral of node p's shape function over e)."""
    return (mesh.incidence @ sp.diags(mesh.volumes / mesh.nodes_per_element)).tocsr()


def _solve_spd(A, rhs):
    try:
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"smoothing system is singular: {exc}") from None
    if np.any(lu.U.diagonal() <= 0):
        raise SolverError("smoothing system is not positive definite")
    return lu, lu.solve(rhs)


def smooth_h1(mesh: Mesh, field, lam: float) -> np.ndarray:
    """Solve ``[M_c + lam K_d] a = M_p1p0 a0``; ``lam`` has units of length^2."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    A = consistent_mass(mesh) + lam * diffusion_matrix(mesh)
    return _solve_spd(A, projection_matrix(mesh) @ np.asarray(field, dtype=float))[1]


def smooth_pseudo_laplacian(mesh: Mesh, field, lam: float = 0.05) -> np.ndarray:
    """Solve ``[M_c + lam (M_l - M_c)] a = M_p1p0 a0``; ``lam`` is dimensionless."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    Mc = consistent_mass(mesh)
    A = Mc + lam * (lumped_mass(mesh) - Mc)
    return _solve_spd(A, projection_matrix(mesh) @ np.asarray(field, dtype=float))[1]


@dataclass(frozen=True)
class SmootherConfig:
    variant: str = "pseudo-laplacian"
    lam: float = 0.05
    iters: int = 1

    def __post_init__(self):
        if self.variant not in SMOOTHERS:
            raise ValueError(f"unknown smoother {self.variant!r}; choose from {SMOOTHERS}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")


class Smoother:
    """Element-field smoother with the nodal system factorized once."""

    def __init__(self, mesh: Mesh, config: SmootherConfig = SmootherConfig()):
        self.mesh = mesh
        self.config = config
        self._lu = None
        if config.variant in ("h1-laplacian", "pseudo-laplacian"):
            Mc = consistent_mass(mesh)
            if config.variant == "h1-laplacian":
                A = Mc + config.lam * diffusion_matrix(mesh)
            else:
                A = Mc + config.lam * (lumped_mass(mesh) - Mc)
            self._P = projection_matrix(mesh)
            self._lu, _ = _solve_spd(A, np.zeros(mesh.n_nodes))

    def to_points(self, field) -> np.ndarray:
        if self._lu is None:
            return element_to_point(self.mesh, field)
        return self._lu.solve(self._P @ np.asarray(field, dtype=float))

    def __call__(self, field) -> np.ndarray:
        v = self.config.variant
        if v == "none":
            return np.asarray(field, dtype=float).copy()
        if v == "simple":
            return smooth_simple(self.mesh, field, self.config.iters)
        return point_to_element(self.mesh, self.to_points(field))
