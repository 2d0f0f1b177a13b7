"""Linear elasticity on simplex meshes: element matrices, strength-scaled
assembly, Dirichlet elimination and the forward/adjoint solves."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, SolverError
from .mesh import Mesh

log = logging.getLogger(__name__)

TOL_SOLVE = 1e-10
EPS_ALPHA = 0.01

STRAIN_COMPONENTS = {
    "tri3": ("exx", "eyy", "gxy"),
    "tet4": ("exx", "eyy", "ezz", "gxy", "gyz", "gzx"),
}


@dataclass(frozen=True)
class MaterialParams:
    young_modulus: float = 2e12
    poisson: float = 0.3
    density: float = 7.8

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise InputError("Young's modulus must be positive")
        if not 0 <= self.poisson < 0.5:
            raise InputError("Poisson ratio must lie in [0, 0.5)")


def constitutive_matrix(mat: MaterialParams, kind: str) -> np.ndarray:
    E, nu = mat.young_modulus, mat.poisson
    if kind == "tri3":
        return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[:3, :3] += 2 * mu * np.eye(3)
    C[3:, 3:] = mu * np.eye(3)
    return C


def element_dofs(mesh: Mesh) -> np.ndarray:
    """Global dof indices per element, node-major; dofs are 3*node + axis."""
    axes = np.arange(mesh.dim)
    return (3 * mesh.elements[:, :, None] + axes).reshape(mesh.n_elements, -1)


def strain_displacement(mesh: Mesh) -> np.ndarray:
    """B matrices, shape (E, n_strain, nodes_per_element * dim).

    Strains use engineering shear: (exx, eyy, gxy) for tri3 and
    (exx, eyy, ezz, gxy, gyz, gzx) for tet4.
    """
    g = mesh.grads
    E, k, d = g.shape
    if d == 2:
        B = np.zeros((E, 3, k, 2))
        B[:, 0, :, 0] = g[:, :, 0]
        B[:, 1, :, 1] = g[:, :, 1]
        B[:, 2, :, 0] = g[:, :, 1]
        B[:, 2, :, 1] = g[:, :, 0]
    else:
        B = np.zeros((E, 6, k, 3))
        for c in range(3):
            B[:, c, :, c] = g[:, :, c]
        for row, (p, q) in zip((3, 4, 5), ((0, 1), (1, 2), (2, 0))):
            B[:, row, :, p] = g[:, :, q]
            B[:, row, :, q] = g[:, :, p]
    return B.reshape(E, B.shape[1], k * d)


def element_stiffness(mesh: Mesh, mat: MaterialParams, element: int | None = None) -> np.ndarray:
    """Unscaled element stiffness ``V_e B^T C B``.

    Returns one matrix when ``element`` is given, otherwise the stack for all
    elements.
    """
    B = strain_displacement(mesh)
    C = constitutive_matrix(mat, mesh.kind)
    if element is not None:
        B = B[element : element + 1]
        V = mesh.volumes[element : element + 1]
    else:
        V = mesh.volumes
    Ke = np.einsum("eji,jk,ekl->eil", B, C, B) * V[:, None, None]
    return Ke[0] if element is not None else Ke


@dataclass(frozen=True)
class LoadCase:
    id: int
    forces: dict = field(default_factory=dict)  # (node, axis) -> force

    def vector(self, mesh: Mesh) -> np.ndarray:
        f = np.zeros(3 * mesh.n_nodes)
        ignored = 0
        for (node, axis), value in self.forces.items():
            if not 0 <= node < mesh.n_nodes or axis not in (0, 1, 2):
                raise InputError(f"load case {self.id}: force on nonexistent dof ({node}, {axis})")
            if mesh.fixed[node, axis]:
                ignored += value != 0.0
                continue
            f[3 * node + axis] += value
        if ignored:
            log.warning("load case %d: ignored %d force(s) on constrained dofs", self.id, ignored)
        return f

    def scaled(self, c: float) -> "LoadCase":
        return LoadCase(self.id, {k: c * v for k, v in self.forces.items()})


class GlobalSystem:
    """``K = sum_e alpha_e K_e`` reduced to the free dofs, with its factorization.

    The factorization is immutable after construction, so solves from several
    threads may share it. ``n_solves`` counts every linear solve.
    """

    def __init__(self, mesh: Mesh, K: sp.spmatrix, solver: str = "direct", alpha=None):
        self.mesh = mesh
        self.alpha = np.ones(mesh.n_elements) if alpha is None else np.asarray(alpha, dtype=float)
        self.free = ~mesh.fixed.ravel()
        self.free_index = np.flatnonzero(self.free)
        K = K.tocsr()
        self.K = K[self.free_index][:, self.free_index].tocsc()
        self.K_fc = K[self.free_index][:, np.flatnonzero(~self.free)].tocsr()
        self.solver = solver
        self.n_solves = 0
        self._lock = threading.Lock()
        if solver == "direct":
            self._factorize()
        elif solver == "cg":
            d = self.K.diagonal()
            if np.any(d <= 0):
                raise SolverError("stiffness matrix has non-positive diagonal entries")
            self._precond = spla.LinearOperator(self.K.shape, matvec=lambda x: x / d)
        else:
            raise ValueError(f"unknown solver {solver!r}")

    @property
    def n_free(self) -> int:
        return self.K.shape[0]

    def _factorize(self):
        # symmetric ordering without row pivoting: U's diagonal holds the LDL^T
        # pivots, so positive definiteness can be read off directly
        try:
            lu = spla.splu(
                self.K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
            )
        except RuntimeError as exc:
            raise SolverError(f"stiffness matrix is singular: {exc}") from None
        piv = lu.U.diagonal()
        if np.any(lu.perm_r != lu.perm_c):
            raise SolverError("factorization needed row pivoting; matrix is not positive definite")
        if np.any(piv <= 0):
            raise SolverError(f"stiffness matrix is not positive definite ({int((piv <= 0).sum())} non-positive pivots)")
        ratio = piv.min() / piv.max()
        if ratio < 1e-14:
            weak = self.free_index[lu.perm_c[np.argmin(piv)]]
            raise SolverError(
                f"stiffness matrix is numerically singular (pivot ratio {ratio:.2e}); "
                f"near-null-space dof at node {weak // 3} axis {weak % 3}: check constraints"
            )
        self._lu = lu

    def solve_reduced(self, rhs: np.ndarray) -> np.ndarray:
        with self._lock:
            self.n_solves += 1
        norm = np.linalg.norm(rhs)
        if norm == 0.0:
            return np.zeros_like(rhs)
        if self.solver == "direct":
            x = self._lu.solve(rhs)
            for _ in range(2):
                res = rhs - self.K @ x
                if np.linalg.norm(res) <= TOL_SOLVE * norm:
                    break
                x += self._lu.solve(res)
        else:
            x, info = spla.cg(self.K, rhs, rtol=TOL_SOLVE * 1e-2, atol=0.0, M=self._precond, maxiter=20 * self.n_free)
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
        res = np.linalg.norm(rhs - self.K @ x)
        if not res <= TOL_SOLVE * norm:
            raise SolverError(f"solve residual {res / norm:.2e} exceeds tolerance {TOL_SOLVE:.0e}")
        return x

    def solve_full(self, rhs: np.ndarray) -> np.ndarray:
        """Solve with a full-length (3N) right-hand side; constrained entries are
        ignored and the result is zero there."""
        rhs = np.asarray(rhs, dtype=float).ravel()
        u = np.zeros(3 * self.mesh.n_nodes)
        u[self.free_index] = self.solve_reduced(rhs[self.free_index])
        return u


def assemble_stiffness(mesh: Mesh, Ke: np.ndarray, alpha=None) -> sp.csr_matrix:
    dofs = element_dofs(mesh)
    nd = dofs.shape[1]
    rows = np.repeat(dofs, nd, axis=1).ravel()
    cols = np.tile(dofs, (1, nd)).ravel()
    data = Ke if alpha is None else np.asarray(alpha, dtype=float)[:, None, None] * Ke
    n = 3 * mesh.n_nodes
    return sp.csr_matrix((data.ravel(), (rows, cols)), shape=(n, n))


def check_alpha(alpha, n_elements: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (n_elements,):
        raise InputError(f"strength field has shape {alpha.shape}, expected ({n_elements},)")
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise InputError("strength factors must be finite and positive")
    return alpha


def assemble_global(mesh: Mesh, mat: MaterialParams, alpha=None, Ke=None, solver: str = "direct") -> GlobalSystem:
    """Assemble and factorize ``sum_e alpha_e K_e`` over the free dofs.

    ``Ke`` may be passed to reuse precomputed unscaled element matrices.
    """
    if Ke is None:
        Ke = element_stiffness(mesh, mat)
    if alpha is not None:
        alpha = check_alpha(alpha, mesh.n_elements)
    return GlobalSystem(mesh, assemble_stiffness(mesh, Ke, alpha), solver=solver, alpha=alpha)


def solve_forward(sys: GlobalSystem, load: LoadCase, prescribed=None) -> np.ndarray:
    """Displacements (N, 3) for one load case.

    ``prescribed`` optionally gives nonzero values (N, 3) for the constrained
    dofs; otherwise they are zero.
    """
    f = load.vector(sys.mesh)
    if prescribed is None:
        return sys.solve_full(f).reshape(-1, 3)
    prescribed = np.asarray(prescribed, dtype=float).ravel()
    uc = prescribed[~sys.free]
    u = prescribed.copy()
    u[~sys.free] = uc
    u[sys.free_index] = sys.solve_reduced(f[sys.free_index] - sys.K_fc @ uc)
    return u.reshape(-1, 3)


def solve_adjoint(sys: GlobalSystem, rhs) -> np.ndarray:
    """Solve ``K^T v = rhs``; K is symmetric so the forward factorization is reused."""
    return sys.solve_full(rhs).reshape(-1, 3)


def compute_strains(mesh: Mesh, u, B=None) -> np.ndarray:
    """Per-element constant strain, shape (E, 3) for tri3 or (E, 6) for tet4."""
    if B is None:
        B = strain_displacement(mesh)
    ue = np.asarray(u, dtype=float).ravel()[element_dofs(mesh)]
    return np.einsum("eij,ej->ei", B, ue)


# ---------------------------------------------------------------------------
# load-case file


def parse_loads(text: str) -> list[LoadCase]:
    """Parse ``case <id>`` blocks of ``node fx fy fz`` lines (node ids 1-based)."""
    cases: list[LoadCase] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "case":
            if len(tok) != 2:
                raise InputError(f"line {lineno}: expected 'case <id>'")
            try:
                cid = int(tok[1])
            except ValueError:
                raise InputError(f"line {lineno}: bad case id {tok[1]!r}") from None
            if any(c.id == cid for c in cases):
                raise InputError(f"line {lineno}: duplicate case id {cid}")
            current = LoadCase(cid, {})
            cases.append(current)
            continue
        if current is None:
            raise InputError(f"line {lineno}: force line before any 'case' header")
        if len(tok) != 4:
            raise InputError(f"line {lineno}: expected 'node fx fy fz'")
        try:
            node = int(tok[0]) - 1
            values = [float(t) for t in tok[1:]]
        except ValueError:
            raise InputError(f"line {lineno}: malformed force line") from None
        if node < 0:
            raise InputError(f"line {lineno}: node ids are 1-based")
        for axis, v in enumerate(values):
            if v != 0.0:
                key = (node, axis)
                current.forces[key] = current.forces.get(key, 0.0) + v
    return cases


def format_loads(cases: list[LoadCase]) -> str:
    out = []
    for case in cases:
        out.append(f"case {case.id}")
        nodes = sorted({n for n, _ in case.forces})
        for n in nodes:
            f = [float(case.forces.get((n, a), 0.0)) for a in range(3)]
            out.append(f"{n + 1} {f[0]!r} {f[1]!r} {f[2]!r}")
    return "\n".join(out) + "\n"


def check_loads(mesh: Mesh, cases: list[LoadCase]) -> None:
    for case in cases:
        for node, _ in case.forces:
            if node >= mesh.n_nodes:
                raise InputError(f"load case {case.id} references node {node + 1} beyond the mesh")
