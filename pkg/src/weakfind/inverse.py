"""Recovery of the element strength field from load/measurement pairs.

The cost is the weighted squared misfit between measured and computed sensor
readings over all load cases. Its gradient with respect to every element's
strength factor comes from one forward and one adjoint solve per load case:
``dI/dalpha_e = sum_i v_i^T K_e u_i``, with ``K v_i = P_i^T W_i r_i`` and
``r_i`` the residual (measured minus computed) of case i.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, SolverError
from .fem import (
    EPS_ALPHA,
    GlobalSystem,
    LoadCase,
    MaterialParams,
    assemble_global,
    element_dofs,
    element_stiffness,
)
from .mesh import Mesh
from .sensing import MeasurementSet, SensorSet, is_displacement, reading_operator, resolve_sensors
from .smoothing import Smoother, SmootherConfig

log = logging.getLogger(__name__)

WEIGHT_SCHEMES = ("local", "average", "max", "local-max")


@dataclass(frozen=True)
class WeightScheme:
    variant: str = "local-max"
    eps_w: float = 0.05

    def __post_init__(self):
        if self.variant not in WEIGHT_SCHEMES:
            raise InputError(f"unknown weight scheme {self.variant!r}; choose from {WEIGHT_SCHEMES}")
        if self.variant == "local-max" and not self.eps_w > 0:
            raise InputError("local-max weighting needs eps_w > 0")


def compute_weights(measurements: MeasurementSet, scheme: WeightScheme) -> dict:
    """Weights per measurement key, making every squared misfit dimensionless.

    Pools are formed per load case, separately for displacement and strain
    readings; every component counts as one reading.
    """
    weights = {}
    pools: dict[tuple, list] = {}
    for key in sorted(measurements.values):
        case, _, comp = key
        pools.setdefault((case, is_displacement(comp)), []).append(key)

    for (case, disp), keys in pools.items():
        mag = np.abs(np.array([measurements.values[k] for k in keys]))
        what = f"load case {case} {'displacement' if disp else 'strain'} readings"
        if scheme.variant == "local":
            if np.any(mag == 0):
                raise InputError(f"local weighting with a zero reading in {what}; use the local-max scheme")
            w = 1.0 / mag**2
        else:
            if scheme.variant == "average":
                ref = mag.mean()
            else:
                ref = mag.max()
            if ref == 0:
                raise InputError(f"all {what} are zero; weights are undefined")
            if scheme.variant == "local-max":
                w = 1.0 / np.maximum(scheme.eps_w * ref, mag) ** 2
            else:
                w = np.full(mag.shape, 1.0 / ref**2)
        weights.update(zip(keys, w.tolist()))
    return weights


def cost_function(computed: dict, measured: dict, weights: dict) -> float:
    """``1/2 sum w (measured - computed)^2`` over the measurement keys."""
    total = 0.0
    for key, m in measured.items():
        if key not in computed:
            raise KeyError(f"no computed reading for measurement {key}")
        total += weights[key] * (m - computed[key]) ** 2
    return 0.5 * total


def adjoint_rhs(rows, residual, weights) -> np.ndarray:
    """Right-hand side ``P^T (w * r)`` of the adjoint system for one load case.

    ``rows`` is the reading operator restricted to the case's measured keys.
    The adjoint ``v`` solving ``K v = rhs`` gives ``dI/dalpha_e = v^T K_e u``.
    """
    return rows.T @ (np.asarray(weights) * np.asarray(residual))


def element_gradients(dofs: np.ndarray, Ke: np.ndarray, us, adjoints) -> np.ndarray:
    """``g_e = sum_i v_i^T K_e u_i`` with the unscaled element matrices."""
    g = np.zeros(len(Ke))
    for u, v in zip(us, adjoints):
        ue = np.asarray(u).ravel()[dofs]
        ve = np.asarray(v).ravel()[dofs]
        g += np.einsum("ei,eij,ej->e", ve, Ke, ue)
    return g


def update_alpha(alpha, direction, gamma: float, eps_alpha: float = EPS_ALPHA) -> np.ndarray:
    """Descent step ``alpha - gamma * direction`` projected onto ``[eps_alpha, 1]``."""
    return np.clip(np.asarray(alpha) - gamma * np.asarray(direction), eps_alpha, 1.0)


@dataclass
class Evaluation:
    alpha: np.ndarray
    system: GlobalSystem
    displacements: list
    residuals: list
    cost_per_case: list

    @property
    def cost(self) -> float:
        return float(sum(self.cost_per_case))


@dataclass
class _Case:
    load: LoadCase
    keys: list
    rows: object
    measured: np.ndarray
    weights: np.ndarray


class InverseProblem:
    """Staged forward/adjoint machinery for one set of loads and measurements.

    ``evaluate`` assembles K for a strength field and solves every load case;
    ``gradient`` solves the adjoints for an evaluation and accumulates the
    element gradients. ``n_solves`` counts every linear solve performed.
    """

    def __init__(
        self,
        mesh: Mesh,
        mat: MaterialParams,
        loads: list[LoadCase],
        sensors: SensorSet,
        measurements: MeasurementSet,
        scheme: WeightScheme = WeightScheme(),
        solver: str = "direct",
        threads: int = 1,
    ):
        if not all(s.resolved for s in sensors):
            sensors = resolve_sensors(mesh, sensors)
        measurements.check(loads, sensors)
        if not measurements.values:
            raise InputError("no measurements")
        self.mesh, self.mat, self.sensors = mesh, mat, sensors
        self.solver, self.threads = solver, threads
        self.Ke = element_stiffness(mesh, mat)
        self.dofs = element_dofs(mesh)
        self.P = reading_operator(mesh, sensors)
        row_of = {k: r for r, k in enumerate(sensors.keys)}
        self.weights = compute_weights(measurements, scheme)
        self.cases = []
        for load in loads:
            meas = measurements.for_case(load.id)
            if not meas:
                log.warning("load case %d has no measurements; skipped", load.id)
                continue
            keys = sorted(meas, key=lambda k: row_of[k])
            rows = self.P[[row_of[k] for k in keys]]
            self.cases.append(
                _Case(
                    load,
                    keys,
                    rows,
                    np.array([meas[k] for k in keys]),
                    np.array([self.weights[(load.id, *k)] for k in keys]),
                )
            )
        self.n_solves = 0

    @property
    def n_cases(self) -> int:
        return len(self.cases)

    def _map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def evaluate(self, alpha) -> Evaluation:
        system = assemble_global(self.mesh, self.mat, alpha, Ke=self.Ke, solver=self.solver)
        us = self._map(lambda c: system.solve_full(c.load.vector(self.mesh)), self.cases)
        self.n_solves += system.n_solves
        residuals = [c.measured - c.rows @ u for c, u in zip(self.cases, us)]
        costs = [0.5 * float(np.sum(c.weights * r**2)) for c, r in zip(self.cases, residuals)]
        return Evaluation(np.array(alpha, dtype=float), system, us, residuals, costs)

    def gradient(self, ev: Evaluation) -> np.ndarray:
        before = ev.system.n_solves
        rhs = [adjoint_rhs(c.rows, r, c.weights) for c, r in zip(self.cases, ev.residuals)]
        adjoints = self._map(ev.system.solve_full, rhs)
        self.n_solves += ev.system.n_solves - before
        return element_gradients(self.dofs, self.Ke, ev.displacements, adjoints)

    def cost(self, alpha) -> float:
        return self.evaluate(alpha).cost

    def cost_and_gradient(self, alpha) -> tuple[float, np.ndarray]:
        ev = self.evaluate(alpha)
        return ev.cost, self.gradient(ev)

    def computed_readings(self, ev: Evaluation) -> dict:
        out = {}
        for c, u in zip(self.cases, ev.displacements):
            vals = c.rows @ u
            out.update({(c.load.id, *k): float(v) for k, v in zip(c.keys, vals)})
        return out


@dataclass(frozen=True)
class InverseConfig:
    weight_scheme: WeightScheme = WeightScheme()
    smoother: SmootherConfig = SmootherConfig()
    gamma0: float = 0.5  # first trial step moves alpha by at most this much
    line_search: bool = True
    step_rule: str = "bb"  # initial trial step: "bb" (Barzilai-Borwein) or "fixed"
    max_iters: int = 500
    eps_alpha: float = EPS_ALPHA
    tol_cost: float = 1e-6
    window: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    cost_floor: float = 1e-20  # the weighted cost is dimensionless; below this it is round-off

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise InputError("gamma0 must be positive")
        if self.step_rule not in ("bb", "fixed"):
            raise InputError("step_rule must be 'bb' or 'fixed'")
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if not 0 < self.eps_alpha < 1:
            raise InputError("eps_alpha must lie in (0, 1)")


@dataclass
class InversionResult:
    alpha: np.ndarray
    cost_history: list
    iterations: int
    converged: bool
    status: str
    solves_per_iteration: list = field(default_factory=list)
    evaluation: Evaluation | None = None


class InversionFailed(SolverError):
    def __init__(self, message, state: InversionResult):
        super().__init__(message)
        self.state = state


def search_direction(problem: InverseProblem, smoother: Smoother, g: np.ndarray) -> np.ndarray:
    # smooth the gradient per unit volume; element-to-node averaging of an
    # extensive quantity would bias the step towards large elements
    return smoother(g / problem.mesh.volumes)


def run_inversion(
    problem: InverseProblem,
    config: InverseConfig = InverseConfig(),
    alpha0=None,
    callback=None,
) -> InversionResult:
    """Projected (smoothed) gradient descent on the strength field.

    Each iteration solves the adjoints at the current field, smooths the
    summed gradient, and takes a projected step. The first trial step is
    ``gamma0 / max|direction|``; later ones use the Barzilai-Borwein length
    ``s.s / s.y`` of the previous step when ``step_rule == "bb"``. With
    ``line_search`` on the step is halved until the Armijo condition holds,
    so the cost never increases.
    The accepted trial's forward solves are reused by the next iteration.
    Stops after ``max_iters`` or when the cost dropped by less than
    ``tol_cost`` (relative) over the last ``window`` iterations.
    ``callback(iteration, evaluation)`` is called after every accepted step.
    """
    smoother = Smoother(problem.mesh, config.smoother)
    alpha = np.ones(problem.mesh.n_elements) if alpha0 is None else np.clip(alpha0, config.eps_alpha, 1.0)
    result = InversionResult(alpha, [], 0, False, "max-iterations")

    try:
        start = problem.n_solves
        ev = problem.evaluate(alpha)
        result.cost_history.append(ev.cost)
        result.evaluation = ev
        if callback:
            callback(0, ev)
        pending = problem.n_solves - start
        prev = None  # (alpha, direction) of the previous iterate
        for it in range(1, config.max_iters + 1):
            start = problem.n_solves - pending
            result.iterations = it
            if ev.cost <= config.cost_floor:
                result.converged, result.status = True, "exact-match"
                break
            g = problem.gradient(ev)
            d = search_direction(problem, smoother, g)
            dmax = np.abs(d).max()
            if dmax == 0.0:
                result.converged, result.status = True, "stationary"
                break
            gamma = config.gamma0 / dmax
            if config.step_rule == "bb" and prev is not None:
                step, dy = ev.alpha - prev[0], d - prev[1]
                sy = float(step @ dy)
                if sy > 0:
                    gamma = min(float(step @ step) / sy, 1.0 / dmax)
            prev = (ev.alpha, d)
            accepted = None
            for _ in range(config.max_backtracks if config.line_search else 1):
                trial = update_alpha(ev.alpha, d, gamma, config.eps_alpha)
                if np.array_equal(trial, ev.alpha):
                    break
                ev_t = problem.evaluate(trial)
                if not config.line_search or ev_t.cost <= ev.cost + config.armijo * float(g @ (trial - ev.alpha)):
                    accepted = ev_t
                    break
                gamma *= config.backtrack
            if accepted is None:
                result.converged, result.status = True, "line-search-failed"
                result.solves_per_iteration.append(problem.n_solves - start)
                break
            ev = accepted
            result.alpha, result.evaluation = ev.alpha, ev
            result.cost_history.append(ev.cost)
            # forward solves of the accepted trial belong to the next iteration
            pending = problem.n_cases
            result.solves_per_iteration.append(problem.n_solves - start - pending)
            if callback:
                callback(it, ev)
            h = result.cost_history
            if len(h) > config.window:
                old = h[-1 - config.window]
                if old - h[-1] <= config.tol_cost * old:
                    result.converged, result.status = True, "converged"
                    break
    except SolverError as exc:
        raise InversionFailed(f"inversion aborted at iteration {result.iterations}: {exc}", result) from exc
    return result


# ---------------------------------------------------------------------------
# strength-field file: ``element alpha`` per line, element ids 1-based


def parse_alpha(text: str, n_elements: int) -> np.ndarray:
    alpha = np.full(n_elements, np.nan)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 2:
            raise InputError(f"line {lineno}: expected 'element alpha'")
        try:
            e, v = int(tok[0]) - 1, float(tok[1])
        except ValueError:
            raise InputError(f"line {lineno}: malformed strength line") from None
        if not 0 <= e < n_elements:
            raise InputError(f"line {lineno}: element {e + 1} out of range 1..{n_elements}")
        if not np.isnan(alpha[e]):
            raise InputError(f"line {lineno}: duplicate element {e + 1}")
        alpha[e] = v
    if np.isnan(alpha).any():
        raise InputError(f"strength file misses {int(np.isnan(alpha).sum())} element(s)")
    if np.any(alpha <= 0) or np.any(alpha > 1):
        raise InputError("strength factors must lie in (0, 1]")
    return alpha


def format_alpha(alpha) -> str:
    return "".join(f"{e + 1} {float(a)!r}\n" for e, a in enumerate(np.asarray(alpha, dtype=float)))
