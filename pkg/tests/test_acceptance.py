"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary; ``python3 tests/test_acceptance.py`` runs them standalone.
"""
import time

import numpy as np
import pytest
import scipy.sparse as sp
from conftest import ACCEPTANCE_LINES
from oracles import brute_force_coverage, fd_gradient, mass_centroid, reference_greedy

from weakfind.fem import MaterialParams, assemble_global, element_stiffness
from weakfind.fixtures import (
    dense_sensors,
    face_load,
    grid_sensors,
    patch_alpha,
    plate_with_hole,
    rectangle_mesh,
    thick_plate_with_conical_hole,
)
from weakfind.inverse import WEIGHT_SCHEMES, InverseConfig, InverseProblem, WeightScheme, run_inversion
from weakfind.mesh import ElementCluster, cluster_elements
from weakfind.placement import (
    CoverageInstance,
    Neighbourhood,
    greedy_select_loads,
    greedy_select_sensors,
    greedy_select_sensors_with_regions,
)
from weakfind.sensing import Sensor, SensorSet, reading_operator, resolve_sensors, synthesize_measurements
from weakfind.sensitivity import WeakeningScenario, derivative_matrix, forward_delta_iterative, forward_delta_linear
from weakfind.smoothing import (
    Smoother,
    SmootherConfig,
    consistent_mass,
    diffusion_matrix,
    lumped_mass,
    projection_matrix,
)

MAT = MaterialParams()


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def _mixed_sensors(mesh, rng, count=12):
    disp = ("ux", "uy") if mesh.kind == "tri3" else ("ux", "uy", "uz")
    strain = ("exx", "eyy", "gxy") if mesh.kind == "tri3" else ("exx", "eyy", "ezz", "gxy", "gyz", "gzx")
    picks = rng.choice(mesh.n_elements, count, replace=False)
    out = []
    for j, e in enumerate(picks):
        kind, comps = ("displacement", disp) if j % 2 == 0 else ("strain", strain)
        out.append(Sensor(j + 1, kind, tuple(mesh.centroids[e]), comps))
    return SensorSet(tuple(out))


def _two_loads(mesh):
    return [face_load(mesh, 0, 60.0, (1e5, 0, 0), 1), face_load(mesh, 0, 60.0, (0, -1e5, 0), 2)]


# ---------------------------------------------------------------------------


def test_criterion_1_adjoint_gradient():
    plate = plate_with_hole()
    thick = thick_plate_with_conical_hole(n_short=5, n_radial=3, n_layers=1)
    configs = [(plate, s) for s in WEIGHT_SCHEMES] + [(thick, s) for s in WEIGHT_SCHEMES]
    worst, worst_time = 0.0, 0.0
    for i, (mesh, scheme) in enumerate(configs):
        rng = np.random.default_rng(100 + i)
        sensors = _mixed_sensors(mesh, rng)
        loads = _two_loads(mesh)
        target = rng.uniform(0.3, 1.0, mesh.n_elements)
        ms = synthesize_measurements(mesh, MAT, target, loads, sensors)
        problem = InverseProblem(mesh, MAT, loads, sensors, ms, WeightScheme(scheme))
        alpha = rng.uniform(0.4, 1.0, mesh.n_elements)
        t = time.perf_counter()
        _, g = problem.cost_and_gradient(alpha)
        fd = fd_gradient(problem, alpha, h=1e-6)
        worst_time = max(worst_time, time.perf_counter() - t)
        mask = np.abs(fd) > 1e-12 * np.abs(g).max()
        worst = max(worst, float((np.abs(g - fd)[mask] / np.abs(fd)[mask]).max()))
    record(
        1,
        worst <= 1e-4 and worst_time < 300,
        f"{len(configs)} configs ({plate.n_elements} tri3, {thick.n_elements} tet4), "
        f"max rel err {worst:.2e} <= 1e-4, slowest {worst_time:.1f}s",
    )


def test_criterion_2_solve_count():
    meshes = [rectangle_mesh(4, 2, 4.0, 2.0), plate_with_hole(), thick_plate_with_conical_hole(n_short=5, n_radial=3, n_layers=1)]
    seen = []
    ok = True
    for mesh in meshes:
        loads = [face_load(mesh, 0, float(mesh.nodes[:, 0].max()), (1e5, 0, 0), 1),
                 face_load(mesh, 0, float(mesh.nodes[:, 0].max()), (0, -1e5, 0), 2)]
        sensors = dense_sensors(mesh)
        target = patch_alpha(mesh, mesh.centroids.mean(axis=0)[:2], 0.2 * mesh.scale, 0.6)
        ms = synthesize_measurements(mesh, MAT, target, loads, sensors)
        problem = InverseProblem(mesh, MAT, loads, sensors, ms)
        cfg = InverseConfig(step_rule="fixed", line_search=False, max_iters=5, gamma0=0.05)
        res = run_inversion(problem, cfg)
        n = problem.n_cases
        counts = set(res.solves_per_iteration)
        seen.append((mesh.n_elements, sorted(counts)))
        ok &= counts == {2 * n} and len(res.solves_per_iteration) == 5
    record(2, ok, "solves per iteration by element count: " + ", ".join(f"{e}->{c}" for e, c in seen) + " (2n = 4)")


@pytest.mark.slow
def test_criterion_3_plate_recovery():
    t0 = time.perf_counter()
    mesh = plate_with_hole()
    load = [face_load(mesh, 0, 60.0, (1e5, 0.0, 0.0))]
    target = patch_alpha(mesh, (15.0, 22.0), 4.0, 0.5)
    patch = target < 1

    dense = dense_sensors(mesh)
    ms = synthesize_measurements(mesh, MAT, target, load, dense)
    problem = InverseProblem(mesh, MAT, load, dense, ms)
    res = run_inversion(problem, InverseConfig(smoother=SmootherConfig("none"), max_iters=500))
    rel_cost = res.cost_history[-1] / res.cost_history[0]
    patch_err = float(np.abs(res.alpha - target)[patch].mean())

    six = grid_sensors((10, 30, 50), (4, 26))
    ms6 = synthesize_measurements(mesh, MAT, target, load, six)
    res6 = run_inversion(InverseProblem(mesh, MAT, load, six, ms6), InverseConfig(max_iters=500))
    dist = float(np.linalg.norm(mass_centroid(mesh, res6.alpha) - mass_centroid(mesh, target)))
    elapsed = time.perf_counter() - t0
    record(
        3,
        rel_cost <= 1e-4 and patch_err <= 0.15 and dist <= 8.0 and elapsed < 600,
        f"dense: cost ratio {rel_cost:.2e} <= 1e-4, patch |err| {patch_err:.3f} <= 0.15; "
        f"6 sensors: centroid off by {dist:.2f} <= 8 (diameter); {elapsed:.0f}s",
    )


def test_criterion_4_sensitivity_duality():
    mesh = rectangle_mesh(6, 4, 6.0, 2.0, thickness=0.5)
    assert mesh.n_elements <= 50
    Ke = element_stiffness(mesh, MAT)
    sensors = resolve_sensors(
        mesh,
        SensorSet((
            Sensor(1, "displacement", (5.5, 0.3, 0.0), ("ux", "uy")),
            Sensor(2, "strain", (2.2, 1.7, 0.0), ("exx", "eyy", "gxy")),
            Sensor(3, "displacement", (3.1, 1.9, 0.0), ("uy",)),
        )),
    )
    P = reading_operator(mesh, sensors)
    t = time.perf_counter()
    worst = 0.0
    for load in (face_load(mesh, 0, 6.0, (1e5, 0, 0)), face_load(mesh, 0, 6.0, (0, -1e5, 0))):
        sys_ = assemble_global(mesh, MAT, Ke=Ke)
        u = sys_.solve_full(load.vector(mesh))
        F = derivative_matrix(sys_, u, P, Ke, "forward")
        A = derivative_matrix(sys_, u, P, Ke, "adjoint")
        scale = np.abs(F).max(axis=1, keepdims=True)
        worst = max(worst, float((np.abs(F - A) / scale).max()))
    elapsed = time.perf_counter() - t
    record(4, worst <= 1e-9 and elapsed < 60,
           f"{mesh.n_elements} elements, max |forward - adjoint| / row scale {worst:.2e} <= 1e-9, {elapsed:.2f}s")


def test_criterion_5_linearization_order():
    mesh = rectangle_mesh(6, 4, 6.0, 2.0, thickness=0.5)
    Ke = element_stiffness(mesh, MAT)
    f = face_load(mesh, 0, 6.0, (1e5, -3e4, 0)).vector(mesh)
    sys_ = assemble_global(mesh, MAT, Ke=Ke)
    u = sys_.solve_full(f)

    def exact(cluster, da):
        a = np.ones(mesh.n_elements)
        a[list(cluster.element_ids)] += da
        return assemble_global(mesh, MAT, a, Ke=Ke).solve_full(f) - u

    single = ElementCluster(0, (10,), 10)
    errs = [np.linalg.norm(forward_delta_linear(sys_, u, WeakeningScenario(single, da), Ke=Ke) - exact(single, da))
            for da in (-0.5, -0.25)]
    ratio = errs[0] / errs[1]

    cluster = ElementCluster(0, (10, 11, 16, 17), 10)
    du = forward_delta_iterative(sys_, u, WeakeningScenario(cluster, -0.5), k=500, Ke=Ke, tol=1e-12)
    ex = exact(cluster, -0.5)
    fp_err = float(np.abs(du - ex).max() / np.abs(ex).max())
    record(5, abs(ratio - 4) <= 0.8 and fp_err <= 1e-9,
           f"error ratio (da -0.5 vs -0.25) {ratio:.3f} in [3.2, 4.8]; fixed point vs exact {fp_err:.2e} <= 1e-9")


def test_criterion_6_smoothers():
    mesh = plate_with_hole()
    ones = np.ones(mesh.n_elements)
    const_err = 0.0
    for cfg in (SmootherConfig("simple", iters=3), SmootherConfig("h1-laplacian", lam=2.0),
                SmootherConfig("pseudo-laplacian", lam=0.05)):
        const_err = max(const_err, float(np.abs(Smoother(mesh, cfg)(ones) - 1).max()))
    Mc, Ml, Kd = consistent_mass(mesh), lumped_mass(mesh), diffusion_matrix(mesh)
    row_ml = float(np.abs((Ml - Mc).sum(axis=1)).max() / Mc.diagonal().max())
    row_kd = float(np.abs(Kd.sum(axis=1)).max() / Kd.diagonal().max())
    rng = np.random.default_rng(6)
    a0 = rng.uniform(-1, 1, mesh.n_elements)
    A = (Mc + 0.05 * (Ml - Mc)).toarray()
    oracle = np.linalg.solve(A, projection_matrix(mesh).toarray() @ a0)
    got = Smoother(mesh, SmootherConfig("pseudo-laplacian", lam=0.05)).to_points(a0)
    dense_err = float(np.abs(got - oracle).max() / np.abs(oracle).max())
    ok = const_err <= 1e-12 and row_ml <= 1e-12 and row_kd <= 1e-12 and dense_err <= 1e-9
    assert sp.issparse(Mc)
    record(6, ok, f"constants {const_err:.1e}; row sums (Ml-Mc) {row_ml:.1e}, Kd {row_kd:.1e}; "
                  f"pseudo-Laplacian vs dense {dense_err:.1e}")


def test_criterion_7_greedy():
    rng = np.random.default_rng(7)
    worst_ratio, mismatches = 1.0, 0
    for _ in range(200):
        n_items = int(rng.integers(1, 16))
        n_cand = int(rng.integers(1, 13))
        cands = {c: frozenset(np.flatnonzero(rng.random(n_items) < rng.uniform(0.05, 0.6)).tolist()) for c in range(n_cand)}
        inst = CoverageInstance(frozenset(range(n_items)), cands)
        res = greedy_select_sensors(inst)
        picks, gains, left = reference_greedy(range(n_items), cands)
        mismatches += (res.picks != picks) or (res.new_coverage != gains) or (set(res.residual) != left)
        for k in range(1, len(res.picks) + 1):
            opt = brute_force_coverage(range(n_items), cands, k)
            if opt:
                worst_ratio = min(worst_ratio, sum(res.new_coverage[:k]) / opt)

    mesh = rectangle_mesh(4, 3, 4.0, 3.0)
    clusters = cluster_elements(mesh, min_elements=2)
    region_equal = True
    for _ in range(50):
        cands = {c: frozenset(np.flatnonzero(rng.random(len(clusters)) < 0.3).tolist()) for c in range(8)}
        inst = CoverageInstance(frozenset(range(len(clusters))), cands)
        pos = {c: tuple(rng.uniform(0, 3, 3) * [1, 1, 0]) for c in cands}
        a = greedy_select_sensors(inst)
        b = greedy_select_sensors_with_regions(inst, mesh, clusters, pos, Neighbourhood("elements", mesh.n_elements))
        region_equal &= a == b
    record(7, mismatches == 0 and worst_ratio >= 1 - 1 / np.e and region_equal,
           f"200 instances: {mismatches} mismatches vs reference greedy, worst greedy/optimum {worst_ratio:.3f} "
           f">= {1 - 1 / np.e:.3f}; whole-mesh region-aware equals plain: {region_equal}")


def test_criterion_8_load_planning():
    t = time.perf_counter()
    mesh = thick_plate_with_conical_hole()
    assert mesh.n_elements <= 5000
    loads = _two_loads(mesh)
    res = greedy_select_loads(mesh, MAT, loads, s0=1e-10, measure="volume")
    res_n = greedy_select_loads(mesh, MAT, loads, s0=1e-10, measure="count")
    frac = res_n.covered / mesh.n_elements
    elapsed = time.perf_counter() - t
    record(8, sorted(res.picks) == [1, 2] and sorted(res_n.picks) == [1, 2] and frac >= 0.95 and elapsed < 300,
           f"{mesh.n_elements} tets, s0 = 1e-10: picks {res.picks}, union covers {100 * frac:.1f}% of elements, {elapsed:.1f}s")


def test_criterion_9_determinism(tmp_path):
    from test_cli import make_project, run_all_commands

    outputs = []
    for run in range(2):
        root = make_project(tmp_path / f"run{run}")
        run_all_commands(root)
        files = sorted(p for p in (root / "out").rglob("*") if p.is_file())
        files += [root / "meas.txt"]
        outputs.append({p.relative_to(root): p.read_bytes() for p in files})
    same = outputs[0].keys() == outputs[1].keys() and all(outputs[0][k] == outputs[1][k] for k in outputs[0])
    record(9, same and len(outputs[0]) > 10, f"{len(outputs[0])} output files from 5 commands byte-identical across runs: {same}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-rN"]))
