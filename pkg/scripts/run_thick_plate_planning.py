"""Sensor and load planning on the thick plate with a conical hole, then a
check of how well the planned layout localizes weakened patches.

Candidate strain gauges sit on the top face. The script selects sensors with
plain and region-aware greedy coverage, selects loads, and finally inverts
synthetic data for a few spherical patches with each layout, printing the
distance between recovered and true weakness centroids.
"""
import argparse
import math
import time

import numpy as np

from weakfind.fem import MaterialParams
from weakfind.fixtures import face_load, thick_plate_with_conical_hole
from weakfind.inverse import InverseConfig, InverseProblem, run_inversion
from weakfind.mesh import cluster_elements
from weakfind.placement import (
    CoverageInstance,
    Neighbourhood,
    greedy_select_loads,
    greedy_select_sensors,
    greedy_select_sensors_with_regions,
)
from weakfind.sensing import Sensor, SensorSet, synthesize_measurements
from weakfind.sensitivity import build_sensitivity_map, encode_sensing

PATCHES = [(12.0, 8.0, 5.0), (45.0, 22.0, 5.0), (22.0, 24.0, 5.0)]


def candidates(s0):
    out, sid = [], 1
    for x in np.linspace(4.0, 56.0, 7):
        for y in (3.0, 15.0, 27.0):
            if abs(x - 30.0) < 12 and y == 15.0:
                continue
            out.append(Sensor(sid, "strain", (float(x), y, 0.0), ("exx", "eyy", "gxy")))
            sid += 1
    return SensorSet(tuple(out), u0=1e-9, s0=s0)


def weakness_centroid(mesh, alpha):
    w = (1.0 - alpha) * mesh.volumes
    return (w[:, None] * mesh.centroids).sum(axis=0) / w.sum()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--full", action="store_true", help="use the 4032-element mesh")
    ap.add_argument("--s0", type=float, default=1e-12)
    ap.add_argument("--radius", type=float, default=15.0, help="region-aware neighbourhood radius")
    ap.add_argument("--max-iters", type=int, default=300)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    mesh = thick_plate_with_conical_hole() if args.full else thick_plate_with_conical_hole(5, 3, 1)
    mat = MaterialParams()
    loads = [face_load(mesh, 0, 60.0, (1e5, 0, 0), 1), face_load(mesh, 0, 60.0, (0, -1e5, 0), 2)]
    sensors = candidates(args.s0)
    clusters = cluster_elements(mesh, min_elements=max(8, math.ceil(mesh.n_elements / 2000)))
    print(f"mesh: {mesh.n_elements} tet4 elements, {len(clusters)} clusters, {len(sensors)} candidate sensors")

    t = time.perf_counter()
    smap = build_sensitivity_map(mesh, mat, loads, sensors, clusters, "adjoint", threads=args.threads)
    print(f"sensitivity map: {smap.n_solves} solves, {time.perf_counter() - t:.1f}s")
    inst = CoverageInstance.from_code(encode_sensing(smap), smap.sensor_ids, smap.cluster_ids)
    positions = {s.id: s.position for s in sensors}
    layouts = {
        "plain": greedy_select_sensors(inst),
        "regions": greedy_select_sensors_with_regions(inst, mesh, clusters, positions,
                                                      Neighbourhood("radius", args.radius)),
    }
    for name, res in layouts.items():
        print(f"{name:>8}: sensors {res.picks}, cluster coverage {res.covered / res.total:.3f}")

    lsel = greedy_select_loads(mesh, mat, loads, 1e-10, threads=args.threads)
    print(f"loads picked {lsel.picks}, strained volume fraction {lsel.covered / lsel.total:.3f}")

    print(f"{'patch':>18} " + " ".join(f"{n:>9}" for n in layouts))
    for center in PATCHES:
        target = np.where(np.linalg.norm(mesh.centroids - center, axis=1) <= 6.0, 0.5, 1.0)
        row = []
        for res in layouts.values():
            chosen = SensorSet(tuple(s for s in sensors if s.id in set(res.picks)), u0=sensors.u0, s0=sensors.s0)
            ms = synthesize_measurements(mesh, mat, target, loads, chosen)
            inv = run_inversion(InverseProblem(mesh, mat, loads, chosen, ms, threads=args.threads),
                                InverseConfig(max_iters=args.max_iters))
            row.append(float(np.linalg.norm(weakness_centroid(mesh, inv.alpha) - weakness_centroid(mesh, target))))
        print(f"{str(center):>18} " + " ".join(f"{d:>9.2f}" for d in row))


if __name__ == "__main__":
    main()
