"""Write the shipped example projects under fixtures/.

    python3 scripts/make_fixtures.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from weakfind.fem import format_loads
from weakfind.fixtures import face_load, grid_sensors, patch_alpha, plate_with_hole, thick_plate_with_conical_hole
from weakfind.inverse import format_alpha
from weakfind.mesh import write_mesh
from weakfind.sensing import Sensor, SensorSet, format_sensors

PLATE_CFG = """\
mesh = plate.mesh
loads = plate.loads
sensors = plate6.sensors
measurements = out/plate6.meas
alpha_target = plate_target.alpha
output = out

young_modulus = 2e12
poisson = 0.3
thickness = 0.1

weight_scheme = local-max
smoother = pseudo-laplacian
lambda = 0.05
max_iters = 500
vtk_stride = 0
"""

THICK_CFG = """\
mesh = thick.mesh
loads = thick.loads
sensors = thick_candidates.sensors
output = out

young_modulus = 2e12
poisson = 0.3

u0 = 1e-9
s0 = 1e-12

sensitivity_method = adjoint
delta_alpha = -0.5
cluster_min_elements = 8

placement = regions
neighbourhood = radius
neighbourhood_size = 15
load_threshold = 1e-10
"""


def plate(out: Path):
    mesh = plate_with_hole()
    write_mesh(out / "plate.mesh", mesh)
    (out / "plate.loads").write_text(format_loads([face_load(mesh, 0, 60.0, (1e5, 0.0, 0.0))]))
    (out / "plate6.sensors").write_text(format_sensors(grid_sensors((10, 30, 50), (4, 26))))
    (out / "plate_target.alpha").write_text(format_alpha(patch_alpha(mesh, (15.0, 22.0), 4.0, 0.5)))
    (out / "plate.cfg").write_text(PLATE_CFG)


def thick(out: Path):
    mesh = thick_plate_with_conical_hole(n_short=5, n_radial=3, n_layers=1)
    write_mesh(out / "thick.mesh", mesh)
    loads = [face_load(mesh, 0, 60.0, (1e5, 0, 0), 1), face_load(mesh, 0, 60.0, (0, -1e5, 0), 2)]
    (out / "thick.loads").write_text(format_loads(loads))
    # candidate strain gauges on the top face, avoiding the hole
    sensors, sid = [], 1
    for x in np.linspace(4.0, 56.0, 7):
        for y in (3.0, 15.0, 27.0):
            if abs(x - 30.0) < 12 and y == 15.0:
                continue
            sensors.append(Sensor(sid, "strain", (float(x), y, 0.0), ("exx", "eyy", "gxy")))
            sid += 1
    (out / "thick_candidates.sensors").write_text(format_sensors(SensorSet(tuple(sensors))))
    (out / "thick.cfg").write_text(THICK_CFG)


if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "fixtures"
    root.mkdir(parents=True, exist_ok=True)
    plate(root)
    thick(root)
    print(f"fixtures written to {root}")
