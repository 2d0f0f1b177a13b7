"""Locating weakened regions of elastic structures from load/measurement
pairs, and planning which sensors and loads to use."""
from .errors import DivergenceError, InputError, MeshError, SolverError, WeakfindError
from .fem import LoadCase, MaterialParams, assemble_global, compute_strains, solve_adjoint, solve_forward
from .inverse import InverseConfig, InverseProblem, WeightScheme, run_inversion
from .mesh import Mesh, cluster_elements, locate_point, read_mesh
from .sensing import MeasurementSet, Sensor, SensorSet, read_sensors, synthesize_measurements
from .smoothing import Smoother, SmootherConfig

__version__ = "0.1.0"
