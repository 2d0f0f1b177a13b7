class WeakfindError(Exception):
    """Base class for all errors raised by the package."""


class InputError(WeakfindError, ValueError):
    """Malformed or inconsistent input data (files, configs, arguments)."""


class MeshError(InputError):
    pass


class SolverError(WeakfindError, RuntimeError):
    """A linear solve failed or produced an unacceptable residual."""


class DivergenceError(SolverError):
    pass
