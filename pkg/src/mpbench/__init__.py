"""Meteorological fusion modules and severe-weather QA benchmark tooling."""
from mpbench.grid import Grid4D, GridSpec, ParamVector, china_spec, desk_spec, read_grid4d, write_grid4d
from mpbench.kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Grid4D",
    "GridSpec",
    "ParamVector",
    "china_spec",
    "desk_spec",
    "read_grid4d",
    "write_grid4d",
    "__version__",
]
