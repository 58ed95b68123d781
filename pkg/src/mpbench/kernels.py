"""Kernel backend selection.

The compiled Cython module is preferred; the numpy fallback is used when it
is not built or when the environment sets ``MPB_PURE_PYTHON=1``. Both
backends expose the same functions and stay importable for comparison via
:func:`get_backend`.

The compiled convolution is a direct loop: it wins on small problems (the
gradient checks, desk-scale grids) but loses to the BLAS-backed numpy path
once ``C_in * C_out * T * H * W`` grows past ``BLAS_CUTOVER``. The module
level ``conv3d_*`` functions route on that size; the backend modules
themselves never switch.
"""
import importlib
import os

from mpbench import _pykernels

_FUNCS = (
    "conv3d_forward",
    "conv3d_backward_input",
    "conv3d_backward_kernel",
    "temporal_sq_diffs",
    "gaussian_mask_sum",
)


def _load_compiled():
    try:
        return importlib.import_module("mpbench._kernels")
    except ImportError:
        return None


_compiled = _load_compiled()


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_backend(name=None):
    """Return the kernel module called ``name`` (``"cython"`` or ``"python"``).

    ``None`` picks the import-time default.
    """
    if name is None:
        return _active
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


if os.environ.get("MPB_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    _active = _pykernels
else:
    _active = _compiled

BACKEND = _active.NAME

# measured crossover on a single core with OpenBLAS; see benchmarks/
BLAS_CUTOVER = 40_000


def _route(ci, co, spatial):
    if _active is _pykernels or ci * co * spatial >= BLAS_CUTOVER:
        return _pykernels
    return _active


def conv3d_forward(x, kernel, bias):
    return _route(x.shape[0], kernel.shape[0], x[0].size).conv3d_forward(x, kernel, bias)


def conv3d_backward_input(gout, kernel):
    return _route(kernel.shape[1], kernel.shape[0], gout[0].size).conv3d_backward_input(gout, kernel)


def conv3d_backward_kernel(gout, x):
    return _route(x.shape[0], gout.shape[0], x[0].size).conv3d_backward_kernel(gout, x)


temporal_sq_diffs = _active.temporal_sq_diffs
gaussian_mask_sum = _active.gaussian_mask_sum
