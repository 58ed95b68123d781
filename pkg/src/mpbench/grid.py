"""Dense 4D field substrate.

A :class:`Grid4D` is an immutable ``(T, C, H, W)`` float32 array plus the
:class:`GridSpec` describing its geography and channel layout. Channels are
variable-major: all levels of the first variable, then all levels of the
next one, and so on.

Also hosts the small numeric toolkit shared by the fusion modules
(softmax, sigmoid, 3x3x3 convolution) and the central finite-difference
gradient harness used to check every analytic backward pass.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterable, Mapping, Sequence

import numpy as np

from mpbench import kernels
from mpbench.errors import (
    BadMagic,
    DimMismatch,
    EmptyInput,
    NonFinite,
    NonFiniteObjective,
    ShapeMismatch,
    ValidationError,
)

MAGIC = "G4D1"

# ERA5 pressure levels in hPa, top of atmosphere first.
ERA5_LEVELS: tuple[int, ...] = (
    1, 2, 3, 5, 7, 10, 20, 30, 50, 70, 100,
    125, 150, 175, 200, 225, 250, 300, 350,
    400, 450, 500, 550, 600, 650, 700, 750,
    775, 800, 825, 850, 875, 900, 925, 950,
    975, 1000,
)
ERA5_VARIABLES: tuple[str, ...] = ("z", "u", "v", "t", "q")

VARIABLE_INFO = {
    "z": ("geopotential", "gpm"),
    "u": ("U-component wind speed", "m/s"),
    "v": ("V-component wind speed", "m/s"),
    "t": ("temperature", "K"),
    "q": ("specific humidity", "kg/kg"),
}


@dataclass(frozen=True)
class GridSpec:
    """Regular lat/lon grid with an ordered variable x level channel set.

    Row 0 is the northernmost latitude ``lat_max``; column 0 is ``lon_min``.
    """

    lat_max: float
    lon_min: float
    H: int
    W: int
    resolution: float = 0.25
    levels: tuple = ERA5_LEVELS
    variables: tuple = ERA5_VARIABLES

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "variables", tuple(self.variables))
        if not self.resolution > 0:
            raise ValidationError(f"resolution must be positive, got {self.resolution}")
        if self.H < 1 or self.W < 1:
            raise ValidationError(f"grid extents must be >= 1, got H={self.H} W={self.W}")
        if not self.levels or not self.variables:
            raise ValidationError("levels and variables must be non-empty")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValidationError("levels must be strictly increasing")
        if len(set(self.variables)) != len(self.variables):
            raise ValidationError("variables must be unique")

    @property
    def n_channels(self) -> int:
        return len(self.variables) * len(self.levels)

    @property
    def lat_min(self) -> float:
        return self.lat_max - (self.H - 1) * self.resolution

    @property
    def lon_max(self) -> float:
        return self.lon_min + (self.W - 1) * self.resolution

    def channels(self) -> list[tuple[str, float]]:
        """(variable, level) for every channel index, in channel order."""
        return [(var, lev) for var in self.variables for lev in self.levels]

    def to_dict(self) -> dict:
        return {
            "H": self.H,
            "W": self.W,
            "lat_max": self.lat_max,
            "levels": list(self.levels),
            "lon_min": self.lon_min,
            "resolution": self.resolution,
            "variables": list(self.variables),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridSpec":
        try:
            return cls(
                lat_max=float(d["lat_max"]),
                lon_min=float(d["lon_min"]),
                H=int(d["H"]),
                W=int(d["W"]),
                resolution=float(d.get("resolution", 0.25)),
                levels=tuple(d.get("levels", ERA5_LEVELS)),
                variables=tuple(d.get("variables", ERA5_VARIABLES)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad grid spec: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridSpec":
        return cls.from_dict(json.loads(text))


def china_spec() -> GridSpec:
    """Full-scale China domain: 15-55N, 70-140E at 0.25 deg, all 185 channels."""
    return GridSpec(lat_max=55.0, lon_min=70.0, H=161, W=281)


def desk_spec() -> GridSpec:
    """16x16 grid around Beijing with 2 variables x 5 levels (10 channels)."""
    return GridSpec(
        lat_max=42.0,
        lon_min=114.0,
        H=16,
        W=16,
        levels=(100, 300, 500, 850, 950),
        variables=("t", "q"),
    )


class Grid4D:
    """Immutable ``(T, C, H, W)`` float32 field bound to a :class:`GridSpec`."""

    __slots__ = ("_data", "spec")

    def __init__(self, data, spec: GridSpec):
        with np.errstate(over="ignore", invalid="ignore"):
            arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 4:
            raise DimMismatch(f"expected 4 dims (T,C,H,W), got shape {arr.shape}")
        t, c, h, w = arr.shape
        if t < 1:
            raise DimMismatch("T must be >= 1")
        if c != spec.n_channels:
            raise DimMismatch(
                f"C={c} but spec has {len(spec.variables)} variables x {len(spec.levels)} levels"
            )
        if (h, w) != (spec.H, spec.W):
            raise DimMismatch(f"spatial dims {(h, w)} disagree with spec {(spec.H, spec.W)}")
        if not np.isfinite(arr).all():
            raise NonFinite("field contains NaN or Inf")
        arr.setflags(write=False)
        self._data = arr
        self.spec = spec

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self._data.shape

    def __eq__(self, other):
        if not isinstance(other, Grid4D):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.dims == other.dims
            and self._data.tobytes() == other._data.tobytes()
        )

    def __hash__(self):
        return hash((self.spec, self.dims, self._data.tobytes()))

    def __repr__(self):
        return f"Grid4D(dims={self.dims})"

    def with_data(self, data) -> "Grid4D":
        return Grid4D(data, self.spec)


# -- .g4d file format ---------------------------------------------------------

def _header(g: Grid4D) -> bytes:
    head = {
        "dims": list(g.dims),
        "dtype": "f32le",
        "magic": MAGIC,
        "order": "TCHW",
        "spec": g.spec.to_dict(),
    }
    return json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def write_grid4d(g: Grid4D) -> bytes:
    """Serialize to the .g4d byte layout: JSON header line + f32le payload."""
    return _header(g) + g.data.astype("<f4", copy=False).tobytes()


def read_grid4d(blob: bytes) -> Grid4D:
    nl = blob.find(b"\n")
    if nl < 0:
        raise BadMagic("missing header line")
    try:
        head = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagic(f"unreadable header: {exc}") from exc
    if not isinstance(head, dict) or head.get("magic") != MAGIC:
        got = head.get("magic") if isinstance(head, dict) else None
        raise BadMagic(f"expected magic {MAGIC!r}, got {got!r}")
    if head.get("dtype") != "f32le" or head.get("order") != "TCHW":
        raise BadMagic(f"unsupported dtype/order {head.get('dtype')}/{head.get('order')}")
    spec = GridSpec.from_dict(head["spec"])
    dims = tuple(int(d) for d in head["dims"])
    if len(dims) != 4:
        raise DimMismatch(f"header dims {dims} are not 4D")
    payload = blob[nl + 1:]
    expected = 4 * math.prod(dims)
    if len(payload) != expected:
        raise DimMismatch(f"payload has {len(payload)} bytes, dims {dims} need {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return Grid4D(arr, spec)


def save_grid4d(g: Grid4D, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_grid4d(g))


def load_grid4d(path_or_file) -> Grid4D:
    if isinstance(path_or_file, (io.IOBase, BinaryIO)) or hasattr(path_or_file, "read"):
        return read_grid4d(path_or_file.read())
    with open(path_or_file, "rb") as fh:
        return read_grid4d(fh.read())


# -- numeric primitives -------------------------------------------------------

def softmax(xs) -> np.ndarray:
    """Max-shifted softmax over a 1D sequence."""
    x = np.asarray(xs, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("softmax of an empty sequence")
    e = np.exp(x - x.max())
    return e / e.sum()


def sigmoid(x):
    """Logistic function, stable for large |x|. Scalars in, scalars out."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def conv3d(x, kernel, bias) -> np.ndarray:
    """3x3x3 cross-correlation, stride 1, zero padding 1 on (T, H, W).

    ``x`` is ``(C_in, T, H, W)``; a :class:`Grid4D` is transposed from its
    ``(T, C, H, W)`` layout first. Returns ``(C_out, T, H, W)`` float64.
    """
    if isinstance(x, Grid4D):
        x = x.data.transpose(1, 0, 2, 3)
    x = np.ascontiguousarray(x, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeMismatch(f"input must be (C_in,T,H,W), got {x.shape}")
    if kernel.ndim != 5 or kernel.shape[2:] != (3, 3, 3):
        raise ShapeMismatch(f"kernel must be (C_out,C_in,3,3,3), got {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"kernel expects C_in={kernel.shape[1]}, input has {x.shape[0]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeMismatch(f"bias must have shape ({kernel.shape[0]},), got {bias.shape}")
    return kernels.conv3d_forward(x, kernel, bias)


# -- parameters and finite differences ---------------------------------------

class ParamVector:
    """Named float64 parameter arrays, each addressable by (name, flat index)."""

    def __init__(self, items: Mapping[str, object] | Iterable[tuple[str, object]] = ()):
        pairs = items.items() if isinstance(items, Mapping) else items
        self._arrays: dict[str, np.ndarray] = {}
        for name, value in pairs:
            arr = np.array(value, dtype=np.float64)
            if not np.isfinite(arr).all():
                raise NonFinite(f"parameter {name!r} has non-finite entries")
            self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def names(self) -> list[str]:
        return list(self._arrays)

    @property
    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._arrays.items()}

    @property
    def size(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def flat(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def with_flat(self, vec) -> "ParamVector":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ShapeMismatch(f"flat vector has {vec.size} entries, expected {self.size}")
        out, i = [], 0
        for name, arr in self._arrays.items():
            out.append((name, vec[i:i + arr.size].reshape(arr.shape)))
            i += arr.size
        return ParamVector(out)

    def replace(self, **arrays) -> "ParamVector":
        merged = dict(self._arrays)
        merged.update(arrays)
        return ParamVector(merged)

    def perturbed(self, name: str, index: int, delta: float) -> "ParamVector":
        arr = self._arrays[name].copy()
        arr.flat[index] += delta
        merged = dict(self._arrays)
        merged[name] = arr
        return ParamVector(merged)

    def to_dict(self) -> dict:
        return {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in self._arrays.items()
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamVector":
        try:
            return cls(
                (name, np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]))
                for name, entry in d.items()
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"bad parameter document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ParamVector":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"ParamVector({self.shapes})"


def finite_diff_gradient(
    f: Callable[[ParamVector], float],
    p: ParamVector,
    h: float = 1e-3,
    names: Sequence[str] | None = None,
) -> ParamVector:
    """Central-difference gradient of scalar ``f`` at ``p``.

    Each entry is ``(f(p + h e_i) - f(p - h e_i)) / 2h``. ``names`` restricts
    the sweep to a subset of parameters; the others are omitted from the
    result.
    """
    if not h > 0:
        raise ValidationError(f"step must be positive, got {h}")
    grads = []
    for name in names if names is not None else p.names:
        arr = p[name]
        g = np.empty(arr.size)
        for i in range(arr.size):
            hi = float(f(p.perturbed(name, i, h)))
            lo = float(f(p.perturbed(name, i, -h)))
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NonFiniteObjective(f"objective not finite perturbing {name}[{i}]")
            g[i] = (hi - lo) / (2.0 * h)
        grads.append((name, g.reshape(arr.shape)))
    return ParamVector(grads)


def relative_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-8)


def max_relative_error(analytic: ParamVector, numeric: ParamVector) -> float:
    """Largest elementwise relative error over the parameters in ``numeric``."""
    worst = 0.0
    for name, num in numeric.items():
        err = relative_error(analytic[name], num)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
