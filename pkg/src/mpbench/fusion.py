"""Plug-and-play fusion modules over ``(T, C, H, W)`` fields.

* DTGF: per-hour sigmoid gates driven by the size of the change between
  consecutive hours.
* TGS: a Gaussian spatial mask around the coordinates named in the query.
* TGCA: per-channel sigmoid weights from attention between the channel
  descriptor vector and projected text tokens.
* :func:`parallel_fuse`: concatenates the three branch outputs, mixes them
  with a 3x3x3 convolution, average-pools spatial patches and maps every
  pooled vector through a two-layer MLP into tokens.

Every operation accepts a :class:`~mpbench.grid.Grid4D` or a float64
``(T, C, H, W)`` array. Grid in, grid out; array in, float64 array out. The
array path is what the gradient checks use, so no precision is lost to the
float32 storage of :class:`Grid4D`.

The ``*_backward`` functions return parameter gradients for an arbitrary
upstream gradient; :func:`forward` / :func:`backward` chain them through the
whole block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mpbench import kernels
from mpbench.errors import BadPatch, LengthMismatch, ShapeMismatch, ValidationError
from mpbench.geo import GeoPoint, channel_of, gaussian_mask
from mpbench.grid import Grid4D, GridSpec, ParamVector, conv3d, sigmoid, softmax


def _values(x) -> np.ndarray:
    if isinstance(x, Grid4D):
        return x.data.astype(np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected a (T,C,H,W) field, got shape {arr.shape}")
    return arr


def _like(x, arr: np.ndarray):
    return x.with_data(arr) if isinstance(x, Grid4D) else arr


# -- parameter containers -----------------------------------------------------

@dataclass(frozen=True)
class GateParams:
    """Affine map ``a * delta + b`` feeding the gate sigmoid, shared over hours."""

    a: float = 1.0
    b: float = 0.0


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    data: np.ndarray  # (L, D)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch(f"text embedding must be (L>=1, D>=1), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("text embedding has non-finite entries")
        object.__setattr__(self, "data", arr)

    @property
    def L(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    @classmethod
    def stub(cls, L: int, D: int, seed: int) -> "TextEmbedding":
        """Seeded standard-normal stand-in for a real text encoder."""
        return cls(np.random.default_rng(seed).standard_normal((L, D)))


@dataclass(frozen=True, eq=False)
class ChannelProjection:
    weight: np.ndarray  # (D, C)
    bias: np.ndarray  # (C,)

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ShapeMismatch(f"projection weight {w.shape} / bias {b.shape} disagree")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def D(self) -> int:
        return self.weight.shape[0]

    @property
    def C(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True, eq=False)
class FusionParams:
    conv_weight: np.ndarray  # (C, 3C, 3, 3, 3)
    conv_bias: np.ndarray  # (C,)
    w1: np.ndarray  # (C, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, d_model)
    b2: np.ndarray  # (d_model,)
    patch: int = 4

    def __post_init__(self):
        for name in ("conv_weight", "conv_bias", "w1", "b1", "w2", "b2"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        c = self.conv_weight.shape[0]
        if self.conv_weight.shape != (c, 3 * c, 3, 3, 3):
            raise ShapeMismatch(f"conv weight must be (C,3C,3,3,3), got {self.conv_weight.shape}")
        if self.conv_bias.shape != (c,):
            raise ShapeMismatch("conv bias must have C entries")
        if self.w1.shape[0] != c or self.b1.shape != (self.w1.shape[1],):
            raise ShapeMismatch("first MLP layer must map C -> hidden")
        if self.w2.shape[0] != self.w1.shape[1] or self.b2.shape != (self.w2.shape[1],):
            raise ShapeMismatch("second MLP layer must map hidden -> d_model")
        if self.patch < 1:
            raise BadPatch(f"patch must be >= 1, got {self.patch}")

    @property
    def C(self) -> int:
        return self.conv_bias.shape[0]

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    @property
    def d_model(self) -> int:
        return self.b2.shape[0]

    @classmethod
    def identity(cls, C: int, patch: int = 4) -> "FusionParams":
        """Conv passes the first branch through; the MLP is ``relu(x) - relu(-x)``."""
        k = np.zeros((C, 3 * C, 3, 3, 3))
        for c in range(C):
            k[c, c, 1, 1, 1] = 1.0
        eye = np.eye(C)
        return cls(
            conv_weight=k,
            conv_bias=np.zeros(C),
            w1=np.hstack([eye, -eye]),
            b1=np.zeros(2 * C),
            w2=np.vstack([eye, -eye]),
            b2=np.zeros(C),
            patch=patch,
        )


# -- DTGF ---------------------------------------------------------------------

def temporal_diffs(x, raw_l2: bool = False) -> np.ndarray:
    """Per-hour change magnitude; entry 0 is 0 by convention.

    Returns the RMS difference to the previous hour over all C*H*W cells, or
    the plain L2 norm when ``raw_l2`` is set.
    """
    arr = _values(x)
    sq = kernels.temporal_sq_diffs(np.ascontiguousarray(arr))
    if not raw_l2:
        sq = sq / (arr.shape[1] * arr.shape[2] * arr.shape[3])
    return np.sqrt(sq)


def temporal_gates(delta: Sequence[float], p: GateParams) -> np.ndarray:
    d = np.asarray(delta, dtype=np.float64)
    return np.atleast_1d(sigmoid(p.a * d + p.b))


def apply_temporal_gates(x, g):
    arr = _values(x)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (arr.shape[0],):
        raise LengthMismatch(f"{g.size} gates for {arr.shape[0]} time steps")
    return _like(x, arr * g[:, None, None, None])


def dtgf(x, p: GateParams, raw_l2: bool = False):
    """Gate every hour of ``x``; returns ``(gated field, gates)``."""
    gates = temporal_gates(temporal_diffs(x, raw_l2), p)
    return apply_temporal_gates(x, gates), gates


def dtgf_backward(x, p: GateParams, grad_out, raw_l2: bool = False) -> tuple[float, float]:
    """Gradient of the loss w.r.t. ``(a, b)`` given dL/d(output)."""
    arr = _values(x)
    delta = temporal_diffs(arr, raw_l2)
    g = temporal_gates(delta, p)
    dg = np.einsum("tchw,tchw->t", np.asarray(grad_out, dtype=np.float64), arr)
    dz = dg * g * (1.0 - g)
    return float(dz @ delta), float(dz.sum())


# -- TGS ----------------------------------------------------------------------

def apply_spatial_mask(x, mask, floor: float = 0.1):
    """Scale every (t, c) slice by ``floor + (1 - floor) * mask``."""
    arr = _values(x)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != arr.shape[2:]:
        raise ShapeMismatch(f"mask {m.shape} does not match grid {arr.shape[2:]}")
    if not 0.0 <= floor < 1.0:
        raise ValidationError(f"floor must be in [0, 1), got {floor}")
    return _like(x, arr * (floor + (1.0 - floor) * m))


def tgs(x, points: Sequence[GeoPoint], spec: GridSpec | None = None,
        sigma_g: float = 2.0, floor: float = 0.1, clamp: bool = True):
    """Mask ``x`` around ``points``; returns ``(masked field, mask)``."""
    if spec is None:
        if not isinstance(x, Grid4D):
            raise ValidationError("a GridSpec is needed to place points on a raw array")
        spec = x.spec
    mask = gaussian_mask(points, spec, sigma_g, clamp=clamp)
    return apply_spatial_mask(x, mask, floor), mask


# -- TGCA ---------------------------------------------------------------------

def channel_descriptors(x) -> np.ndarray:
    return _values(x).mean(axis=(0, 2, 3))


def _tgca_forward(v, y: TextEmbedding, proj: ChannelProjection):
    v = np.asarray(v, dtype=np.float64)
    if proj.D != y.D:
        raise ShapeMismatch(f"projection expects D={proj.D}, text has D={y.D}")
    if v.shape != (proj.C,):
        raise ShapeMismatch(f"{v.size} descriptors for a {proj.C}-channel projection")
    P = y.data @ proj.weight + proj.bias  # (L, C)
    logits = P @ v / math.sqrt(proj.C)
    alpha = softmax(logits)
    s = alpha @ P
    return P, alpha, s, sigmoid(np.atleast_1d(s))


def tgca_weights(v, y: TextEmbedding, proj: ChannelProjection) -> np.ndarray:
    """Per-channel weights in (0, 1) from descriptor/text attention."""
    return _tgca_forward(v, y, proj)[3]


def tgca_apply(x, w):
    arr = _values(x)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (arr.shape[1],):
        raise LengthMismatch(f"{w.size} channel weights for {arr.shape[1]} channels")
    return _like(x, arr * w[None, :, None, None])


def tgca(x, y: TextEmbedding, proj: ChannelProjection):
    """Re-weight channels of ``x``; returns ``(weighted field, weights)``."""
    w = tgca_weights(channel_descriptors(x), y, proj)
    return tgca_apply(x, w), w


def tgca_backward(x, y: TextEmbedding, proj: ChannelProjection, grad_out):
    """Gradient w.r.t. ``(proj.weight, proj.bias)`` given dL/d(output)."""
    arr = _values(x)
    v = channel_descriptors(arr)
    P, alpha, _, w = _tgca_forward(v, y, proj)
    dw = np.einsum("tchw,tchw->c", np.asarray(grad_out, dtype=np.float64), arr)
    ds = dw * w * (1.0 - w)
    dP = np.outer(alpha, ds)
    dalpha = P @ ds
    dlogits = alpha * (dalpha - alpha @ dalpha)
    dP += np.outer(dlogits, v) / math.sqrt(proj.C)
    return y.data.T @ dP, dP.sum(axis=0)


# -- parallel fusion ------------------------------------------------------------

def _patch_bounds(n: int, p: int) -> np.ndarray:
    return np.arange(0, n, p)


def _patch_sizes(n: int, p: int) -> np.ndarray:
    starts = _patch_bounds(n, p)
    return np.minimum(starts + p, n) - starts


def _check_patch(p: int, h: int, w: int):
    if p < 1 or p > h or p > w:
        raise BadPatch(f"patch {p} does not fit a {h}x{w} grid")


def _fuse_intermediates(x_dtgf, x_tgs, x_tgca, p: FusionParams):
    branches = [_values(b) for b in (x_dtgf, x_tgs, x_tgca)]
    shape = branches[0].shape
    if any(b.shape != shape for b in branches[1:]):
        raise ShapeMismatch(f"branch shapes differ: {[b.shape for b in branches]}")
    t, c, h, w = shape
    if c != p.C:
        raise ShapeMismatch(f"fusion params built for C={p.C}, field has C={c}")
    _check_patch(p.patch, h, w)
    # (T, 3C, H, W) -> (3C, T, H, W)
    xcat = np.ascontiguousarray(np.concatenate(branches, axis=1).transpose(1, 0, 2, 3))
    conv = conv3d(xcat, p.conv_weight, p.conv_bias)  # (C, T, H, W)
    rs, cs = _patch_bounds(h, p.patch), _patch_bounds(w, p.patch)
    counts = np.outer(_patch_sizes(h, p.patch), _patch_sizes(w, p.patch))
    sums = np.add.reduceat(np.add.reduceat(conv, rs, axis=2), cs, axis=3)
    pooled = (sums / counts).transpose(1, 2, 3, 0).reshape(-1, c)  # (N, C)
    pre = pooled @ p.w1 + p.b1
    hid = np.maximum(pre, 0.0)
    tokens = hid @ p.w2 + p.b2
    return xcat, conv, counts, pooled, pre, hid, tokens


def parallel_fuse(x_dtgf, x_tgs, x_tgca, p: FusionParams) -> np.ndarray:
    """Fuse the three branch outputs into ``(T * ceil(H/p) * ceil(W/p), d_model)`` tokens.

    Token order is time, then patch row, then patch column. Edge patches
    smaller than ``p`` average only the cells they cover.
    """
    return _fuse_intermediates(x_dtgf, x_tgs, x_tgca, p)[-1]


def parallel_fuse_backward(x_dtgf, x_tgs, x_tgca, p: FusionParams, grad_tokens):
    """Returns ``(param grads dict, (d_dtgf, d_tgs, d_tgca))``.

    Branch gradients are ``(T, C, H, W)`` arrays.
    """
    xcat, conv, counts, pooled, pre, hid, _ = _fuse_intermediates(x_dtgf, x_tgs, x_tgca, p)
    c, t, h, w = conv.shape
    gt = np.asarray(grad_tokens, dtype=np.float64)
    grads = {"mlp.w2": hid.T @ gt, "mlp.b2": gt.sum(axis=0)}
    dpre = (gt @ p.w2.T) * (pre > 0)
    grads["mlp.w1"] = pooled.T @ dpre
    grads["mlp.b1"] = dpre.sum(axis=0)
    dpooled = dpre @ p.w1.T  # (N, C)
    nph, npw = counts.shape
    dsums = dpooled.reshape(t, nph, npw, c).transpose(3, 0, 1, 2) / counts
    dconv = np.repeat(
        np.repeat(dsums, _patch_sizes(h, p.patch), axis=2), _patch_sizes(w, p.patch), axis=3
    )
    dconv = np.ascontiguousarray(dconv)
    grads["conv.bias"] = dconv.sum(axis=(1, 2, 3))
    grads["conv.weight"] = kernels.conv3d_backward_kernel(dconv, xcat)
    dx = kernels.conv3d_backward_input(dconv, p.conv_weight).transpose(1, 0, 2, 3)
    return grads, (dx[:, :c], dx[:, c:2 * c], dx[:, 2 * c:])


# -- whole block --------------------------------------------------------------

@dataclass(frozen=True)
class FusionConfig:
    sigma_g: float = 2.0
    floor: float = 0.1
    patch: int = 4
    raw_l2: bool = False
    clamp: bool = True


PARAM_NAMES = (
    "gate.a", "gate.b", "proj.weight", "proj.bias",
    "conv.weight", "conv.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
)


def init_params(C: int, D: int, d_model: int, seed: int, hidden: int | None = None,
                random_bias: bool = False) -> ParamVector:
    """Seeded parameter set for the whole block. Hidden width defaults to 2C."""
    rng = np.random.default_rng(seed)
    hidden = 2 * C if hidden is None else hidden

    def bias(n, scale=0.1):
        return rng.normal(0.0, scale, n) if random_bias else np.zeros(n)

    return ParamVector([
        ("gate.a", 1.0),
        ("gate.b", rng.normal(0.0, 0.5) if random_bias else 0.0),
        ("proj.weight", rng.normal(0.0, 1.0 / math.sqrt(D), (D, C))),
        ("proj.bias", bias(C)),
        ("conv.weight", rng.normal(0.0, 1.0 / math.sqrt(3 * C * 27), (C, 3 * C, 3, 3, 3))),
        ("conv.bias", bias(C)),
        ("mlp.w1", rng.normal(0.0, math.sqrt(2.0 / C), (C, hidden))),
        ("mlp.b1", bias(hidden)),
        ("mlp.w2", rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, d_model))),
        ("mlp.b2", bias(d_model)),
    ])


def split_params(params: ParamVector, patch: int = 4):
    gate = GateParams(float(params["gate.a"]), float(params["gate.b"]))
    proj = ChannelProjection(params["proj.weight"], params["proj.bias"])
    fuse = FusionParams(
        conv_weight=params["conv.weight"],
        conv_bias=params["conv.bias"],
        w1=params["mlp.w1"],
        b1=params["mlp.b1"],
        w2=params["mlp.w2"],
        b2=params["mlp.b2"],
        patch=patch,
    )
    return gate, proj, fuse


@dataclass
class ForwardResult:
    tokens: np.ndarray
    gates: np.ndarray
    mask: np.ndarray
    channel_weights: np.ndarray
    branches: tuple = field(repr=False)


def forward(x, points: Sequence[GeoPoint], text: TextEmbedding, params: ParamVector,
            config: FusionConfig = FusionConfig(), spec: GridSpec | None = None) -> ForwardResult:
    """Run DTGF, TGS and TGCA in parallel on ``x`` and fuse them into tokens."""
    if spec is None and isinstance(x, Grid4D):
        spec = x.spec
    arr = _values(x)
    gate, proj, fuse = split_params(params, config.patch)
    x_d, gates = dtgf(arr, gate, config.raw_l2)
    x_s, mask = tgs(arr, points, spec, config.sigma_g, config.floor, config.clamp)
    x_c, w = tgca(arr, text, proj)
    tokens = parallel_fuse(x_d, x_s, x_c, fuse)
    return ForwardResult(tokens, gates, mask, w, (x_d, x_s, x_c))


def backward(x, points: Sequence[GeoPoint], text: TextEmbedding, params: ParamVector,
             grad_tokens, config: FusionConfig = FusionConfig(),
             spec: GridSpec | None = None) -> ParamVector:
    """Gradient of a token loss w.r.t. every parameter, given dL/d(tokens)."""
    res = forward(x, points, text, params, config, spec)
    arr = _values(x)
    gate, proj, fuse = split_params(params, config.patch)
    grads, (d_d, _, d_c) = parallel_fuse_backward(*res.branches, fuse, grad_tokens)
    ga, gb = dtgf_backward(arr, gate, d_d, config.raw_l2)
    gw, gbias = tgca_backward(arr, text, proj, d_c)
    grads.update({"gate.a": ga, "gate.b": gb, "proj.weight": gw, "proj.bias": gbias})
    return ParamVector((name, grads[name]) for name in params.names)


# -- contrastive update used to probe channel selectivity ----------------------

def contrast_loss(x_event, x_base, y: TextEmbedding, proj: ChannelProjection) -> float:
    """Negative squared distance between TGCA outputs of an event field and a
    reference field; lower when TGCA keeps the channels that differ."""
    ye, _ = tgca(_values(x_event), y, proj)
    yb, _ = tgca(_values(x_base), y, proj)
    return -float(((ye - yb) ** 2).sum())


def contrast_step(x_event, x_base, y: TextEmbedding, proj: ChannelProjection,
                  lr: float) -> ChannelProjection:
    """One gradient-descent step on :func:`contrast_loss`."""
    xe, xb = _values(x_event), _values(x_base)
    ye, _ = tgca(xe, y, proj)
    yb, _ = tgca(xb, y, proj)
    g = -2.0 * (ye - yb)
    w_e, b_e = tgca_backward(xe, y, proj, g)
    w_b, b_b = tgca_backward(xb, y, proj, -g)
    return ChannelProjection(proj.weight - lr * (w_e + w_b), proj.bias - lr * (b_e + b_b))


# -- weight exports -----------------------------------------------------------

def gates_csv(gates) -> str:
    lines = ["t,gate"]
    lines += [f"{t},{float(g)!r}" for t, g in enumerate(np.asarray(gates).ravel())]
    return "\n".join(lines) + "\n"


def channel_weights_csv(weights, spec: GridSpec) -> str:
    w = np.asarray(weights).ravel()
    if w.size != spec.n_channels:
        raise LengthMismatch(f"{w.size} weights for {spec.n_channels} channels")
    lines = ["variable,level_hPa,weight"]
    for i, val in enumerate(w):
        var, lev = channel_of(i, spec)
        lines.append(f"{var},{lev},{float(val)!r}")
    return "\n".join(lines) + "\n"
