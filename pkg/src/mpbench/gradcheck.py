"""Analytic-vs-finite-difference gradient checks for the learnable modules."""
from __future__ import annotations

import numpy as np

from mpbench.fusion import (
    ChannelProjection,
    FusionConfig,
    GateParams,
    TextEmbedding,
    backward,
    dtgf,
    dtgf_backward,
    forward,
    init_params,
    tgca,
    tgca_backward,
)
from mpbench.geo import GeoPoint
from mpbench.grid import GridSpec, ParamVector, finite_diff_gradient, relative_error

MODULES = ("dtgf", "tgca", "fusion")


def _problem(seed: int, dims, text_len: int, text_dim: int, d_model: int):
    t, c, h, w = dims
    rng = np.random.default_rng(seed)
    spec = GridSpec(
        lat_max=40.0, lon_min=116.0, H=h, W=w,
        levels=tuple(range(100, 100 * (c + 1), 100)), variables=("q",),
    )
    x = rng.standard_normal(dims)
    text = TextEmbedding(rng.standard_normal((text_len, text_dim)))
    params = init_params(c, text_dim, d_model, seed=seed + 1, random_bias=True)
    lat, lon = spec.lat_max - (h // 2) * spec.resolution, spec.lon_min + (w // 2) * spec.resolution
    return spec, x, text, params, [GeoPoint(lat, lon)]


def check_module(module: str, seed: int = 0, dims=(3, 2, 4, 4), h: float = 1e-3,
                 text_len: int = 3, text_dim: int = 5, d_model: int = 8,
                 patch: int = 2) -> dict:
    """Compare analytic gradients of ``sum(output)`` with central differences.

    Returns ``{"module", "max_rel_err", "per_param": {name: err}, "n_params"}``.
    """
    if module not in MODULES:
        raise ValueError(f"unknown module {module!r}; choose from {MODULES}")
    spec, x, text, params, points = _problem(seed, dims, text_len, text_dim, d_model)

    if module == "dtgf":
        p = ParamVector([("gate.a", params["gate.a"]), ("gate.b", params["gate.b"])])

        def loss(q):
            return dtgf(x, GateParams(float(q["gate.a"]), float(q["gate.b"])))[0].sum()

        ga, gb = dtgf_backward(x, GateParams(float(p["gate.a"]), float(p["gate.b"])),
                               np.ones_like(x))
        analytic = ParamVector([("gate.a", ga), ("gate.b", gb)])
    elif module == "tgca":
        p = ParamVector([("proj.weight", params["proj.weight"]), ("proj.bias", params["proj.bias"])])

        def loss(q):
            return tgca(x, text, ChannelProjection(q["proj.weight"], q["proj.bias"]))[0].sum()

        gw, gbias = tgca_backward(x, text, ChannelProjection(p["proj.weight"], p["proj.bias"]),
                                  np.ones_like(x))
        analytic = ParamVector([("proj.weight", gw), ("proj.bias", gbias)])
    else:
        p = params
        cfg = FusionConfig(patch=patch)

        def loss(q):
            return forward(x, points, text, q, cfg, spec).tokens.sum()

        n_tok = forward(x, points, text, p, cfg, spec).tokens.shape
        analytic = backward(x, points, text, p, np.ones(n_tok), cfg, spec)

    numeric = finite_diff_gradient(loss, p, h)
    per_param = {
        name: float(relative_error(analytic[name], numeric[name]).max()) for name in p.names
    }
    return {
        "module": module,
        "max_rel_err": max(per_param.values()),
        "n_params": p.size,
        "per_param": per_param,
    }
