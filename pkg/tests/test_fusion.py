import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpbench.errors import BadPatch, LengthMismatch, ShapeMismatch, ValidationError
from mpbench.fusion import (
    PARAM_NAMES,
    ChannelProjection,
    FusionConfig,
    FusionParams,
    GateParams,
    TextEmbedding,
    apply_spatial_mask,
    apply_temporal_gates,
    backward,
    channel_descriptors,
    channel_weights_csv,
    contrast_loss,
    contrast_step,
    dtgf,
    dtgf_backward,
    forward,
    gates_csv,
    init_params,
    parallel_fuse,
    split_params,
    temporal_diffs,
    temporal_gates,
    tgca,
    tgca_apply,
    tgca_backward,
    tgca_weights,
    tgs,
)
from mpbench.geo import GeoPoint, gaussian_mask, grid_to_latlon
from mpbench.gradcheck import MODULES, check_module
from mpbench.grid import Grid4D, GridSpec, ParamVector, desk_spec, finite_diff_gradient, relative_error

from oracles import channel_descriptors_loops, max_abs_diff, temporal_diffs_loops, tgca_weights_loops


def rand(seed, shape, scale=1.0):
    return np.random.default_rng(seed).normal(0, scale, shape)


def spec_for(c, h, w):
    return GridSpec(40.0, 116.0, h, w, levels=tuple(range(100, 100 * (c + 1), 100)), variables=("t",))


# -- DTGF -------------------------------------------------------------------------------

def test_diffs_constant_in_time():
    x = np.broadcast_to(rand(0, (1, 2, 3, 3)), (5, 2, 3, 3))
    assert temporal_diffs(x).tolist() == [0.0] * 5


def test_diffs_unit_step():
    x1 = rand(1, (2, 3, 3))
    x = np.stack([x1, x1 + 1.0])
    assert np.allclose(temporal_diffs(x), [0.0, 1.0], atol=1e-12)


def test_diffs_seed_11_oracle():
    x = rand(11, (4, 2, 3, 3))
    assert max_abs_diff(temporal_diffs(x), temporal_diffs_loops(x)) <= 1e-6


def test_diffs_raw_l2():
    x = rand(2, (3, 2, 3, 3))
    raw = temporal_diffs(x, raw_l2=True)
    assert raw[0] == 0.0
    assert raw[2] == pytest.approx(np.linalg.norm(x[2] - x[1]))
    assert np.allclose(raw / math.sqrt(18), temporal_diffs(x))


def test_diffs_single_hour():
    assert temporal_diffs(rand(0, (1, 2, 2, 2))).tolist() == [0.0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_diffs_translation_invariant(seed, t):
    x = rand(seed, (t, 2, 3, 4))
    shift = rand(seed + 1, (1, 2, 3, 4), 5.0)
    assert np.allclose(temporal_diffs(x + shift), temporal_diffs(x), atol=1e-9)


def test_gates_examples():
    assert np.allclose(temporal_gates([0.3, 5.0, 0.0], GateParams(0.0, 1.2)), 1 / (1 + math.exp(-1.2)))
    assert np.allclose(temporal_gates([0.0, 1.0], GateParams(1.0, 0.0)), [0.5, 0.7310586], atol=1e-7)


def test_gates_constant_input_all_equal():
    x = np.broadcast_to(rand(0, (1, 2, 3, 3)), (4, 2, 3, 3))
    g = temporal_gates(temporal_diffs(x), GateParams(2.0, -0.5))
    assert len(set(g.tolist())) == 1


def test_apply_gates_identity_and_half():
    x = rand(3, (3, 2, 3, 3))
    assert np.array_equal(apply_temporal_gates(x, np.ones(3)), x)
    assert np.array_equal(apply_temporal_gates(x, np.full(3, 0.5)), x / 2)


def test_apply_gates_norm_ratio():
    x = rand(4, (4, 2, 3, 3))
    g = np.random.default_rng(4).uniform(0.01, 1, 4)
    out = apply_temporal_gates(x, g)
    ratios = [np.linalg.norm(out[t]) / np.linalg.norm(x[t]) for t in range(4)]
    assert np.allclose(ratios, g, atol=1e-6)


def test_apply_gates_length_mismatch():
    with pytest.raises(LengthMismatch):
        apply_temporal_gates(rand(0, (3, 1, 2, 2)), np.ones(2))


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.integers(0, 1000))
def test_apply_gates_scale_equivariant(k, seed):
    x = rand(seed, (3, 2, 2, 2))
    g = np.random.default_rng(seed).uniform(0, 1, 3)
    assert np.allclose(apply_temporal_gates(k * x, g), k * apply_temporal_gates(x, g))


def test_grid_in_grid_out():
    spec = spec_for(2, 3, 3)
    g = Grid4D(rand(5, (3, 2, 3, 3)), spec)
    out, gates = dtgf(g, GateParams())
    assert isinstance(out, Grid4D) and out.spec == spec and gates.shape == (3,)
    assert isinstance(tgca_apply(g, np.ones(2)), Grid4D)
    assert isinstance(apply_spatial_mask(g, np.ones((3, 3))), Grid4D)
    assert isinstance(apply_temporal_gates(rand(0, (3, 2, 3, 3)), np.ones(3)), np.ndarray)


# -- TGS --------------------------------------------------------------------------------

def test_mask_ones_identity():
    x = rand(6, (2, 2, 3, 4))
    for floor in (0.0, 0.1, 0.9):
        assert np.allclose(apply_spatial_mask(x, np.ones((3, 4)), floor), x)


def test_mask_zeros_floor_zero():
    assert not apply_spatial_mask(rand(6, (2, 2, 3, 4)), np.zeros((3, 4)), 0.0).any()


def test_mask_floor_cell_scaled():
    x = rand(7, (3, 2, 3, 4))
    m = np.ones((3, 4))
    m[1, 2] = 0.0
    out = apply_spatial_mask(x, m, 0.1)
    assert np.allclose(out[:, :, 1, 2], 0.1 * x[:, :, 1, 2], rtol=0, atol=1e-15)
    assert np.allclose(out[:, :, 0, 0], x[:, :, 0, 0])


def test_mask_errors():
    with pytest.raises(ShapeMismatch):
        apply_spatial_mask(rand(0, (1, 1, 3, 4)), np.ones((4, 3)))
    with pytest.raises(ValidationError):
        apply_spatial_mask(rand(0, (1, 1, 3, 4)), np.ones((3, 4)), floor=1.0)
    with pytest.raises(ValidationError):
        apply_spatial_mask(rand(0, (1, 1, 3, 4)), np.ones((3, 4)), floor=-0.1)


def test_tgs_needs_spec_for_arrays():
    with pytest.raises(ValidationError):
        tgs(rand(0, (1, 1, 3, 3)), [GeoPoint(40, 116)])


def test_tgs_uses_grid_spec():
    spec = desk_spec()
    g = Grid4D(rand(8, (2, 10, 16, 16)), spec)
    lat, lon = grid_to_latlon(3, 4, spec)
    out, mask = tgs(g, [GeoPoint(lat, lon)])
    assert mask[3, 4] == 1.0
    assert np.allclose(out.data[:, :, 3, 4], g.data[:, :, 3, 4])
    assert np.array_equal(mask, gaussian_mask([GeoPoint(lat, lon)], spec))


# -- TGCA -------------------------------------------------------------------------------

def test_descriptors_fill_and_channels():
    assert np.allclose(channel_descriptors(np.full((2, 3, 2, 2), 7.0)), [7.0] * 3)
    x = np.stack([np.zeros((2, 3, 3)), np.ones((2, 3, 3))], axis=1)
    assert channel_descriptors(x).tolist() == [0.0, 1.0]


def test_descriptors_seed_3_oracle():
    x = rand(3, (2, 3, 4, 4))
    assert max_abs_diff(channel_descriptors(x), channel_descriptors_loops(x)) <= 1e-6


def test_weights_single_token():
    rng = np.random.default_rng(0)
    y = TextEmbedding(rng.normal(0, 1, (1, 4)))
    proj = ChannelProjection(rng.normal(0, 1, (4, 3)), rng.normal(0, 1, 3))
    P = y.data @ proj.weight + proj.bias
    assert np.allclose(tgca_weights(rng.normal(0, 1, 3), y, proj), 1 / (1 + np.exp(-P[0])))


def test_weights_zero_projection():
    y = TextEmbedding.stub(3, 5, seed=1)
    w = tgca_weights(rand(0, 4), y, ChannelProjection(np.zeros((5, 4)), np.zeros(4)))
    assert w.tolist() == [0.5] * 4


def test_weights_seed_9_oracle():
    rng = np.random.default_rng(9)
    y = rng.normal(0, 1, (3, 5))
    wgt, b, v = rng.normal(0, 1, (5, 4)), rng.normal(0, 1, 4), rng.normal(0, 1, 4)
    got = tgca_weights(v, TextEmbedding(y), ChannelProjection(wgt, b))
    assert max_abs_diff(got, tgca_weights_loops(v, y, wgt, b)) <= 1e-6


def test_weights_shape_errors():
    y = TextEmbedding.stub(2, 5, seed=0)
    with pytest.raises(ShapeMismatch):
        tgca_weights(np.zeros(4), y, ChannelProjection(np.zeros((6, 4)), np.zeros(4)))
    with pytest.raises(ShapeMismatch):
        tgca_weights(np.zeros(3), y, ChannelProjection(np.zeros((5, 4)), np.zeros(4)))
    with pytest.raises(ShapeMismatch):
        ChannelProjection(np.zeros((5, 4)), np.zeros(3))
    with pytest.raises(ShapeMismatch):
        TextEmbedding(np.zeros((0, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 6), st.integers(1, 4))
def test_weights_repeated_token_invariance(seed, copies, c, d):
    # attention over identical tokens returns that token's projection
    rng = np.random.default_rng(seed)
    token = rng.normal(0, 1, (1, d))
    proj = ChannelProjection(rng.normal(0, 1, (d, c)), rng.normal(0, 1, c))
    v = rng.normal(0, 1, c)
    one = tgca_weights(v, TextEmbedding(token), proj)
    many = tgca_weights(v, TextEmbedding(np.repeat(token, copies, axis=0)), proj)
    assert np.allclose(one, many, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 3.0))
def test_gates_and_weights_in_open_unit_interval(seed, scale):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, scale, (4, 3, 3, 3))
    g = dtgf(x, GateParams(float(rng.normal()), float(rng.normal())))[1]
    assert ((g > 0) & (g < 1)).all()
    y = TextEmbedding(rng.normal(0, 1, (3, 4)))
    proj = ChannelProjection(rng.normal(0, 1, (4, 3)), rng.normal(0, 1, 3))
    w = tgca(x, y, proj)[1]
    assert ((w > 0) & (w < 1)).all()


def test_tgca_apply():
    x = rand(1, (2, 3, 2, 2))
    assert np.array_equal(tgca_apply(x, np.ones(3)), x)
    out = tgca_apply(x, [1.0, 0.0, 0.0])
    assert np.array_equal(out[:, 0], x[:, 0]) and not out[:, 1:].any()
    w = np.array([0.2, 0.7, 0.9])
    out = tgca_apply(x, w)
    ratios = [np.linalg.norm(out[:, c]) / np.linalg.norm(x[:, c]) for c in range(3)]
    assert np.allclose(ratios, w, atol=1e-6)
    with pytest.raises(LengthMismatch):
        tgca_apply(x, np.ones(2))


def test_identity_composition():
    x = rand(2, (3, 2, 4, 4))
    out_d, gates = dtgf(x, GateParams(0.0, 100.0))
    assert gates.tolist() == [1.0] * 3 and np.array_equal(out_d, x)
    assert np.array_equal(apply_spatial_mask(x, np.ones((4, 4)), 0.0), x)
    assert np.array_equal(tgca_apply(x, np.ones(2)), x)


# -- parallel fusion ----------------------------------------------------------------------

def _random_fusion(c, d_model=6, patch=2, seed=0):
    rng = np.random.default_rng(seed)
    return FusionParams(rng.normal(0, 0.2, (c, 3 * c, 3, 3, 3)), rng.normal(0, 0.1, c),
                        rng.normal(0, 0.5, (c, 2 * c)), rng.normal(0, 0.1, 2 * c),
                        rng.normal(0, 0.5, (2 * c, d_model)), rng.normal(0, 0.1, d_model), patch)


def test_fuse_zero_inputs():
    fp = _random_fusion(2)
    fp = FusionParams(fp.conv_weight, np.zeros(2), fp.w1, np.zeros(4), fp.w2, np.zeros(6), 2)
    z = np.zeros((3, 2, 4, 4))
    assert not parallel_fuse(z, z, z, fp).any()


def test_fuse_token_count():
    fp = _random_fusion(10, d_model=32, patch=4)
    x = rand(0, (12, 10, 16, 16))
    assert parallel_fuse(x, x, x, fp).shape == (12 * 4 * 4, 32)


def test_fuse_ceil_mode_token_count():
    fp = _random_fusion(2, patch=4)
    x = rand(0, (2, 2, 5, 6))
    assert parallel_fuse(x, x, x, fp).shape == (2 * 2 * 2, 6)


def test_fuse_identity_on_constant_field():
    c = 3
    vec = np.array([1.5, -2.0, 0.25])
    x = np.broadcast_to(vec[None, :, None, None], (2, c, 4, 4)).copy()
    fp = FusionParams.identity(c, patch=2)
    # padding zeros reach border cells only through off-centre taps, which are zero here
    tokens = parallel_fuse(x, rand(1, x.shape), rand(2, x.shape), fp)
    assert np.allclose(tokens, np.tile(vec, (2 * 2 * 2, 1)))


def test_fuse_token_order_matches_manual_pooling():
    c = 2
    x = rand(3, (2, c, 5, 6))
    fp = FusionParams.identity(c, patch=4)
    tokens = parallel_fuse(x, np.zeros_like(x), np.zeros_like(x), fp)
    expected = []
    for t in range(2):
        for r0 in (0, 4):
            for c0 in (0, 4):
                expected.append(x[t, :, r0:r0 + 4, c0:c0 + 4].mean(axis=(1, 2)))
    assert np.allclose(tokens, np.array(expected), atol=1e-12)


def test_fuse_errors():
    fp = _random_fusion(2, patch=2)
    x = rand(0, (2, 2, 4, 4))
    with pytest.raises(ShapeMismatch):
        parallel_fuse(x, x, rand(0, (2, 2, 4, 5)), fp)
    with pytest.raises(ShapeMismatch):
        parallel_fuse(*(rand(0, (2, 3, 4, 4)),) * 3, fp)
    big = FusionParams(fp.conv_weight, fp.conv_bias, fp.w1, fp.b1, fp.w2, fp.b2, patch=5)
    with pytest.raises(BadPatch):
        parallel_fuse(x, x, x, big)
    with pytest.raises(BadPatch):
        FusionParams(fp.conv_weight, fp.conv_bias, fp.w1, fp.b1, fp.w2, fp.b2, patch=0)


def test_fusion_params_shape_validation():
    fp = _random_fusion(2)
    with pytest.raises(ShapeMismatch):
        FusionParams(fp.conv_weight[:, :5], fp.conv_bias, fp.w1, fp.b1, fp.w2, fp.b2)
    with pytest.raises(ShapeMismatch):
        FusionParams(fp.conv_weight, fp.conv_bias, fp.w1[:1], fp.b1, fp.w2, fp.b2)
    with pytest.raises(ShapeMismatch):
        FusionParams(fp.conv_weight, fp.conv_bias, fp.w1, fp.b1, fp.w2[:2], fp.b2)


# -- gradients ---------------------------------------------------------------------------

@pytest.mark.parametrize("module", MODULES)
@pytest.mark.parametrize("seed", [0, 5, 11])
def test_gradcheck_modules(module, seed):
    res = check_module(module, seed=seed)
    assert res["max_rel_err"] < 1e-3, res["per_param"]
    assert res["n_params"] > 0


def test_gradcheck_counts_all_fusion_params():
    res = check_module("fusion", seed=1)
    assert set(res["per_param"]) == set(PARAM_NAMES)


def test_dtgf_gradient_raw_l2():
    x = rand(4, (3, 2, 4, 4))
    p = ParamVector([("a", 0.3), ("b", -0.2)])

    def loss(q):
        return dtgf(x, GateParams(float(q["a"]), float(q["b"])), raw_l2=True)[0].sum()

    ga, gb = dtgf_backward(x, GateParams(0.3, -0.2), np.ones_like(x), raw_l2=True)
    num = finite_diff_gradient(loss, p)
    assert relative_error(ga, num["a"]).max() < 1e-3
    assert relative_error(gb, num["b"]).max() < 1e-3


def test_full_backward_with_random_upstream_gradient():
    rng = np.random.default_rng(21)
    spec = spec_for(2, 4, 4)
    x = rng.normal(0, 1, (3, 2, 4, 4))
    text = TextEmbedding(rng.normal(0, 1, (2, 3)))
    params = init_params(2, 3, 4, seed=3, random_bias=True)
    cfg = FusionConfig(patch=3)  # ceil-mode pooling with ragged edge patches
    pts = [GeoPoint(*grid_to_latlon(1, 2, spec))]
    n = forward(x, pts, text, params, cfg, spec).tokens.shape
    gt = rng.normal(0, 1, n)
    analytic = backward(x, pts, text, params, gt, cfg, spec)
    numeric = finite_diff_gradient(lambda q: float((forward(x, pts, text, q, cfg, spec).tokens * gt).sum()),
                                   params)
    worst = max(float(relative_error(analytic[k], numeric[k]).max()) for k in params.names)
    assert worst < 1e-3


def test_tgca_backward_matches_fd_on_weighted_loss():
    rng = np.random.default_rng(8)
    x = rng.normal(0, 1, (2, 3, 3, 3))
    y = TextEmbedding(rng.normal(0, 1, (4, 2)))
    up = rng.normal(0, 1, x.shape)
    p = ParamVector([("w", rng.normal(0, 1, (2, 3))), ("b", rng.normal(0, 1, 3))])
    gw, gb = tgca_backward(x, y, ChannelProjection(p["w"], p["b"]), up)
    num = finite_diff_gradient(lambda q: float((tgca(x, y, ChannelProjection(q["w"], q["b"]))[0] * up).sum()), p)
    assert relative_error(gw, num["w"]).max() < 1e-3
    assert relative_error(gb, num["b"]).max() < 1e-3


# -- parameters, forward, exports ------------------------------------------------------------

def test_init_params_layout():
    p = init_params(10, 16, 32, seed=0)
    assert p.names == list(PARAM_NAMES)
    s = p.shapes
    assert s["conv.weight"] == (10, 30, 3, 3, 3)
    assert s["mlp.w1"] == (10, 20) and s["mlp.w2"] == (20, 32)
    assert s["proj.weight"] == (16, 10)
    gate, proj, fuse = split_params(p, patch=4)
    assert (gate.a, gate.b) == (1.0, 0.0)
    assert fuse.hidden == 20 and fuse.d_model == 32 and proj.C == 10


def test_init_params_deterministic():
    a, b = init_params(4, 3, 5, seed=9), init_params(4, 3, 5, seed=9)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init_params(4, 3, 5, seed=10).flat())


def test_forward_desk_scale():
    spec = desk_spec()
    g = Grid4D(rand(0, (12, 10, 16, 16)), spec)
    res = forward(g, [GeoPoint(39.9, 116.4)], TextEmbedding.stub(4, 16, 0), init_params(10, 16, 32, 0))
    assert res.tokens.shape == (192, 32)
    assert res.gates.shape == (12,) and res.channel_weights.shape == (10,)
    assert res.mask.shape == (16, 16) and res.mask.max() == 1.0


def test_gates_csv():
    text = gates_csv([0.5, 0.25])
    assert text.splitlines() == ["t,gate", "0,0.5", "1,0.25"]


def test_channel_weights_csv():
    spec = desk_spec()
    lines = channel_weights_csv(np.linspace(0.1, 0.9, 10), spec).splitlines()
    assert lines[0] == "variable,level_hPa,weight"
    assert lines[1].startswith("t,100,") and lines[-1].startswith("q,950,")
    assert len(lines) == 11
    with pytest.raises(LengthMismatch):
        channel_weights_csv(np.ones(3), spec)


def test_contrast_step_lowers_loss():
    rng = np.random.default_rng(2)
    xb = rng.normal(0, 1, (3, 4, 3, 3))
    xe = xb.copy()
    xe[:, 2] += 3.0
    y = TextEmbedding(rng.normal(0, 1, (2, 5)))
    proj = ChannelProjection(rng.normal(0, 0.3, (5, 4)), np.zeros(4))
    after = contrast_step(xe, xb, y, proj, lr=1e-3)
    assert contrast_loss(xe, xb, y, after) < contrast_loss(xe, xb, y, proj)
    w0 = tgca_weights(channel_descriptors(xe), y, proj)
    w1 = tgca_weights(channel_descriptors(xe), y, after)
    assert w1[2] - w0[2] > max(w1[c] - w0[c] for c in (0, 1, 3))
