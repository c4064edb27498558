import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import avg_pool_loops, bn_eval_loops, conv2d_loops, sigmoid_scalar, silu_scalar
from pkinet import autodiff as ad
from pkinet.analysis import count_params
from pkinet.config import PKINET_S, PKINET_T, ConfigError, toy_config
from pkinet.model import (
    BN_EPS,
    backbone_forward,
    build_model,
    caa_forward,
    pki_block_forward,
    pki_module_forward,
    stage_forward,
)
from pkinet.plan import layer_plan
from pkinet.tensor import ShapeError

silu = np.vectorize(silu_scalar)
sigm = np.vectorize(sigmoid_scalar)


def identity_pointwise(c):
    return np.eye(c).reshape(c, c, 1, 1)


def delta(c, k):
    w = np.zeros((c, 1, k, k))
    w[:, 0, k // 2, k // 2] = 1.0
    return w


def zero_block_except(graph, prefix):
    for name, p in graph.params.items():
        if name.startswith(prefix) and (name.endswith(".weight") or name.endswith(".bias")):
            p[...] = 0.0


def test_stem_layout():
    stem = [l for l in layer_plan(PKINET_S) if l.name.startswith("stem.") and l.kind == "conv"]
    assert [(l.kernel, l.stride) for l in stem] == [((3, 3), 2), ((3, 3), 1), ((3, 3), 1)]
    assert stem[-1].out_channels == 64


def test_toy_backbone_shapes_and_trace():
    graph = build_model(toy_config())
    trace = []
    outs = backbone_forward(graph, np.zeros((2, 3, 32, 32)), trace=trace)
    assert [o.shape for o in outs] == [(2, 8, 8, 8), (2, 16, 4, 4), (2, 32, 2, 2), (2, 64, 1, 1)]
    assert trace[0] == ("stem.0.conv", (2, 8, 16, 16))


def test_full_s_forward_at_256():
    graph = build_model(PKINET_S, dtype=np.float32)
    x = np.random.default_rng(0).random((1, 3, 256, 256), dtype=np.float32)
    outs = backbone_forward(graph, x)
    assert [o.shape[1:] for o in outs] == [(64, 64, 64), (128, 32, 32), (256, 16, 16), (512, 8, 8)]
    assert all(o.dtype == np.float32 and np.isfinite(o).all() for o in outs)


@pytest.mark.parametrize("cfg", [PKINET_S, PKINET_T], ids=["S", "T"])
@pytest.mark.parametrize("size", [256, 512, 1024])
def test_static_shape_law(cfg, size):
    layers = {l.name: l for l in layer_plan(cfg, (size, size))}
    for s in range(4):
        out = layers[f"stage{s + 1}.fuse.conv"]
        assert out.out_hw == (size // 2 ** (s + 2),) * 2
        assert out.out_channels == cfg.stage_channels[s]


def test_input_size_must_divide_by_32():
    graph = build_model(toy_config())
    with pytest.raises(ShapeError):
        backbone_forward(graph, np.zeros((1, 3, 48, 48)))
    with pytest.raises(ShapeError):
        backbone_forward(graph, np.zeros((1, 1, 32, 32)))


def test_stage_rejects_wrong_channels():
    graph = build_model(toy_config())
    with pytest.raises(ShapeError):
        stage_forward(graph, 1, np.zeros((1, 9, 8, 8)))


def test_inconsistent_config_rejected():
    with pytest.raises(ConfigError, match="odd"):
        build_model(toy_config(pki_kernels=(3, 4), dilations=(1, 1)))


def test_determinism():
    a, b = build_model(toy_config(), seed=3), build_model(toy_config(), seed=3)
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    x = np.random.default_rng(1).normal(size=(1, 3, 32, 32))
    for oa, ob in zip(backbone_forward(a, x), backbone_forward(b, x)):
        assert np.array_equal(oa, ob)
    c = build_model(toy_config(), seed=4)
    assert not np.array_equal(a.params["stem.0.conv.weight"], c.params["stem.0.conv.weight"])


def test_zero_input_gives_zero_outputs():
    graph = build_model(toy_config(), seed=1)
    outs = backbone_forward(graph, np.zeros((1, 3, 32, 32)))
    assert all(np.array_equal(o, np.zeros_like(o)) for o in outs)


def test_pki_module_collapses_to_local_feature():
    cfg = toy_config(norm_act=False)
    graph = build_model(cfg, seed=2)
    name = "stage1.block0.pki"
    for m in range(1, 5):
        graph.params[f"{name}.branch{m}.weight"][...] = 0.0
    graph.params[f"{name}.fuse.conv.weight"][...] = identity_pointwise(4)
    x = np.random.default_rng(0).normal(size=(1, 4, 8, 8))
    local = conv2d_loops(x, graph.params[f"{name}.local.weight"], graph.params[f"{name}.local.bias"],
                         pad=(1, 1), groups=4)
    out = pki_module_forward(graph, 0, 0, x)
    assert np.allclose(out, local, rtol=1e-12, atol=1e-14)


def test_pki_module_preserves_shape():
    cfg = toy_config(stage_channels=(64, 16, 32, 64))
    out = pki_module_forward(build_model(cfg), 0, 0, np.ones((1, 32, 64, 64)))
    assert out.shape == (1, 32, 64, 64)


def randomised(cfg, seed):
    graph = build_model(cfg, seed=seed, init_std=0.5)
    rng = np.random.default_rng(seed)
    for name, p in graph.params.items():
        if name.endswith(("bias", "beta")):
            p[...] = rng.normal(scale=0.3, size=p.shape)
        elif name.endswith("gamma"):
            p[...] = rng.uniform(0.5, 1.5, size=p.shape)
    for name, b in graph.buffers.items():
        b[...] = rng.uniform(0.5, 1.5, size=b.shape) if name.endswith("var") else rng.normal(scale=0.2, size=b.shape)
    return graph


def oracle_unit(graph, name, x, act=True):
    p, b = graph.params, graph.buffers
    y = conv2d_loops(x, p[f"{name}.conv.weight"], p[f"{name}.conv.bias"])
    y = bn_eval_loops(y, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], b[f"{name}.bn.running_mean"],
                      b[f"{name}.bn.running_var"], BN_EPS)
    return silu(y) if act else y


def oracle_pki(graph, x, name="stage1.block0.pki"):
    p, cfg = graph.params, graph.cfg
    c = x.shape[1]
    k0 = cfg.pki_kernels[0]
    local = conv2d_loops(x, p[f"{name}.local.weight"], p[f"{name}.local.bias"], pad=(k0 // 2,) * 2, groups=c)
    acc = local.copy()
    for m, k in enumerate(cfg.pki_kernels[1:], start=1):
        acc += conv2d_loops(local, p[f"{name}.branch{m}.weight"], p[f"{name}.branch{m}.bias"],
                            pad=(k // 2,) * 2, groups=c)
    return oracle_unit(graph, f"{name}.fuse", acc)


def oracle_caa(graph, x, pk, name="stage1.block0.caa", kb=11):
    p, c = graph.params, x.shape[1]
    f = oracle_unit(graph, f"{name}.pre", avg_pool_loops(x, 7, 1, 3))
    f = conv2d_loops(f, p[f"{name}.h.weight"], p[f"{name}.h.bias"], pad=(0, kb // 2), groups=c)
    f = conv2d_loops(f, p[f"{name}.v.weight"], p[f"{name}.v.bias"], pad=(kb // 2, 0), groups=c)
    a = sigm(oracle_unit(graph, f"{name}.post", f, act=False))
    return a * pk + pk


TINY = toy_config(stage_channels=(4, 16, 32, 64))  # block width 2 in stage 1


@pytest.mark.parametrize("seed", [0, 1])
def test_pki_module_vs_composed_oracle(seed):
    graph = randomised(TINY, seed)
    x = np.random.default_rng(seed + 10).normal(size=(1, 2, 5, 5))
    out = pki_module_forward(graph, 0, 0, x)
    ref = oracle_pki(graph, x)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-10


@pytest.mark.parametrize("seed", [0, 1])
def test_caa_vs_composed_oracle(seed):
    graph = randomised(TINY, seed)
    rng = np.random.default_rng(seed + 20)
    x, pk = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(1, 2, 5, 5))
    out = caa_forward(graph, 0, 0, x, pk)
    ref = oracle_caa(graph, x, pk)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-10


def test_block_vs_composed_oracle():
    graph = randomised(TINY, 5)
    x = np.random.default_rng(7).normal(size=(1, 2, 5, 5))
    ref = oracle_unit(graph, "stage1.block1.out", oracle_caa(graph, x, oracle_pki(graph, x, "stage1.block1.pki"),
                                                              "stage1.block1.caa", kb=13))
    out = pki_block_forward(graph, 0, 1, x)
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-10


def test_caa_neutral_attention_gives_one_and_a_half():
    graph = build_model(toy_config(), seed=0)
    zero_block_except(graph, "stage2.block1.caa.post")
    rng = np.random.default_rng(0)
    x, pk = rng.normal(size=(1, 8, 4, 4)), rng.normal(size=(1, 8, 4, 4))
    out, attn = caa_forward(graph, 1, 1, x, pk, return_attention=True)
    assert np.array_equal(attn, np.full_like(attn, 0.5))
    assert np.array_equal(out, 1.5 * pk)


@given(st.integers(0, 10_000))
def test_gating_bound(seed):
    graph = randomised(TINY, seed % 50)
    rng = np.random.default_rng(seed)
    x, pk = rng.normal(size=(1, 2, 6, 6)), rng.normal(size=(1, 2, 6, 6))
    out, attn = caa_forward(graph, 0, 0, x, pk, return_attention=True)
    assert np.all((attn > 0) & (attn < 1))
    d = out - pk
    nz = pk != 0
    assert np.all(np.sign(d[nz]) == np.sign(pk[nz]))
    assert np.all(np.abs(d) <= np.abs(pk))


def test_single_block_scalar_trace():
    cfg = toy_config(caa_stages=(False,) * 4)
    graph = build_model(cfg, seed=0)
    zero_block_except(graph, "stage1.block0")
    p = graph.params
    p["stage1.block0.pki.local.weight"][...] = delta(4, 3)
    p["stage1.block0.pki.fuse.conv.weight"][...] = identity_pointwise(4)
    p["stage1.block0.out.conv.weight"][...] = identity_pointwise(4)
    x = np.random.default_rng(0).normal(size=(1, 4, 4, 4))
    s = 1.0 / np.sqrt(1.0 + BN_EPS)
    out = pki_block_forward(graph, 0, 0, x)
    assert np.allclose(out, silu(s * silu(s * x)), rtol=1e-13, atol=1e-15)


def test_caa_toggle_changes_block_output():
    x = np.random.default_rng(0).normal(size=(1, 4, 8, 8))
    on = pki_block_forward(build_model(toy_config(), seed=0, init_std=0.3), 0, 0, x)
    off = pki_block_forward(build_model(toy_config(caa_stages=(False,) * 4), seed=0, init_std=0.3), 0, 0, x)
    assert on.shape == off.shape and not np.allclose(on, off)


def test_block_residual_toggle():
    graph = build_model(toy_config(block_residual=True), seed=0)
    zero_block_except(graph, "stage1.block0")
    x = np.random.default_rng(0).normal(size=(1, 4, 4, 4))
    assert np.array_equal(pki_block_forward(graph, 0, 0, x), x)


def test_blocks_chain_preserves_shape():
    graph = build_model(toy_config(blocks=(3, 1, 1, 1)), seed=0)
    trace = []
    backbone_forward(graph, np.ones((1, 3, 32, 32)), trace=trace)
    outs = [shape for name, shape in trace if name.startswith("stage1.block") and name.endswith("out.conv")]
    assert outs == [(1, 4, 8, 8)] * 3


def test_csp_round_trip_with_identity_paths():
    cfg = toy_config(norm_act=False, ffn_ratio=1.0, blocks=(1, 1, 1, 1), caa_stages=(False,) * 4)
    graph = build_model(cfg, seed=0, init_std=0.3)
    p = graph.params
    p["stage1.ffn.expand.conv.weight"][...] = identity_pointwise(4)
    p["stage1.ffn.project.conv.weight"][...] = identity_pointwise(4)
    zero_block_except(graph, "stage1.block0")
    p["stage1.block0.pki.local.weight"][...] = delta(4, 3)
    p["stage1.block0.pki.fuse.conv.weight"][...] = identity_pointwise(4)
    p["stage1.block0.out.conv.weight"][...] = identity_pointwise(4)
    p["stage1.fuse.conv.weight"][...] = identity_pointwise(8)
    f = np.random.default_rng(0).normal(size=(1, 8, 16, 16))
    x = conv2d_loops(f, p["stage1.down.conv.weight"], p["stage1.down.conv.bias"], stride=2, pad=(1, 1))
    x = conv2d_loops(x, p["stage1.conv.conv.weight"], p["stage1.conv.conv.bias"], pad=(1, 1))
    out = stage_forward(graph, 0, f)
    assert np.allclose(out, x, rtol=1e-12, atol=1e-13)


def test_csp_disabled_routes_full_width():
    cfg = toy_config(csp=False)
    graph = build_model(cfg)
    assert "stage1.ffn.expand.conv.weight" not in graph.params
    assert graph.params["stage1.block0.pki.local.weight"].shape[0] == 8
    outs = backbone_forward(graph, np.ones((1, 3, 32, 32)))
    assert outs[0].shape == (1, 8, 8, 8)


@pytest.mark.parametrize("cfg", [PKINET_S, PKINET_T, toy_config(), toy_config(csp=False, norm_act=False),
                                 toy_config(pki_kernels=(3, 5), dilations=(1, 2), caa_stages=(True, False, True, False))])
def test_static_count_equals_allocated(cfg):
    assert count_params(cfg).params == build_model(cfg).num_params()


@given(st.lists(st.sampled_from([2, 4, 6]), min_size=4, max_size=4), st.lists(st.integers(1, 2), min_size=4, max_size=4),
       st.lists(st.sampled_from([1, 3, 5]), min_size=1, max_size=4), st.booleans(), st.booleans(),
       st.floats(0.5, 4.0))
def test_static_count_equals_allocated_property(widths, blocks, kernels, csp, norm_act, ratio):
    cfg = toy_config(stage_channels=tuple(widths), blocks=tuple(blocks), pki_kernels=tuple(kernels),
                     dilations=(1,) * len(kernels), csp=csp, norm_act=norm_act, ffn_ratio=ratio)
    assert count_params(cfg).params == build_model(cfg).num_params()


def test_every_parameter_receives_a_gradient():
    graph = build_model(toy_config(), seed=0)
    tape = ad.Tape()
    params = {k: tape.var(v, k) for k, v in graph.params.items()}
    outs = backbone_forward(graph, np.random.default_rng(0).normal(size=(2, 3, 32, 32)), params=params, train=True)
    probes = [np.random.default_rng(i).normal(size=ad.value(o).shape) for i, o in enumerate(outs)]
    loss = ad.sum_scalars(*[ad.total(ad.mul(o, q)) for o, q in zip(outs, probes)])
    grads = tape.backward(loss)
    missing = [k for k, v in params.items() if v not in grads]
    assert not missing
    nonzero = [k for k, v in params.items() if np.any(grads[v] != 0)]
    assert len(nonzero) > 0.9 * len(params)


def test_train_mode_updates_running_stats():
    graph = build_model(toy_config(), seed=0)
    before = graph.buffers["stem.0.bn.running_mean"].copy()
    backbone_forward(graph, np.random.default_rng(0).normal(size=(2, 3, 32, 32)) + 1, train=True)
    assert not np.array_equal(graph.buffers["stem.0.bn.running_mean"], before)
