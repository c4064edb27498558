"""Finite-difference checks of every differentiable op and of a toy backbone.

Shared by the test-suite and the ``gradcheck`` CLI command. Each check
contracts the op output with a fixed random tensor so that no gradient is
trivially uniform.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import ModelConfig, toy_config
from .model import backbone_forward, build_model, pki_block_forward

H_STEP = 1e-5


def _probe(rng, out_shape):
    return rng.normal(size=out_shape)


def _contract(out, probe):
    return ad.total(ad.mul(out, probe))


def _op_cases(rng):
    """name -> (fn over list of inputs, list of input arrays)."""
    x = rng.normal(size=(2, 4, 6, 6))
    y = rng.normal(size=(2, 4, 6, 6))
    cases = {}

    def with_probe(name, op, inputs):
        shape = ad.value(op(inputs)).shape
        probe = _probe(rng, shape)
        cases[name] = (lambda v: _contract(op(v), probe), inputs)

    with_probe("add", lambda v: ad.add(v[0], v[1]), [x, y])
    with_probe("mul", lambda v: ad.mul(v[0], v[1]), [x, y])
    with_probe("scale", lambda v: ad.scale(v[0], -2.5), [x])
    with_probe("sigmoid", lambda v: ad.sigmoid(v[0]), [x])
    with_probe("silu", lambda v: ad.silu(v[0]), [x])
    with_probe("global_avg_pool", lambda v: ad.global_avg_pool(v[0]), [x])
    with_probe("avg_pool2d", lambda v: ad.avg_pool2d(v[0], 3, 1, 1), [x])
    with_probe("avg_pool2d_strided", lambda v: ad.avg_pool2d(v[0], 3, 2, 1), [x])
    with_probe("split_concat", lambda v: ad.channel_concat(*reversed(ad.channel_split(v[0], 1))), [x])
    with_probe("conv2d_dense", lambda v: ad.conv2d(v[0], v[1], v[2], stride=2, pad=(1, 1)),
               [x, rng.normal(size=(3, 4, 3, 3)), rng.normal(size=3)])
    with_probe("conv2d_grouped", lambda v: ad.conv2d(v[0], v[1], v[2], pad=(1, 1), groups=2),
               [x, rng.normal(size=(6, 2, 3, 3)), rng.normal(size=6)])
    with_probe("conv2d_depthwise_dilated", lambda v: ad.conv2d(v[0], v[1], v[2], pad=(2, 2), dilation=2, groups=4),
               [x, rng.normal(size=(4, 1, 3, 3)), rng.normal(size=4)])
    with_probe("pointwise", lambda v: ad.conv2d(v[0], v[1], v[2]),
               [x, rng.normal(size=(5, 4, 1, 1)), rng.normal(size=5)])
    with_probe("strip_pair",
               lambda v: ad.conv2d(ad.conv2d(v[0], v[1], v[2], pad=(0, 2), groups=4), v[3], v[4], pad=(2, 0), groups=4),
               [x, rng.normal(size=(4, 1, 1, 5)), rng.normal(size=4), rng.normal(size=(4, 1, 5, 1)), rng.normal(size=4)])
    with_probe("batch_norm_batch_stats", lambda v: ad.batch_norm(v[0], v[1], v[2]),
               [x, rng.normal(size=4), rng.normal(size=4)])
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2.0, size=4)
    with_probe("batch_norm_running_stats", lambda v: ad.batch_norm(v[0], v[1], v[2], rm, rv),
               [x, rng.normal(size=4), rng.normal(size=4)])
    with_probe("gated_residual", lambda v: ad.add(ad.mul(ad.sigmoid(v[0]), v[1]), v[1]), [x, y])
    labels = rng.integers(0, 4, size=2)
    cases["cross_entropy"] = (lambda v: ad.softmax_cross_entropy(v[0], labels), [rng.normal(size=(2, 4, 1, 1))])
    return cases


def op_gradchecks(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    return {name: ad.gradcheck(fn, inputs, h=H_STEP) for name, (fn, inputs) in _op_cases(rng).items()}


def block_gradcheck(seed: int = 0, channels: int = 8, size: int = 16, max_coords: int = 24) -> float:
    """One full PKI block (module + attention + output conv) at toy width."""
    cfg = toy_config(stage_channels=(2 * channels, 16, 32, 64))
    graph = build_model(cfg, seed=seed, init_std=0.3)
    rng = np.random.default_rng(seed + 1000)
    x = rng.normal(size=(2, channels, size, size))
    names = sorted(k for k in graph.params if k.startswith("stage1.block0."))
    probe = _probe(rng, x.shape)

    def fn(v):
        params = dict(graph.params)
        params.update(zip(names, v[1:]))
        return _contract(pki_block_forward(graph, 0, 0, v[0], params=params, train=True), probe)

    return ad.gradcheck(fn, [x] + [graph.params[k] for k in names], h=H_STEP, max_coords=max_coords, seed=seed)


def backbone_gradcheck(seed: int = 0, cfg: ModelConfig | None = None, n_params: int = 8,
                       max_coords: int = 6, batch: int = 2, size: int = 32, train: bool = False) -> float:
    """Whole toy backbone on a small batch, sampled over input and parameter coordinates.

    Norm layers use (randomised) running statistics by default. With B=2 the
    last stage is 1x1, so batch statistics would normalise two numbers and
    the map becomes nearly a step function that central differences at
    h=1e-5 cannot resolve. Batch-statistic norms are checked per op and on a
    full block instead.
    """
    cfg = cfg or toy_config()
    graph = build_model(cfg, seed=seed, init_std=0.3)
    rng = np.random.default_rng(seed + 2000)
    for key, buf in graph.buffers.items():
        if key.endswith("running_mean"):
            buf[...] = rng.normal(scale=0.1, size=buf.shape)
        else:
            buf[...] = rng.uniform(0.5, 2.0, size=buf.shape)
    image = rng.normal(size=(batch, cfg.in_channels, size, size))
    names = list(rng.choice(sorted(graph.params), size=n_params, replace=False))
    shapes = [o.shape for o in backbone_forward(graph, image)]
    probes = [_probe(rng, s) for s in shapes]

    def fn(v):
        params = dict(graph.params)
        params.update(zip(names, v[1:]))
        outs = backbone_forward(graph, v[0], params=params, train=train)
        return ad.sum_scalars(*[_contract(o, p) for o, p in zip(outs, probes)])

    return ad.gradcheck(fn, [image] + [graph.params[k] for k in names], h=H_STEP,
                        max_coords=max_coords, seed=seed)
