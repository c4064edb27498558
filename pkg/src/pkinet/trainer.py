"""Toy-scale training: synthetic shape classification with a linear head.

Four classes (small square, large square, small disc, large disc) drawn on
a Gaussian-noise background. The large shapes are three times the size of
the small ones, so a backbone must separate scale as well as shape.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .model import ModelGraph, backbone_forward, build_model, truncated_normal
from .optim import AdamWState, adamw_step

log = logging.getLogger(__name__)

NUM_CLASSES = 4
IMAGE_SIZE = 32
SMALL, LARGE = 6, 18
CLASS_NAMES = ("small-square", "large-square", "small-disc", "large-disc")


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step}: loss = {loss}")
        self.step = step
        self.loss = loss


@dataclass
class ToyDataset:
    images: np.ndarray  # (N, 3, 32, 32)
    labels: np.ndarray  # (N,)
    seed: int
    noise_std: float

    def __len__(self) -> int:
        return len(self.labels)


def _draw(canvas: np.ndarray, label: int, rng: np.random.Generator) -> None:
    size = LARGE if label % 2 else SMALL
    n = canvas.shape[-1]
    y0, x0 = rng.integers(0, n - size + 1, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    if label < 2:
        mask = np.ones((size, size), dtype=bool)
    else:
        r = size / 2
        mask = (yy + 0.5 - r) ** 2 + (xx + 0.5 - r) ** 2 <= r * r
    colour = rng.uniform(0.6, 1.0, size=3)
    patch = canvas[:, y0 : y0 + size, x0 : x0 + size]
    patch[:, mask] = colour[:, None]


def gen_synthetic(seed: int, n: int, noise_std: float = 0.1) -> ToyDataset:
    if n < 8:
        raise ValueError(f"need at least 8 samples, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % NUM_CLASSES)
    images = rng.normal(0.0, noise_std, size=(n, 3, IMAGE_SIZE, IMAGE_SIZE))
    for img, label in zip(images, labels):
        _draw(img, int(label), rng)
    return ToyDataset(images, labels, seed, noise_std)


@dataclass
class ToyModel:
    graph: ModelGraph
    head: dict[str, np.ndarray]

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {**self.graph.params, **self.head}

    def state(self) -> dict[str, np.ndarray]:
        """Everything needed to restore the model: parameters and norm buffers."""
        return {**self.params, **self.graph.buffers}


@dataclass
class TrainResult:
    losses: list[float]
    model: ToyModel
    optimizer: AdamWState = field(repr=False)

    def write_csv(self, path) -> None:
        write_loss_csv(path, self.losses)


def build_toy_model(cfg: ModelConfig, seed: int = 0) -> ToyModel:
    graph = build_model(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    c = cfg.stage_channels[-1]
    head = {
        "head.weight": truncated_normal(rng, (NUM_CLASSES, c, 1, 1), 0.02),
        "head.bias": np.zeros(NUM_CLASSES),
    }
    return ToyModel(graph, head)


def toy_loss(model: ToyModel, images, labels, params=None, train: bool = True):
    """Cross-entropy of the linear head on the pooled last-stage features."""
    p = params if params is not None else model.params
    feats = backbone_forward(model.graph, images, params=p, train=train)[-1]
    logits = ad.conv2d(ad.global_avg_pool(feats), p["head.weight"], p["head.bias"])
    return ad.softmax_cross_entropy(logits, labels)


def _batches(n: int, batch_size: int):
    """Fixed cyclic order, so the data stream does not depend on the weights."""
    start = 0
    while True:
        idx = np.arange(start, start + batch_size) % n
        yield idx
        start = (start + batch_size) % n


def train_toy(cfg: ModelConfig, dataset: ToyDataset, steps: int, lr: float, batch_size: int = 16,
              seed: int = 0, weight_decay: float = 0.05) -> TrainResult:
    model = build_toy_model(cfg, seed)
    opt = AdamWState(lr=lr, weight_decay=weight_decay)
    losses: list[float] = []
    batches = _batches(len(dataset), batch_size)
    for step in range(steps):
        idx = next(batches)
        tape = ad.Tape()
        params = {k: tape.var(v, k) for k, v in model.params.items()}
        loss = toy_loss(model, dataset.images[idx], dataset.labels[idx], params=params)
        value = float(loss.value)
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        grads = tape.backward(loss)
        adamw_step(model.params, {k: grads.get(v) for k, v in params.items()}, opt)
        # adamw_step updates the arrays in place, and model.params is a fresh
        # dict of the same arrays, so graph and head see the new values.
        losses.append(value)
        if step % 20 == 0:
            log.info("step %d loss %.4f", step, value)
    return TrainResult(losses, model, opt)


def write_loss_csv(path, losses) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            writer.writerow([i, repr(v)])


def loss_gradcheck(cfg: ModelConfig, dataset: ToyDataset, batch_size: int = 16, seed: int = 0,
                   n_params: int = 8, max_coords: int = 6) -> float:
    """Central-difference check of the step-0 training loss."""
    model = build_toy_model(cfg, seed)
    idx = np.arange(batch_size) % len(dataset)
    images, labels = dataset.images[idx], dataset.labels[idx]
    rng = np.random.default_rng(seed)
    names = list(rng.choice(sorted(model.params), size=n_params - 1, replace=False)) + ["head.weight"]
    base = model.params

    def fn(v):
        params = dict(base)
        params.update(zip(names, v))
        return toy_loss(model, images, labels, params=params)

    return ad.gradcheck(fn, [base[k] for k in names], max_coords=max_coords, seed=seed)


def accuracy(model: ToyModel, dataset: ToyDataset, train: bool = False) -> float:
    feats = backbone_forward(model.graph, dataset.images, train=train)[-1]
    logits = ad.conv2d(ad.global_avg_pool(feats), model.head["head.weight"], model.head["head.bias"])
    pred = np.asarray(logits).reshape(len(dataset), -1).argmax(axis=1)
    return float((pred == dataset.labels).mean())
