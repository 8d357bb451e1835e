"""Seeded triplet training loop.

Every step derives its own generator from ``(seed, step)``, so the batch
drawn and the augmentation applied at a step do not depend on how earlier
steps were executed. Negatives are rendered once without augmentation;
anchors and positives are re-rendered with fresh scale/shift jitter.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mining import AugmentationSpec, TripletStream, augment_joints
from .model import (
    AdaGradState,
    EmbeddingModel,
    adagrad_update,
    batch_loss,
    loss_and_gradients,
)
from .pose import PoseDataset
from .render import CanvasSpec, fit_joints, render_joints

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 600
    learning_rate: float = 0.05
    margin: float = 0.2
    steps: int = 1000
    seed: int = 0
    adagrad_epsilon: float = 1e-8
    hidden_sizes: tuple = (256, 64)
    embedding_dim: int = 32
    activation: str = "tanh"
    normalize_output: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


class TrainingDivergedError(FloatingPointError):
    """Non-finite loss. Carries the step and the model/optimizer state at that point."""

    def __init__(self, step, loss, model, state, batch_indices):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss
        self.model = model
        self.state = state
        self.batch_indices = batch_indices


def _step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(step, stream)))


def initial_model(config: TrainConfig, canvas: CanvasSpec) -> EmbeddingModel:
    sizes = (canvas.side * canvas.side, *config.hidden_sizes, config.embedding_dim)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0xFFFF_FFFF,)))
    return EmbeddingModel.initialize(
        sizes, rng, activation=config.activation, normalize_output=config.normalize_output
    )


class TripletImages:
    """Image provider for a training split.

    Holds fitted joints and the unaugmented renders; :meth:`batch` turns a
    ``(b, 3)`` index array into the three image stacks the loss consumes.
    """

    def __init__(self, train: PoseDataset, canvas: CanvasSpec, aug: AugmentationSpec | None):
        self.canvas = canvas
        self.aug = aug
        self.fitted = fit_joints(train.joints, canvas)
        self.plain = render_joints(self.fitted, canvas)

    def batch(self, idx: np.ndarray, rng: np.random.Generator | None = None):
        neg = self.plain[idx[:, 2]]
        if self.aug is None or rng is None:
            return self.plain[idx[:, 0]], self.plain[idx[:, 1]], neg
        jitter = augment_joints(self.fitted[idx[:, :2].reshape(-1)], self.aug, rng, self.canvas.side)
        imgs = render_joints(jitter, self.canvas).reshape(len(idx), 2, self.canvas.side, self.canvas.side)
        return imgs[:, 0], imgs[:, 1], neg


def train(
    stream: TripletStream,
    config: TrainConfig,
    canvas: CanvasSpec = CanvasSpec(),
    aug: AugmentationSpec | None = AugmentationSpec(),
    model: EmbeddingModel | None = None,
    images: TripletImages | None = None,
    log_every: int = 0,
):
    """Train from seeded random initialization.

    Returns ``(model, losses)`` where ``losses[k]`` is the mean triplet loss
    of the batch at step ``k``, measured before that step's update.
    """
    if model is None:
        model = initial_model(config, canvas)
    if images is None:
        images = TripletImages(stream.train, canvas, aug)
    params = [p.copy() for p in model.params]
    state = AdaGradState.zeros_like(params)
    aug_seed = config.seed if aug is None else aug.seed
    losses = np.empty(config.steps)
    for step in range(config.steps):
        idx = stream.sample(_step_rng(config.seed, step, 0), config.batch_size)
        batch = images.batch(idx, _step_rng(aug_seed, step, 1))
        loss, grads = loss_and_gradients(model.with_params(params), batch, config.margin)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss, model.with_params(params), state, idx)
        params, state = adagrad_update(params, grads, state, config.learning_rate, config.adagrad_epsilon)
        losses[step] = loss
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d  loss %.5f", step + 1, float(np.mean(losses[step + 1 - log_every : step + 1])))
    return model.with_params(params), losses


def evaluation_loss(model: EmbeddingModel, images: TripletImages, idx: np.ndarray, margin: float) -> float:
    """Mean triplet loss over fixed triplets without augmentation."""
    return batch_loss(model, images.batch(idx), margin)


def write_loss_csv(losses, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_loss"])
        for k, v in enumerate(losses):
            w.writerow([k, repr(float(v))])
