"""Minibatch training with Adam and divergence detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import DataSplits, Dataset, batches
from . import ops
from .model import Model
from .optim import Adam

EVAL_BATCH_SIZE = 256


@dataclass(frozen=True)
class TrainedMetrics:
    """Final scores of one training run.

    epoch_losses holds the per-epoch mean training cross-entropy, in order.
    """

    val_loss: float
    val_accuracy: float
    test_accuracy: float
    epoch_losses: tuple


def evaluate(model: Model, dataset: Dataset, batch_size: int = EVAL_BATCH_SIZE):
    """Returns (mean cross-entropy, accuracy) in evaluation mode."""
    n = len(dataset)
    total_loss = 0.0
    correct = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        for start in range(0, n, batch_size):
            images = dataset.images[start:start + batch_size]
            labels = dataset.labels[start:start + batch_size]
            logits = model.forward(images, training=False)
            loss, _ = ops.softmax_cross_entropy(logits, labels)
            total_loss += loss * images.shape[0]
            correct += int((logits.argmax(axis=1) == labels.argmax(axis=1)).sum())
    return total_loss / n, correct / n


def train(
    model: Model,
    data: DataSplits,
    epochs: int,
    batch_size: int,
    lr: float,
    rng,
) -> TrainedMetrics:
    """Trains in place and scores the result.

    Runs Adam over seeded shuffled minibatches for the given epoch count
    (0 scores the untrained network), then evaluates validation loss and
    accuracy plus test accuracy. Deterministic given the rng state. A
    non-finite loss aborts with TrainingDiverged.
    """
    if epochs < 0:
        raise ValueError(f"epoch count must be non-negative, got {epochs}")
    optimizer = Adam(model.parameters(), lr)
    n = len(data.train)
    epoch_losses = []
    # overflow policy is detect-and-raise, so numpy's warnings are redundant
    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        for _ in range(epochs):
            running = 0.0
            for images, labels in batches(data.train, batch_size, rng):
                logits = model.forward(images, training=True)
                loss, grad = ops.softmax_cross_entropy(logits, labels)
                if not math.isfinite(loss):
                    raise ops.TrainingDiverged(f"training loss became {loss}")
                model.backward(grad)
                optimizer.step()
                running += loss * images.shape[0]
            epoch_losses.append(running / n)
    val_loss, val_accuracy = evaluate(model, data.validation)
    _, test_accuracy = evaluate(model, data.test)
    return TrainedMetrics(val_loss, val_accuracy, test_accuracy, tuple(epoch_losses))
