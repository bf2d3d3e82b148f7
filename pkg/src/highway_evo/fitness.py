"""Fitness functions for the EA.

The real objective (``NetworkFitness``) decodes a genotype, trains the
network on the given data splits, and returns its validation
cross-entropy (minimized).  The synthetic landscapes below make the EA
testable without touching the network stack:

* ``onemax_deficit`` — distance to the all-ones string; the classic
  unimodal sanity check.
* ``trap_deficit`` — concatenated deceptive traps: single-bit hill
  climbing leads to the all-zeros attractor, while the global optimum
  stays at all-ones.  Exercises escape from local optima.
* ``scripted_fitness`` — exact lookup table for unit tests that walk the
  algorithm branch by branch.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from .codec import bits_to_str, decode
from .data import DataSplits
from .nn import TrainingDiverged, build_network, train


@dataclass(frozen=True)
class TrainingConfig:
    """Per-evaluation training settings.

    ``threads`` is metadata only: it names the BLAS thread count the caller
    pinned, so results are reproducible per (genotype, seed, config).
    """

    epochs: int = 5
    batch_size: int = 128
    input_shape: tuple[int, int, int] = (1, 28, 28)
    threads: int = 1
    filters_as_kernels: bool = False


@dataclass(frozen=True)
class FitnessRecord:
    """Outcome of one network-training evaluation.

    ``status`` is "failed" exactly when training diverged, in which case
    ``fitness`` is the +inf sentinel the EA never accepts.
    """

    bits: str
    fitness: float
    validation_accuracy: float
    test_accuracy: float | None
    wall_time: float
    status: str

    def __post_init__(self):
        if (self.status == "failed") != math.isinf(self.fitness):
            raise ValueError("failed status and infinite fitness must coincide")


def derive_train_seed(base_seed: int, bits_key: str) -> int:
    """Stable per-genotype seed so each architecture trains reproducibly."""
    digest = hashlib.blake2b(f"{base_seed}:{bits_key}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


class NetworkFitness:
    """Trains decoded networks and scores them by validation cross-entropy.

    Instances bind the data splits, training config, and base seed; calling
    one with a genotype returns the fitness value, and ``evaluate`` returns
    the full record.  Results are cached per genotype, so re-scoring an
    unchanged parent costs nothing and repeated keys are identical.
    """

    def __init__(self, data: DataSplits, config: TrainingConfig, base_seed: int):
        self.data = data
        self.config = config
        self.base_seed = base_seed
        self.cache: dict[str, FitnessRecord] = {}

    def train_model(self, bits):
        """Train the decoded network afresh; returns (model, record).

        The model is None when training diverged.  The record is cached, so
        a later ``evaluate`` of the same genotype is free.
        """
        key = bits_to_str(bits)
        spec = decode(bits)
        rng = np.random.default_rng(derive_train_seed(self.base_seed, key))
        start = time.perf_counter()
        try:
            model = build_network(spec, input_shape=self.config.input_shape,
                                  rng=rng, genotype_bits=key,
                                  filters_as_kernels=self.config.filters_as_kernels)
            metrics = train(model, self.data, epochs=self.config.epochs,
                            batch_size=self.config.batch_size,
                            lr=spec.learning_rate, rng=rng)
        except TrainingDiverged:
            model = None
            record = FitnessRecord(
                bits=key, fitness=math.inf, validation_accuracy=0.0,
                test_accuracy=None, wall_time=time.perf_counter() - start,
                status="failed",
            )
        else:
            record = FitnessRecord(
                bits=key, fitness=metrics.val_loss,
                validation_accuracy=metrics.val_accuracy,
                test_accuracy=metrics.test_accuracy,
                wall_time=time.perf_counter() - start, status="ok",
            )
        self.cache[key] = record
        return model, record

    def evaluate(self, bits) -> FitnessRecord:
        cached = self.cache.get(bits_to_str(bits))
        if cached is not None:
            return cached
        return self.train_model(bits)[1]

    def __call__(self, bits) -> float:
        return self.evaluate(bits).fitness


def onemax_deficit(bits: np.ndarray) -> float:
    """N minus the number of one-bits; 0 at the all-ones optimum."""
    return float(bits.shape[0] - int(bits.sum()))


def trap_deficit(bits: np.ndarray, block: int = 5) -> float:
    """Concatenated deceptive trap, minimized, optimum at all-ones.

    Each block of ``block`` bits with ``u`` ones scores ``block`` when
    complete and ``block - 1 - u`` otherwise, so every one-bit added to an
    incomplete block makes it worse.  Returns N minus the total score.
    """
    n = bits.shape[0]
    if block < 1 or n % block != 0:
        raise ValueError(f"block size {block} must divide genotype length {n}")
    ones = bits.reshape(n // block, block).sum(axis=1)
    scores = np.where(ones == block, block, block - 1 - ones)
    return float(n - int(scores.sum()))


def scripted_fitness(table: dict[str, float]):
    """Pure lookup fitness over bit strings; a missing key is a test error."""
    def evaluate(bits: np.ndarray) -> float:
        key = bits.tobytes().translate(_BIT_CHARS).decode("ascii")
        if key not in table:
            raise KeyError(f"scripted fitness has no entry for genotype {key}")
        return table[key]
    return evaluate


_BIT_CHARS = bytes([48, 49]) + bytes(254)
