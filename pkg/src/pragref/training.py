"""Shared training-loop plumbing for the two base models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nnsubstrate import Parameter


@dataclass
class TrainConfig:
    """Knobs for one training run.

    Optimizer defaults are set per model by the train functions (ADADELTA at
    0.2 for the listener, Adam at 0.004 for the speaker); epochs, batch size,
    and clipping are declared defaults, not tuned values.
    """

    epochs: int = 10
    batch_size: int = 32
    optimizer: str | None = None
    learning_rate: float | None = None
    grad_clip: float = 5.0
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_accuracy: float | None = None
    dev_perplexity: float | None = None


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1

    def best(self) -> EpochStats | None:
        for e in self.epochs:
            if e.epoch == self.best_epoch:
                return e
        return None


def same_length_batches(lengths: np.ndarray, order: np.ndarray,
                        batch_size: int):
    """Yield index arrays of equal-length rows, at most batch_size each.

    `order` fixes the shuffle; a stable sort on length inside that order keeps
    batching deterministic.
    """
    by_len = order[np.argsort(lengths[order], kind="stable")]
    start = 0
    n = len(by_len)
    while start < n:
        length = lengths[by_len[start]]
        end = start
        while end < n and lengths[by_len[end]] == length and end - start < batch_size:
            end += 1
        yield by_len[start:end]
        start = end


def snapshot_params(params: list[Parameter]) -> dict[str, np.ndarray]:
    return {p.name: p.data.copy() for p in params}


def restore_params(params: list[Parameter], snapshot: dict[str, np.ndarray]) -> None:
    for p in params:
        p.data = snapshot[p.name].copy()
