"""Cross-entropy plus truncated temporal MSE over log-probabilities."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    smoothing_weight: float = 0.15  # lambda
    truncation: float = 4.0  # tau
    clamp_floor: float = 1e-8
    detach_previous: bool = True

    def __post_init__(self):
        if self.smoothing_weight < 0:
            raise ValueError("smoothing weight must be >= 0")
        if not self.truncation > 0:
            raise ValueError("truncation threshold must be > 0")
        if not 0 < self.clamp_floor < 1:
            raise ValueError("clamp_floor must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_labels(labels: np.ndarray, T: int, L: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (T,):
        raise DataError(f"expected {T} labels, got shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= L))
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} at sample {bad[0]} outside [0, {L})")
    return labels.astype(int)


def ce_loss(probs: Tensor, labels, clamp_floor: float = 1e-8) -> Tensor:
    """Mean over samples of -log p(true class)."""
    T, L = probs.shape
    labels = _check_labels(labels, T, L)
    picked = tn.getitem(probs, (np.arange(T), labels))
    return tn.neg(tn.tensor_mean(tn.log(tn.clamp(picked, lower=clamp_floor))))


def tmse_loss(probs: Tensor, truncation: float = 4.0, clamp_floor: float = 1e-8,
              detach_previous: bool = True) -> Tensor:
    """Truncated squared change of log-probabilities between consecutive samples.

    Normalised by T*L.  With ``detach_previous`` the earlier sample is held
    constant in the gradient.
    """
    T, L = probs.shape
    if T < 2:
        return Tensor(0.0)
    logp = tn.log(tn.clamp(probs, lower=clamp_floor))
    current = logp[1:]
    previous = Tensor(logp.data[:-1]) if detach_previous else logp[:-1]
    delta = tn.absolute(tn.sub(current, previous))
    if math.isfinite(truncation):
        delta = tn.clamp(delta, upper=truncation)
    return tn.scale(tn.tensor_sum(tn.square(delta)), 1.0 / (T * L))


def combined_loss(stages: Sequence[Tensor], labels, cfg: LossConfig = LossConfig()) -> Tensor:
    """Sum over stages of CE + lambda * T-MSE."""
    total = None
    for probs in stages:
        term = ce_loss(probs, labels, cfg.clamp_floor)
        if cfg.smoothing_weight:
            smooth = tmse_loss(probs, cfg.truncation, cfg.clamp_floor, cfg.detach_previous)
            term = tn.add(term, tn.scale(smooth, cfg.smoothing_weight))
        total = term if total is None else tn.add(total, term)
    return total
