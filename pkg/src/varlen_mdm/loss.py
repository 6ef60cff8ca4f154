"""Masked cross-entropy with time weighting and delete-calibrated token weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class WeightPolicy:
    mode: str = "balanced"  # balanced | uniform

    def __post_init__(self):
        if self.mode not in ("balanced", "uniform"):
            raise ValueError(f"unknown weight policy mode: {self.mode}")


def token_weights(
    targets: np.ndarray, masked: np.ndarray, delete_id: int, policy: WeightPolicy = WeightPolicy()
) -> np.ndarray:
    """Per-position loss weights for one example.

    ``targets`` holds the augmented token at every position of the noisy
    sequence and ``masked`` is a boolean flag array. With ``m`` masked
    positions of which ``d`` target ``[delete]``, balanced mode gives every
    masked non-delete target ``m / (m - d + 1)`` and each delete target that
    factor divided by ``d``. With no delete targets every masked weight is 1.
    Unmasked positions get 0.
    """
    masked = np.asarray(masked, dtype=bool)
    w = np.zeros(len(masked), dtype=np.float64)
    n_mask = int(masked.sum())
    if n_mask == 0:
        return w
    is_del = masked & (np.asarray(targets) == delete_id)
    n_del = int(is_del.sum())
    if policy.mode == "uniform" or n_del == 0:
        w[masked] = 1.0
        return w
    factor = n_mask / (n_mask - n_del + 1)
    w[masked] = factor
    w[is_del] = factor / n_del
    return w


@dataclass
class LossBatch:
    """Padded batch: logits (B, L, V), targets (B, L), mask_flags (B, L),
    time (B,), weights (B, L)."""

    logits: torch.Tensor
    targets: torch.Tensor
    mask_flags: torch.Tensor
    time: torch.Tensor
    weights: torch.Tensor

    def __post_init__(self):
        b, n = self.targets.shape
        if self.logits.shape[:2] != (b, n) or self.mask_flags.shape != (b, n):
            raise ValueError("logits, targets and mask_flags must share (batch, length)")
        if self.weights.shape != (b, n) or self.time.shape != (b,):
            raise ValueError("weights must be (batch, length) and time (batch,)")


def weighted_loss(batch: LossBatch, schedule) -> torch.Tensor:
    """Batch mean of -time_weight * sum over masked positions of token_weight * log p(target)."""
    if not torch.isfinite(batch.logits).all():
        raise FloatingPointError("non-finite logits")
    logp = F.log_softmax(batch.logits, dim=-1)
    tgt_logp = logp.gather(-1, batch.targets.unsqueeze(-1)).squeeze(-1)
    w = batch.weights * batch.mask_flags.to(batch.weights.dtype)
    # zero-weight positions may carry -inf log-probs (e.g. suppressed ids)
    per_token = torch.where(w > 0, w * tgt_logp, torch.zeros_like(tgt_logp))
    tw = torch.as_tensor(schedule.weight(batch.time.detach().cpu().numpy()), dtype=logp.dtype)
    per_example = -tw * per_token.sum(dim=-1)
    return per_example.mean()
