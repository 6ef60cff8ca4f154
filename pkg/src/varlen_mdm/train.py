"""Training loop: augment, corrupt, weighted loss, Adam with warmup + cosine."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .data import fim_split
from .loss import LossBatch, WeightPolicy, token_weights, weighted_loss
from .model import TinyTransformer
from .noise import AugmentConfig, augment, corrupt
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    warmup_frac: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    # probability of using the task's canonical eval split instead of a uniform one
    aligned_split_prob: float = 0.0


@dataclass
class TrainExample:
    inputs: np.ndarray
    targets: np.ndarray
    masked: np.ndarray
    weights: np.ndarray
    t: float
    region: tuple[int, int]
    augmented: np.ndarray


def make_example(
    solution: np.ndarray,
    split: tuple[int, int],
    vocab: Vocabulary,
    aug: AugmentConfig,
    schedule,
    policy: WeightPolicy,
    rng: np.random.Generator,
    t: float | None = None,
) -> TrainExample:
    """One draw of clean -> augmented -> noisy for a fill-in-the-middle split."""
    i, j = split
    prefix, middle, suffix = solution[:i], solution[i:j], solution[j:]
    if t is None:
        t = float(rng.random())
    z_mid = augment(middle, t, aug, schedule, vocab, rng)
    augmented = np.concatenate([prefix, z_mid.tokens, suffix]).astype(np.int64)
    region = (len(prefix), len(prefix) + len(z_mid))
    noisy = corrupt(augmented, t, schedule, vocab, rng, region=region)
    masked = noisy.tokens == vocab.mask_id
    w = token_weights(augmented, masked, vocab.delete_id, policy)
    return TrainExample(noisy.tokens, augmented, masked, w, t, region, augmented)


def collate(examples: Sequence[TrainExample], pad_id: int):
    n = max(len(e.inputs) for e in examples)
    b = len(examples)
    ids = np.full((b, n), pad_id, dtype=np.int64)
    tgt = np.zeros((b, n), dtype=np.int64)
    flags = np.zeros((b, n), dtype=bool)
    w = np.zeros((b, n), dtype=np.float32)
    pad = np.ones((b, n), dtype=bool)
    for k, e in enumerate(examples):
        m = len(e.inputs)
        ids[k, :m], tgt[k, :m], flags[k, :m], w[k, :m] = e.inputs, e.targets, e.masked, e.weights
        pad[k, :m] = False
    t = np.array([e.t for e in examples], dtype=np.float32)
    return (
        torch.from_numpy(ids),
        torch.from_numpy(tgt),
        torch.from_numpy(flags),
        torch.from_numpy(w),
        torch.from_numpy(t),
        torch.from_numpy(pad),
    )


def lr_lambda(steps: int, warmup_frac: float) -> Callable[[int], float]:
    warm = max(1, int(round(warmup_frac * steps)))

    def f(step: int) -> float:
        if step < warm:
            return (step + 1) / warm
        progress = (step - warm) / max(1, steps - warm)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))

    return f


def train(
    model: TinyTransformer,
    corpus: Sequence[np.ndarray],
    aug: AugmentConfig,
    schedule,
    policy: WeightPolicy,
    opt_cfg: OptimConfig,
    seed: int = 0,
    aligned_splits: Sequence[tuple[int, int]] | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Run ``opt_cfg.steps`` updates; returns one metrics record per step."""
    if not len(corpus):
        raise ValueError("corpus must be non-empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    vocab = model.vocab
    opt = torch.optim.Adam(
        model.parameters(), lr=opt_cfg.lr, betas=opt_cfg.betas, weight_decay=opt_cfg.weight_decay
    )
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_lambda(opt_cfg.steps, opt_cfg.warmup_frac))
    model.train()
    history = []
    for step in range(opt_cfg.steps):
        batch = []
        for _ in range(opt_cfg.batch_size):
            k = int(rng.integers(len(corpus)))
            clean = corpus[k]
            if aligned_splits is not None and rng.random() < opt_cfg.aligned_split_prob:
                split = aligned_splits[k]
            else:
                split = fim_split(len(clean), rng)
            batch.append(make_example(clean, split, vocab, aug, schedule, policy, rng))
        ids, tgt, flags, w, t, pad = collate(batch, vocab.mask_id)
        logits = model(ids, pad)
        loss = weighted_loss(LossBatch(logits, tgt, flags, t, w), schedule)
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: lr={sched.get_last_lr()[0]:.3g}, "
                f"times={t.tolist()}"
            )
        opt.zero_grad(set_to_none=True)
        loss.backward()
        gnorm = torch.nn.utils.clip_grad_norm_(model.parameters(), opt_cfg.clip_norm)
        opt.step()
        sched.step()
        del_mass = float((w * (tgt == vocab.delete_id)).sum()) / len(batch)
        rec = {
            "step": step,
            "loss": float(loss.detach()),
            "masked": int(flags.sum()),
            "delete_weight": del_mass,
            "grad_norm": float(gnorm),
            "lr": float(sched.get_last_lr()[0]),
        }
        history.append(rec)
        if on_step is not None:
            on_step(rec)
        if step % 100 == 0:
            log.info("step %d loss %.4f", step, rec["loss"])
    model.eval()
    return history
