"""End-to-end runs driven by a RunConfig: corpus, training, evaluation, sweeps."""

from __future__ import annotations

import itertools
from dataclasses import replace
from typing import Callable, Sequence

import numpy as np
import torch

from .config import RunConfig, to_dict, with_overrides
from .data import SyntheticTask, gen_corpus, make_eval_set, make_task
from .harness import EvalReport, evaluate
from .model import TinyTransformer
from .noise import get_schedule
from .train import train


def build_task(cfg: RunConfig) -> SyntheticTask:
    return make_task(cfg.task.kind, **cfg.task.params)


def build_corpus(cfg: RunConfig, task: SyntheticTask | None = None) -> list[str]:
    task = task or build_task(cfg)
    return list(gen_corpus(task, cfg.task.corpus_size, np.random.default_rng(cfg.task.corpus_seed)))


def build_eval_set(cfg: RunConfig, task: SyntheticTask | None = None):
    task = task or build_task(cfg)
    return make_eval_set(task, cfg.task.eval_size, np.random.default_rng(cfg.task.eval_seed))


def train_run(cfg: RunConfig, on_step: Callable[[dict], None] | None = None):
    """Train a fresh model for ``cfg``; returns (model, history, task)."""
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    task = build_task(cfg)
    vocab = task.vocabulary()
    solutions = build_corpus(cfg, task)
    corpus = [vocab.encode_text(s) for s in solutions]
    aligned = [task.eval_split(s) for s in solutions]
    torch.manual_seed(cfg.seed)
    model = TinyTransformer(vocab, cfg.model)
    history = train(
        model,
        corpus,
        cfg.augment,
        get_schedule(cfg.schedule),
        cfg.policy,
        cfg.optim,
        seed=cfg.seed,
        aligned_splits=aligned,
        on_step=on_step,
    )
    return model, history, task


def generation_base(cfg: RunConfig):
    gen = cfg.generation
    if cfg.eval.greedy:
        gen = replace(gen, temperature=1e-6, top_p=1.0)
    return gen


def eval_run(
    model,
    task: SyntheticTask,
    cfg: RunConfig,
    rows,
    lengths: Sequence[int] | None = None,
    ablation: str = "full",
    oracle: bool = True,
) -> EvalReport:
    return evaluate(
        model,
        task,
        model.vocab,
        rows,
        tuple(lengths or cfg.eval.lengths),
        generation_base(cfg),
        ablation=ablation,
        seed=cfg.eval.seed,
        oracle=oracle,
    )


SWEEP_KEYS = {
    "p_merge": "augment.scheduler.p_merge",
    "mix_ratio": "augment.scheduler.mix_ratio",
    "inverse_scale": "augment.scheduler.inverse_scale",
    "kind": "augment.scheduler.kind",
}


def sweep(cfg: RunConfig, grid: dict[str, Sequence], on_point=None) -> list[dict]:
    """Train + evaluate once per grid point; returns one record per point."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("sweep grid must be non-empty")
    keys = list(grid)
    records = []
    for values in itertools.product(*(grid[k] for k in keys)):
        overrides = {SWEEP_KEYS.get(k, k): v for k, v in zip(keys, values)}
        point_cfg = with_overrides(cfg, overrides)
        model, history, task = train_run(point_cfg)
        rows = build_eval_set(point_cfg, task)
        report = eval_run(model, task, point_cfg, rows, oracle=False)
        rec = {
            "point": dict(zip(keys, [list(v) if isinstance(v, tuple) else v for v in values])),
            "avg_exact_match": report.row("avg").exact_match,
            "by_length": {str(r.length): r.exact_match for r in report.fixed_rows},
            "final_loss": history[-1]["loss"],
        }
        records.append(rec)
        if on_point is not None:
            on_point(rec)
    return records


def render_matrix(records: list[dict]) -> str:
    if not records:
        return ""
    lengths = list(records[0]["by_length"])
    head = f"{'point':<40}" + "".join(f"{L:>8}" for L in lengths) + f"{'avg':>8}"
    lines = [head, "-" * len(head)]
    for r in records:
        label = ", ".join(f"{k}={v}" for k, v in r["point"].items())
        lines.append(
            f"{label:<40}"
            + "".join(f"{100 * r['by_length'][L]:>8.1f}" for L in lengths)
            + f"{100 * r['avg_exact_match']:>8.1f}"
        )
    return "\n".join(lines)


def config_record(cfg: RunConfig) -> dict:
    return to_dict(cfg)
