"""Command line: gen-corpus, train, eval, sweep, trace."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data
from .config import ConfigError, RunConfig, dump_config, from_dict, load_config, to_dict
from .engine import GenerationError, InvariantViolation
from .harness import ABLATIONS, render_storyboard, run_one
from .model import load_checkpoint, save_checkpoint
from .noise import get_schedule
from .runner import (
    build_eval_set,
    build_task,
    eval_run,
    generation_base,
    render_matrix,
    sweep,
    train_run,
)
from .train import make_example
from .vocab import save_vocabulary, write_token_records

log = logging.getLogger("varlen_mdm")


def _load_cfg(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _cfg_from_checkpoint(extra: dict, override_path=None) -> RunConfig:
    if override_path:
        return load_config(override_path)
    return from_dict(extra["config"]) if "config" in extra else RunConfig()


def _lengths(text: str | None, cfg: RunConfig):
    if not text:
        return cfg.eval.lengths
    out = tuple(int(x) for x in text.split(","))
    if not out:
        raise ConfigError(["--lengths: must be non-empty"])
    return out


def cmd_gen_corpus(args) -> int:
    task = data.make_task(args.task, **json.loads(args.params))
    rng = np.random.default_rng(args.seed)
    if args.eval:
        data.write_eval_set(args.out, data.make_eval_set(task, args.count, rng))
    else:
        data.write_corpus(args.out, data.gen_corpus(task, args.count, rng))
    print(f"wrote {args.count} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_augmented:
        _dump_augmented(cfg, Path(args.dump_augmented), args.dump_count)
    log_path = out / "train_log.jsonl"
    with open(log_path, "w", encoding="utf-8") as logf:
        model, history, task = train_run(
            cfg, on_step=lambda rec: logf.write(json.dumps(rec, sort_keys=True) + "\n")
        )
    save_checkpoint(model, out / "checkpoint.bin", extra={"config": to_dict(cfg)})
    save_vocabulary(model.vocab, out / "vocab.txt")
    dump_config(cfg, out / "config.yaml")
    first, last = history[0]["loss"], history[-1]["loss"]
    print(f"trained {len(history)} steps: loss {first:.4f} -> {last:.4f}; checkpoint {out / 'checkpoint.bin'}")
    return 0


def _dump_augmented(cfg: RunConfig, path: Path, count: int) -> None:
    """Write alternating augmented / noisy records for ``count`` training draws."""
    from .runner import build_corpus

    task = build_task(cfg)
    vocab = task.vocabulary()
    rng = np.random.default_rng(cfg.seed)
    sols = build_corpus(cfg, task)[:count]
    recs = []
    for s in sols:
        clean = vocab.encode_text(s)
        ex = make_example(
            clean, data.fim_split(len(clean), rng), vocab, cfg.augment, get_schedule(cfg.schedule), cfg.policy, rng
        )
        recs += [ex.augmented, ex.inputs]
    write_token_records(path, recs, vocab)


def _eval_rows(args, cfg, task):
    if args.eval_set:
        return data.read_eval_set(args.eval_set)
    return build_eval_set(cfg, task)


def cmd_eval(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    cfg = _cfg_from_checkpoint(extra, args.config)
    if args.greedy:
        cfg = from_dict({**to_dict(cfg), "eval": {**to_dict(cfg.eval), "greedy": True}})
    task = build_task(cfg)
    rows = _eval_rows(args, cfg, task)
    if args.limit:
        rows = rows[: args.limit]
    lengths = _lengths(args.lengths, cfg)
    ablations = args.ablation or list(cfg.eval.ablations)
    records = []
    for ab in ablations:
        if ab not in ABLATIONS:
            raise ConfigError([f"--ablation: unknown ablation {ab!r}; choose from {sorted(ABLATIONS)}"])
        report = eval_run(model, task, cfg, rows, lengths, ablation=ab, oracle=not args.no_oracle)
        print(report.render())
        records.extend(report.to_records())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for r in records:
                f.write(json.dumps(r, sort_keys=True) + "\n")
    return 0


def _parse_grid(items):
    grid = {}
    for item in items or []:
        key, _, values = item.partition("=")
        vals = []
        for v in values.split(","):
            if ":" in v:
                vals.append(tuple(float(x) for x in v.split(":")))
            else:
                try:
                    vals.append(float(v))
                except ValueError:
                    vals.append(v)
        grid[key] = vals
    return grid


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args.config)
    grid = _parse_grid(args.grid)
    if not grid:
        raise ConfigError(["--grid: give at least one key=v1,v2 entry"])
    out = open(args.out, "w", encoding="utf-8") if args.out else None
    try:
        records = sweep(
            cfg, grid, on_point=(lambda r: out.write(json.dumps(r, sort_keys=True) + "\n")) if out else None
        )
    finally:
        if out:
            out.close()
    print(render_matrix(records))
    return 0


def cmd_trace(args) -> int:
    from dataclasses import replace

    model, extra = load_checkpoint(args.checkpoint)
    cfg = _cfg_from_checkpoint(extra, args.config)
    task = build_task(cfg)
    if args.prompt is not None:
        prefix, _, suffix = args.prompt.partition("\t") if "\t" in args.prompt else args.prompt.partition("||")
        row = (prefix + suffix, len(prefix), len(prefix))
    else:
        row = _eval_rows(args, cfg, task)[args.index]
    lines = []
    if args.init_len > 0:
        gen = replace(generation_base(cfg), init_mask_len=args.init_len)
        _, em, ok, st = run_one(model, task, model.vocab, row, gen, np.random.default_rng(args.seed), trace=True)
        board = render_storyboard(st.trajectory)
        lines = st.trajectory
    else:
        # nothing to denoise: the storyboard is empty
        board = ""
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(board)
    if args.records:
        with open(args.records, "w", encoding="utf-8") as f:
            for rec in lines:
                f.write(json.dumps(rec) + "\n")
    sys.stdout.write(board)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varlen-mdm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-corpus", help="write a synthetic corpus or eval set")
    g.add_argument("--task", default="key-value", choices=sorted(data.TASKS))
    g.add_argument("--params", default="{}", help="JSON task parameters")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eval", action="store_true", help="add tab-separated split points")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train a denoiser from a run config")
    t.add_argument("--config")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--dump-augmented", metavar="PATH", help="write augmented/noisy record pairs")
    t.add_argument("--dump-count", type=int, default=20)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint across initial mask lengths")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="override the config stored in the checkpoint")
    e.add_argument("--eval-set")
    e.add_argument("--lengths", help="comma separated, e.g. 4,8,16,32,64")
    e.add_argument("--ablation", action="append", choices=sorted(ABLATIONS))
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--no-oracle", action="store_true")
    e.add_argument("--limit", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train+eval over a scheduler grid")
    s.add_argument("--config")
    s.add_argument("--grid", action="append", help="key=v1,v2 (mix_ratio values as a:b)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("trace", help="write a step-by-step storyboard for one prompt")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--config")
    r.add_argument("--prompt", help="prefix<TAB>suffix (or prefix||suffix)")
    r.add_argument("--eval-set")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--init-len", type=int, default=8)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--records", help="also write per-step JSON records")
    r.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return 3
    except GenerationError as e:
        print(f"generation failed: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
