"""Evaluation sweeps over initial mask lengths, ablations and trajectory rendering."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import SyntheticTask, split_example
from .engine import GenerationConfig, generate
from .vocab import Vocabulary, assemble_prompt

ABLATIONS = {
    "full": {},
    "no-expand": {"expand_enabled": False},
    "no-delete": {"delete_enabled": False},
    "no-expand-delete": {"expand_enabled": False, "delete_enabled": False},
    "no-broadcast": {"broadcasting": False},
}


@dataclass
class EvalRow:
    length: int | str
    exact_match: float
    pass_rate: float
    mean_steps: float
    mean_expansions: float
    mean_delete_steps: float
    n: int


@dataclass
class EvalReport:
    """One row per initial mask length, then ``avg`` (unweighted over the
    fixed lengths) and ``oracle`` (initial length = true middle length)."""

    ablation: str
    rows: list[EvalRow] = field(default_factory=list)
    outputs: dict = field(default_factory=dict, repr=False)

    def row(self, length) -> EvalRow:
        for r in self.rows:
            if r.length == length:
                return r
        raise KeyError(length)

    @property
    def fixed_rows(self) -> list[EvalRow]:
        return [r for r in self.rows if isinstance(r.length, int)]

    def to_records(self) -> list[dict]:
        return [{"ablation": self.ablation, **asdict(r)} for r in self.rows]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.to_records())

    def render(self) -> str:
        head = f"{'ablation':<18}{'length':>8}{'EM%':>8}{'pass%':>8}{'steps':>9}{'expand':>8}{'delete':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{self.ablation:<18}{str(r.length):>8}{100 * r.exact_match:>8.1f}"
                f"{100 * r.pass_rate:>8.1f}{r.mean_steps:>9.2f}{r.mean_expansions:>8.2f}"
                f"{r.mean_delete_steps:>8.2f}"
            )
        lines.append("(avg: unweighted mean over the fixed initial lengths)")
        return "\n".join(lines)


def _aggregate(length, results) -> EvalRow:
    n = len(results)
    em = sum(r[0] for r in results)
    ok = sum(r[1] for r in results)
    return EvalRow(
        length=length,
        exact_match=em / n,
        pass_rate=ok / n,
        mean_steps=sum(r[2] for r in results) / n,
        mean_expansions=sum(r[3] for r in results) / n,
        mean_delete_steps=sum(r[4] for r in results) / n,
        n=n,
    )


def run_one(
    model,
    task: SyntheticTask,
    vocab: Vocabulary,
    row: tuple[str, int, int],
    cfg: GenerationConfig,
    rng: np.random.Generator,
    trace: bool = False,
):
    solution, i, j = row
    ex = split_example(vocab.encode_text(solution), i, j)
    prompt, region = assemble_prompt(ex, cfg.init_mask_len, vocab)
    state = generate(prompt, region, model, cfg, vocab, rng, trace=trace)
    middle = vocab.decode_text(state.region)
    full = solution[:i] + middle + solution[j:]
    return middle, middle == solution[i:j], task.validate(full), state


def evaluate(
    model,
    task: SyntheticTask,
    vocab: Vocabulary,
    rows: Sequence[tuple[str, int, int]],
    lengths: Sequence[int],
    base: GenerationConfig,
    ablation: str = "full",
    seed: int = 0,
    oracle: bool = True,
    keep_outputs: bool = False,
) -> EvalReport:
    if not lengths:
        raise ValueError("lengths must be non-empty")
    flags = ABLATIONS[ablation]
    report = EvalReport(ablation=ablation)
    settings = [(L, L) for L in lengths]
    if oracle:
        settings.append(("oracle", None))
    for key, L in settings:
        results = []
        outs = []
        for idx, row in enumerate(rows):
            init = L if L is not None else max(1, row[2] - row[1])
            cfg = replace(base, init_mask_len=init, **flags)
            # per-prompt stream: results do not depend on evaluation order
            rng = np.random.default_rng([seed, idx, init, 0 if L is not None else 1])
            middle, em, ok, st = run_one(model, task, vocab, row, cfg, rng)
            results.append((em, ok, st.steps_done, st.expansions_done, st.delete_steps))
            outs.append(middle)
        report.rows.append(_aggregate(key, results))
        if keep_outputs:
            report.outputs[key] = outs
        if key == lengths[-1]:
            fixed = report.fixed_rows
            report.rows.append(
                EvalRow(
                    length="avg",
                    exact_match=float(np.mean([r.exact_match for r in fixed])),
                    pass_rate=float(np.mean([r.pass_rate for r in fixed])),
                    mean_steps=float(np.mean([r.mean_steps for r in fixed])),
                    mean_expansions=float(np.mean([r.mean_expansions for r in fixed])),
                    mean_delete_steps=float(np.mean([r.mean_delete_steps for r in fixed])),
                    n=sum(r.n for r in fixed),
                )
            )
    return report


def render_storyboard(trajectory: list[dict]) -> str:
    """Human-readable step-by-step view of a traced generation."""
    if not trajectory or len(trajectory) == 1 and "[mask]" not in trajectory[0]["region"]:
        return ""
    out = []
    for rec in trajectory:
        cells = " ".join("_" if s == "[mask]" else s for s in rec["region"])
        if rec["step"] < 0:
            out.append(f"init   |{cells}|")
            continue
        events = []
        for p, s in zip(rec["positions"], rec["sampled"]):
            events.append(f"{p}:{s}")
        out.append(
            f"step {rec['step']:>3} |{cells}|  len={rec['region_len']} "
            f"exp={rec['expansions']} del={rec['delete_steps']}  " + ", ".join(events)
        )
    return "\n".join(out) + "\n"
