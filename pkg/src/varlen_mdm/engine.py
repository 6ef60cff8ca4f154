"""Variable-length denoising: rank, sample, expand / delete, repeat."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vocab import NoisySequence, Vocabulary


class GenerationError(RuntimeError):
    """Step budget exhausted; ``state`` holds the partial generation."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


class InvariantViolation(AssertionError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    init_mask_len: int = 64
    max_len: int = 128
    unmask_budget: int = 1
    temperature: float = 0.2
    top_p: float = 0.9
    expansion_cap: int | None = None  # None: same as max_len
    broadcasting: bool = True
    expand_enabled: bool = True
    delete_enabled: bool = True
    confidence: str = "entropy"  # entropy | max-prob
    step_cap: int | None = None  # None: 16 * max_len

    def __post_init__(self):
        errs = []
        if not 1 <= self.init_mask_len <= self.max_len:
            errs.append("need 1 <= init_mask_len <= max_len")
        if self.unmask_budget < 1:
            errs.append("unmask_budget must be >= 1")
        if not self.temperature > 0:
            errs.append("temperature must be > 0")
        if not 0 < self.top_p <= 1:
            errs.append("top_p must lie in (0, 1]")
        if self.confidence not in ("entropy", "max-prob"):
            errs.append(f"unknown confidence measure {self.confidence!r}")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def cap(self) -> int:
        return self.max_len if self.expansion_cap is None else self.expansion_cap

    @property
    def steps_allowed(self) -> int:
        return 16 * self.max_len if self.step_cap is None else self.step_cap


@dataclass
class GenerationState:
    """Live sequence; the active region is ``tokens[start:end]``."""

    tokens: list[int]
    start: int
    end: int
    mask_id: int
    expansions_done: int = 0
    steps_done: int = 0
    delete_steps: int = 0
    trajectory: list[dict] | None = None

    @property
    def region(self) -> list[int]:
        return self.tokens[self.start : self.end]

    @property
    def region_len(self) -> int:
        return self.end - self.start

    def masked_positions(self) -> np.ndarray:
        r = np.asarray(self.region, dtype=np.int64)
        return np.flatnonzero(r == self.mask_id) + self.start

    def n_masks(self) -> int:
        return sum(1 for x in self.region if x == self.mask_id)


def _entropy(rows: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(rows > 0, rows * np.log(rows), 0.0)
    return -plogp.sum(axis=-1)


def confidence_rank(rows: np.ndarray, masked: np.ndarray, measure: str = "entropy") -> np.ndarray:
    """Masked positions by descending confidence, ties by ascending position."""
    masked = np.asarray(masked, dtype=np.int64)
    if measure == "entropy":
        conf = -_entropy(rows[masked])
    else:
        conf = rows[masked].max(axis=-1)
    order = np.lexsort((masked, -conf))
    return masked[order]


def sample_token(row: np.ndarray, temperature: float, top_p: float, rng: np.random.Generator) -> int:
    """Temperature-scaled nucleus sampling from one probability row."""
    row = np.asarray(row, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logits = np.log(row) / temperature
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    order = np.argsort(-p, kind="stable")
    cum = np.cumsum(p[order])
    keep = int(np.searchsorted(cum, top_p - 1e-12)) + 1
    kept = order[:keep]
    q = p[kept] / p[kept].sum()
    return int(kept[min(int(np.searchsorted(np.cumsum(q), rng.random(), side="right")), keep - 1)])


def enforce_length_cap(
    state: GenerationState, rows: np.ndarray, cfg: GenerationConfig, vocab: Vocabulary
) -> np.ndarray:
    """Zero ``[expand]`` past the length / expansion caps (or when disabled),
    zero ``[delete]`` when disabled, and renormalize.

    A row left with no mass becomes uniform over the ids still allowed.
    """
    no_expand = (
        not cfg.expand_enabled
        or state.region_len >= cfg.max_len
        or state.expansions_done >= cfg.cap
    )
    no_delete = not cfg.delete_enabled
    if not (no_expand or no_delete):
        return rows
    return _restrict(rows, vocab, no_expand, no_delete)


def _restrict(rows: np.ndarray, vocab: Vocabulary, no_expand: bool, no_delete: bool) -> np.ndarray:
    allowed = np.ones(vocab.size, dtype=bool)
    allowed[vocab.mask_id] = False
    if no_expand:
        allowed[vocab.expand_id] = False
    if no_delete:
        allowed[vocab.delete_id] = False
    rows = np.where(allowed, rows, 0.0)
    total = rows.sum(axis=-1, keepdims=True)
    empty = total[..., 0] <= 0
    if np.any(empty):
        rows[empty] = allowed / allowed.sum()
        total = rows.sum(axis=-1, keepdims=True)
    return rows / total


def broadcast_delete(state: GenerationState, pos: int) -> int:
    """Remove ``pos``; if everything right of it in the region is ``[mask]``,
    remove that trailing run too. Returns the number of tokens removed."""
    right = state.tokens[pos + 1 : state.end]
    if all(x == state.mask_id for x in right):
        n = state.end - pos
    else:
        n = 1
    del state.tokens[pos : pos + n]
    state.end -= n
    state.delete_steps += 1
    return n


def apply_prediction(
    state: GenerationState,
    pos: int,
    token: int,
    vocab: Vocabulary,
    broadcasting: bool = True,
) -> int:
    """Write one sampled token at absolute position ``pos``.

    Returns the change in sequence length.
    """
    if not state.start <= pos < state.end:
        raise IndexError(f"position {pos} outside active region [{state.start}, {state.end})")
    if state.tokens[pos] != state.mask_id:
        raise ValueError(f"position {pos} is not masked")
    if token == vocab.expand_id:
        state.tokens[pos : pos + 1] = [state.mask_id, state.mask_id]
        state.end += 1
        state.expansions_done += 1
        return 1
    if token == vocab.delete_id:
        if broadcasting:
            return -broadcast_delete(state, pos)
        del state.tokens[pos]
        state.end -= 1
        state.delete_steps += 1
        return -1
    state.tokens[pos] = int(token)
    return 0


def _measure(state: GenerationState, cfg: GenerationConfig) -> int:
    return state.n_masks() + 2 * max(0, cfg.cap - state.expansions_done)


def generate(
    prompt: NoisySequence,
    region: tuple[int, int],
    model,
    cfg: GenerationConfig,
    vocab: Vocabulary,
    rng: np.random.Generator,
    trace: bool = False,
) -> GenerationState:
    """Denoise the active region until it holds no ``[mask]``."""
    state = GenerationState(
        tokens=[int(x) for x in prompt.tokens],
        start=region[0],
        end=region[1],
        mask_id=vocab.mask_id,
        trajectory=[] if trace else None,
    )
    context_before = list(state.tokens[: state.start])
    context_after = list(state.tokens[state.end :])
    if trace:
        state.trajectory.append(_snapshot(state, -1, [], [], vocab))

    while True:
        masked = state.masked_positions()
        if len(masked) == 0:
            break
        if state.steps_done >= cfg.steps_allowed:
            raise GenerationError(
                f"no termination after {state.steps_done} steps (cap {cfg.steps_allowed})", state
            )
        rows = model.predict(np.asarray(state.tokens, dtype=np.int64))
        rows = enforce_length_cap(state, rows, cfg, vocab)
        chosen = confidence_rank(rows, masked, cfg.confidence)[: cfg.unmask_budget]
        sampled = [sample_token(rows[p], cfg.temperature, cfg.top_p, rng) for p in chosen]

        # track where each predicted position currently sits as lengths change
        origin = list(range(len(state.tokens)))
        applied_pos, applied_tok = [], []
        for p, tok in sorted(zip(chosen.tolist(), sampled)):
            try:
                cur = origin.index(p)
            except ValueError:
                continue  # swallowed by an earlier broadcast delete
            if tok == vocab.expand_id and (
                state.region_len >= cfg.max_len or state.expansions_done >= cfg.cap
            ):
                # a same-step expansion already hit a cap
                row = _restrict(rows[p], vocab, True, not cfg.delete_enabled)
                tok = sample_token(row, cfg.temperature, cfg.top_p, rng)
            before = _measure(state, cfg)
            delta = apply_prediction(state, cur, tok, vocab, cfg.broadcasting)
            if _measure(state, cfg) >= before:
                raise InvariantViolation("termination measure did not decrease")
            if delta > 0:
                origin[cur : cur + 1] = [p, -1]
            elif delta < 0:
                del origin[cur : cur - delta]
            applied_pos.append(p)
            applied_tok.append(int(tok))
        state.steps_done += 1

        if state.region_len > cfg.max_len:
            raise InvariantViolation(f"region length {state.region_len} exceeds max_len")
        if trace:
            state.trajectory.append(_snapshot(state, state.steps_done - 1, applied_pos, applied_tok, vocab))

    if state.tokens[: state.start] != context_before or state.tokens[state.end :] != context_after:
        raise InvariantViolation("context outside the active region changed")
    return state


def _snapshot(state: GenerationState, step: int, positions, tokens, vocab: Vocabulary) -> dict:
    return {
        "step": step,
        "region": vocab.decode(state.region),
        "positions": [int(p - state.start) for p in positions],
        "sampled": vocab.decode(tokens),
        "expansions": state.expansions_done,
        "delete_steps": state.delete_steps,
        "region_len": state.region_len,
    }
