"""Forward process: schedule, pseudo-masking, span merging, deletes, corruption."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import AugmentedSequence, NoisySequence, Vocabulary

T_FLOOR = 1e-3


@dataclass(frozen=True)
class LinearSchedule:
    """survival(t) = 1 - t, weight(t) = 1 / max(t, t_floor)."""

    t_floor: float = T_FLOOR

    def survival(self, t):
        return 1.0 - np.asarray(t, dtype=np.float64)

    def weight(self, t):
        return 1.0 / np.maximum(np.asarray(t, dtype=np.float64), self.t_floor)


@dataclass(frozen=True)
class UnitWeightSchedule(LinearSchedule):
    """Linear survival with a flat time weight of 1."""

    def weight(self, t):
        return np.ones_like(np.asarray(t, dtype=np.float64))


SCHEDULES = {"linear": LinearSchedule, "linear-unit": UnitWeightSchedule}


def get_schedule(name: str) -> LinearSchedule:
    try:
        return SCHEDULES[name]()
    except KeyError:
        raise ValueError(f"unknown noise schedule: {name}") from None


@dataclass(frozen=True)
class MergeScheduler:
    kind: str = "mixture"  # static | dynamic-inverse | mixture
    p_merge: float = 0.5
    inverse_scale: float = 4.0
    mix_ratio: tuple[float, float] = (1.0, 1.0)  # static : dynamic

    def __post_init__(self):
        if self.kind not in ("static", "dynamic-inverse", "mixture"):
            raise ValueError(f"unknown merge scheduler kind: {self.kind}")


@dataclass(frozen=True)
class AugmentConfig:
    scheduler: MergeScheduler = MergeScheduler()
    delete_max: int = 64
    merge_pass_cap: int | None = 4
    interleave_deletes: bool = False

    def __post_init__(self):
        if self.delete_max < 0:
            raise ValueError("delete_max must be >= 0")


@dataclass(frozen=True)
class PseudoMask:
    indices: np.ndarray
    time: float


def sample_pseudo_mask(n: int, t: float, schedule, rng: np.random.Generator) -> PseudoMask:
    """Index set over ``n`` clean positions, each kept with probability 1 - survival(t)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    u = rng.random(n)
    return PseudoMask(indices=np.flatnonzero(u < 1.0 - schedule.survival(t)), time=t)


def merge_probability(scheduler: MergeScheduler, n_pseudo_masked: int, rng=None) -> float:
    if n_pseudo_masked < 0:
        raise ValueError("n_pseudo_masked must be >= 0")
    kind = scheduler.kind
    if kind == "mixture":
        w_static, w_dyn = scheduler.mix_ratio
        total = w_static + w_dyn
        if total <= 0:
            raise ValueError("mix_ratio must have positive mass")
        u = 0.0 if rng is None else rng.random()
        kind = "static" if u < w_static / total else "dynamic-inverse"
    if kind == "static":
        p = scheduler.p_merge
    else:
        p = scheduler.inverse_scale / max(1, n_pseudo_masked)
    return float(min(1.0, max(0.0, p)))


def merge_spans(
    clean: np.ndarray,
    mask: PseudoMask,
    p_merge: float,
    vocab: Vocabulary,
    rng: np.random.Generator,
    pass_cap: int | None = 4,
) -> AugmentedSequence:
    """Pair-merge adjacent units inside each run of pseudo-masked indices.

    One pass walks the units left to right; a unit and its right neighbour in
    the same run merge with probability ``p_merge`` and the walk skips past the
    pair. Passes repeat up to ``pass_cap`` (None: until no run has two units).
    Units covering more than one clean position become ``[expand]``.

    Unlimited passes take about ``1 / p_merge`` rounds to finish a run, so
    they are refused for ``0 < p_merge < 1e-3``.
    """
    if pass_cap is None and 0.0 < p_merge < 1e-3:
        raise ValueError(f"unlimited merge passes need p_merge >= 1e-3 (or 0), got {p_merge}")
    clean = np.asarray(clean, dtype=np.int64)
    n = len(clean)
    flags = np.zeros(n, dtype=bool)
    flags[mask.indices] = True
    # run id per position, -1 outside runs
    run_start = flags & ~np.concatenate([[False], flags[:-1]])
    run = np.where(flags, np.cumsum(run_start) - 1, -1)

    starts = list(range(n))
    ends = list(range(1, n + 1))
    runs = run.tolist()
    passes = 0
    while pass_cap is None or passes < pass_cap:
        mergeable = any(
            runs[i] >= 0 and runs[i] == runs[i + 1] for i in range(len(runs) - 1)
        )
        if not mergeable or p_merge <= 0.0:
            break
        u = rng.random(len(starts))
        ns, ne, nr = [], [], []
        i = 0
        while i < len(starts):
            if (
                i + 1 < len(starts)
                and runs[i] >= 0
                and runs[i] == runs[i + 1]
                and u[i] < p_merge
            ):
                ns.append(starts[i])
                ne.append(ends[i + 1])
                nr.append(runs[i])
                i += 2
            else:
                ns.append(starts[i])
                ne.append(ends[i])
                nr.append(runs[i])
                i += 1
        starts, ends, runs = ns, ne, nr
        passes += 1

    s = np.array(starts, dtype=np.int64)
    e = np.array(ends, dtype=np.int64)
    tokens = np.where(e - s > 1, vocab.expand_id, clean[s] if n else s)
    return AugmentedSequence(tokens=tokens.astype(np.int64), span_starts=s, span_ends=e)


def insert_deletes(
    z: AugmentedSequence,
    cfg: AugmentConfig,
    vocab: Vocabulary,
    rng: np.random.Generator,
    count: int | None = None,
) -> AugmentedSequence:
    """Add k ~ Uniform{0..delete_max} ``[delete]`` tokens to the region.

    ``z`` is the active region alone. Deletes go at its end unless
    ``interleave_deletes`` is set, in which case they land at uniform slots.
    A delete covers the empty range at the clean offset where it sits.
    """
    k = int(rng.integers(0, cfg.delete_max + 1)) if count is None else int(count)
    if k == 0:
        return z
    n_end = int(z.span_ends[-1]) if len(z) else 0
    if not cfg.interleave_deletes:
        tokens = np.concatenate([z.tokens, np.full(k, vocab.delete_id, dtype=np.int64)])
        pad = np.full(k, n_end, dtype=np.int64)
        return AugmentedSequence(
            tokens=tokens,
            span_starts=np.concatenate([z.span_starts, pad]),
            span_ends=np.concatenate([z.span_ends, pad]),
        )
    slots = np.sort(rng.integers(0, len(z) + 1, size=k))
    tokens, s, e = list(z.tokens), list(z.span_starts), list(z.span_ends)
    for offset, slot in enumerate(slots):
        at = int(slot) + offset
        anchor = s[at] if at < len(s) else n_end
        tokens.insert(at, vocab.delete_id)
        s.insert(at, anchor)
        e.insert(at, anchor)
    return AugmentedSequence(
        tokens=np.array(tokens, dtype=np.int64),
        span_starts=np.array(s, dtype=np.int64),
        span_ends=np.array(e, dtype=np.int64),
    )


def corrupt(
    augmented: np.ndarray,
    t: float,
    schedule,
    vocab: Vocabulary,
    rng: np.random.Generator,
    region: tuple[int, int] | None = None,
) -> NoisySequence:
    """Absorbing corruption restricted to ``region`` (default: whole sequence).

    Sentinel targets always become ``[mask]``; regular tokens do so with
    probability 1 - survival(t). Positions outside the region are left alone.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    augmented = np.asarray(augmented, dtype=np.int64)
    lo, hi = (0, len(augmented)) if region is None else region
    u = rng.random(hi - lo)
    seg = augmented[lo:hi]
    sentinel = (seg == vocab.expand_id) | (seg == vocab.delete_id) | (seg == vocab.mask_id)
    hit = sentinel | (u < 1.0 - schedule.survival(t))
    out = augmented.copy()
    out[lo:hi][hit] = vocab.mask_id
    return NoisySequence(tokens=out, masked=np.flatnonzero(out == vocab.mask_id), time=float(t))


def augment(
    middle: np.ndarray,
    t: float,
    cfg: AugmentConfig,
    schedule,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> AugmentedSequence:
    """Build augmented for one middle segment: pseudo-mask, merge, append deletes."""
    pm = sample_pseudo_mask(len(middle), t, schedule, rng)
    p = merge_probability(cfg.scheduler, len(pm.indices), rng)
    z = merge_spans(middle, pm, p, vocab, rng, cfg.merge_pass_cap)
    return insert_deletes(z, cfg, vocab, rng)
