"""Vocabulary, token and sequence types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MASK = "[mask]"
EXPAND = "[expand]"
DELETE = "[delete]"
SENTINELS = (MASK, EXPAND, DELETE)


@dataclass(frozen=True)
class Vocabulary:
    """Symbol table: regular ids first, then structural ids, sentinels on top.

    ``regular_size`` is V. Sentinels are always the last three ids, in the
    order ``[mask]``, ``[expand]``, ``[delete]``.
    """

    symbols: tuple[str, ...]
    regular_size: int
    structural: tuple[str, ...] = ()
    _index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")
        self._index.update({s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def mask_id(self) -> int:
        return self.size - 3

    @property
    def expand_id(self) -> int:
        return self.size - 2

    @property
    def delete_id(self) -> int:
        return self.size - 1

    @property
    def sentinel_ids(self) -> tuple[int, int, int]:
        return (self.mask_id, self.expand_id, self.delete_id)

    def is_regular(self, token_id: int) -> bool:
        return 0 <= token_id < self.regular_size

    def encode_symbol(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise KeyError(f"unknown symbol {symbol!r}") from None

    def decode_id(self, token_id: int) -> str:
        if not 0 <= token_id < self.size:
            raise KeyError(f"id {token_id} outside vocabulary of size {self.size}")
        return self.symbols[token_id]

    def encode(self, symbols: Iterable[str]) -> np.ndarray:
        return np.array([self.encode_symbol(s) for s in symbols], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.decode_id(int(i)) for i in ids]

    def encode_text(self, text: str) -> np.ndarray:
        """Encode a string whose characters are all single-character symbols."""
        return self.encode(list(text))

    def decode_text(self, ids: Iterable[int]) -> str:
        return "".join(self.decode(ids))


def build_vocabulary(
    regular_symbols: Sequence[str], structural: Sequence[str] = ()
) -> Vocabulary:
    regular_symbols = list(regular_symbols)
    structural = list(structural)
    if not regular_symbols:
        raise ValueError("regular_symbols must be non-empty")
    all_symbols = regular_symbols + structural + list(SENTINELS)
    if len(set(all_symbols)) != len(all_symbols):
        dupes = sorted({s for s in all_symbols if all_symbols.count(s) > 1})
        raise ValueError(f"duplicate symbols: {dupes}")
    return Vocabulary(
        symbols=tuple(all_symbols),
        regular_size=len(regular_symbols),
        structural=tuple(structural),
    )


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """Write the ordered symbol list, one per line, with a header for V."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# regular_size={vocab.regular_size} structural={len(vocab.structural)}\n")
        for s in vocab.symbols:
            f.write(s + "\n")


def load_vocabulary(path) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    header, body = lines[0], [ln for ln in lines[1:] if ln != ""]
    fields = dict(kv.split("=") for kv in header.lstrip("# ").split())
    v, s = int(fields["regular_size"]), int(fields["structural"])
    if body[v + s :] != list(SENTINELS):
        raise ValueError(f"{path}: sentinel block missing or out of order")
    return build_vocabulary(body[:v], body[v : v + s])


def write_token_records(path, records: Iterable[Sequence[int]], vocab: Vocabulary) -> None:
    """Newline-delimited records of space-separated symbol strings."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(" ".join(vocab.decode(rec)) + "\n")


def read_token_records(path, vocab: Vocabulary) -> list[np.ndarray]:
    with open(path, encoding="utf-8") as f:
        return [vocab.encode(line.split()) for line in f if line.strip()]


# --- sequence types -------------------------------------------------------


@dataclass(frozen=True)
class InfillExample:
    prefix: np.ndarray
    middle: np.ndarray
    suffix: np.ndarray
    instruction: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def solution(self) -> np.ndarray:
        return np.concatenate([self.prefix, self.middle, self.suffix])


@dataclass(frozen=True)
class AugmentedSequence:
    """augmented: tokens plus, per position, the half-open clean range it covers."""

    tokens: np.ndarray
    span_starts: np.ndarray
    span_ends: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def coverage(self) -> np.ndarray:
        return self.span_ends - self.span_starts


@dataclass(frozen=True)
class NoisySequence:
    """Noisy sequence: ``masked`` is the sorted index set of ``[mask]`` positions."""

    tokens: np.ndarray
    masked: np.ndarray
    time: float

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, mask_id: int, time: float = 1.0) -> "NoisySequence":
        tokens = np.asarray(tokens, dtype=np.int64)
        return cls(tokens=tokens, masked=np.flatnonzero(tokens == mask_id), time=time)


def assemble_prompt(
    example: InfillExample, init_mask_len: int, vocab: Vocabulary
) -> tuple[NoisySequence, tuple[int, int]]:
    """instruction + prefix + mask block + suffix, with the mask-block bounds."""
    if init_mask_len < 1:
        raise ValueError("init_mask_len must be >= 1")
    start = len(example.instruction) + len(example.prefix)
    tokens = np.concatenate(
        [
            example.instruction,
            example.prefix,
            np.full(init_mask_len, vocab.mask_id, dtype=np.int64),
            example.suffix,
        ]
    ).astype(np.int64)
    return NoisySequence.from_tokens(tokens, vocab.mask_id), (start, start + init_mask_len)
