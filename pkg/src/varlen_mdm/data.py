"""Synthetic corpora with exact validators, and fill-in-the-middle splitting."""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .vocab import InfillExample, Vocabulary, build_vocabulary

DIGITS = string.digits


class SyntheticTask:
    """Base class: ``sample`` draws one solution string, ``validate`` checks one."""

    name = "base"
    alphabet: str = ""

    def sample(self, rng: np.random.Generator) -> str:
        raise NotImplementedError

    def validate(self, solution: str) -> bool:
        raise NotImplementedError

    def eval_split(self, solution: str) -> tuple[int, int]:
        """Canonical (i, j) split used for evaluation sets."""
        raise NotImplementedError

    def vocabulary(self) -> Vocabulary:
        return build_vocabulary(list(self.alphabet))


@dataclass
class CopyTask(SyntheticTask):
    """``abc|cba``: the part after the bar is the reverse of the part before it."""

    min_len: int = 2
    max_len: int = 8
    symbols: str = "abcdefgh"
    name = "copy"

    @property
    def alphabet(self) -> str:
        return self.symbols + "|"

    def sample(self, rng):
        n = int(rng.integers(self.min_len, self.max_len + 1))
        s = "".join(rng.choice(list(self.symbols), size=n))
        return s + "|" + s[::-1]

    def validate(self, solution):
        head, bar, tail = solution.partition("|")
        return bool(bar) and bool(head) and tail == head[::-1] and set(head) <= set(self.symbols)

    def eval_split(self, solution):
        k = solution.index("|") + 1
        return k, len(solution)


@dataclass
class ArithmeticChainTask(SyntheticTask):
    """``3+14+5=22``: a sum of small integers and its value."""

    min_terms: int = 2
    max_terms: int = 3
    max_operand: int = 20
    name = "arithmetic-chain"
    alphabet = DIGITS + "+="

    def sample(self, rng):
        k = int(rng.integers(self.min_terms, self.max_terms + 1))
        terms = rng.integers(0, self.max_operand + 1, size=k).tolist()
        return "+".join(map(str, terms)) + "=" + str(sum(terms))

    def validate(self, solution):
        lhs, eq, rhs = solution.partition("=")
        if not eq or not rhs.isdigit() or rhs != str(int(rhs)):
            return False
        parts = lhs.split("+")
        if not all(p.isdigit() and p == str(int(p)) for p in parts):
            return False
        return sum(map(int, parts)) == int(rhs)

    def eval_split(self, solution):
        return solution.index("=") + 1, len(solution)


@dataclass
class BalancedBracketsTask(SyntheticTask):
    """Balanced strings over ``()[]`` with bounded nesting depth."""

    length: int = 12
    max_depth: int = 3
    name = "balanced-brackets"
    alphabet = "()[]"

    def sample(self, rng):
        # random walk on depth that always returns to zero in time
        out, stack = [], []
        for pos in range(self.length):
            remaining = self.length - pos
            can_open = len(stack) < self.max_depth and len(stack) + 1 <= remaining - 1
            can_close = bool(stack)
            if can_open and (not can_close or rng.random() < 0.5):
                b = "(" if rng.random() < 0.5 else "["
                stack.append(b)
                out.append(b)
            else:
                out.append(")" if stack.pop() == "(" else "]")
        return "".join(out)

    def validate(self, solution):
        pairs = {")": "(", "]": "["}
        stack = []
        for c in solution:
            if c in "([":
                stack.append(c)
                if len(stack) > self.max_depth:
                    return False
            elif c in pairs:
                if not stack or stack.pop() != pairs[c]:
                    return False
            else:
                return False
        return not stack and len(solution) > 0

    def eval_split(self, solution):
        half = len(solution) // 2
        return half // 2, half // 2 + half


@dataclass
class KeyValueTask(SyntheticTask):
    """``b:907;e:31;a:5582|e:31.``: a table, then a query key and its value.

    The value after the bar must equal the table entry for the queried key, so
    given the prefix up to ``|e:`` and the suffix ``.``, the middle is unique.
    """

    min_pairs: int = 2
    max_pairs: int = 3
    min_value_len: int = 2
    max_value_len: int = 8
    keys: str = "abcdefgh"
    name = "key-value"

    @property
    def alphabet(self) -> str:
        return self.keys + DIGITS + ":;|."

    def sample(self, rng):
        k = int(rng.integers(self.min_pairs, self.max_pairs + 1))
        keys = rng.choice(list(self.keys), size=k, replace=False).tolist()
        vals = [
            "".join(rng.choice(list(DIGITS), size=int(rng.integers(self.min_value_len, self.max_value_len + 1))))
            for _ in keys
        ]
        q = int(rng.integers(0, k))
        table = ";".join(f"{a}:{v}" for a, v in zip(keys, vals))
        return f"{table}|{keys[q]}:{vals[q]}."

    def parse(self, solution: str):
        table, bar, query = solution.partition("|")
        if not bar or not query.endswith("."):
            return None
        entries = {}
        for item in table.split(";"):
            k, colon, v = item.partition(":")
            if not colon or len(k) != 1 or k not in self.keys or not v.isdigit() or k in entries:
                return None
            entries[k] = v
        qk, colon, qv = query[:-1].partition(":")
        if not colon or qk not in entries:
            return None
        return entries, qk, qv

    def validate(self, solution):
        parsed = self.parse(solution)
        if parsed is None:
            return False
        entries, qk, qv = parsed
        return entries[qk] == qv

    def eval_split(self, solution):
        i = solution.index("|") + 3
        return i, len(solution) - 1


TASKS = {
    "copy": CopyTask,
    "arithmetic-chain": ArithmeticChainTask,
    "balanced-brackets": BalancedBracketsTask,
    "key-value": KeyValueTask,
}


def make_task(kind: str, **params) -> SyntheticTask:
    try:
        return TASKS[kind](**params)
    except KeyError:
        raise ValueError(f"unknown task kind: {kind}") from None


def gen_corpus(task: SyntheticTask, count: int, rng: np.random.Generator) -> Iterator[str]:
    if count < 1:
        raise ValueError("count must be >= 1")
    for _ in range(count):
        s = task.sample(rng)
        if not task.validate(s):
            raise AssertionError(f"{task.name} generator produced invalid solution {s!r}")
        yield s


def fim_split(n: int, rng: np.random.Generator, min_middle: int = 1) -> tuple[int, int]:
    """Uniform over all (i, j) with 0 <= i and i + min_middle <= j <= n."""
    if n < min_middle:
        raise ValueError(f"solution of length {n} shorter than min_middle={min_middle}")
    # number of admissible pairs with j - i = d is n - d + 1
    d = np.arange(min_middle, n + 1)
    weights = (n - d + 1).astype(np.float64)
    pick = int(rng.choice(len(d), p=weights / weights.sum()))
    length = int(d[pick])
    i = int(rng.integers(0, n - length + 1))
    return i, i + length


def split_example(tokens: np.ndarray, i: int, j: int) -> InfillExample:
    tokens = np.asarray(tokens, dtype=np.int64)
    return InfillExample(prefix=tokens[:i], middle=tokens[i:j], suffix=tokens[j:])


def expected_middle_length(n: int, min_middle: int = 1) -> float:
    """Mean of j - i under ``fim_split``, by enumeration of all admissible pairs."""
    total = count = 0
    for i in range(n + 1):
        for j in range(i + min_middle, n + 1):
            total += j - i
            count += 1
    return total / count


# --- corpus files -------------------------------------------------------------


def write_corpus(path, solutions) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in solutions:
            f.write(s + "\n")


def read_corpus(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def write_eval_set(path, rows) -> None:
    """Rows of (solution, i, j), tab separated."""
    with open(path, "w", encoding="utf-8") as f:
        for s, i, j in rows:
            f.write(f"{s}\t{i}\t{j}\n")


def read_eval_set(path) -> list[tuple[str, int, int]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            s, i, j = line.rstrip("\n").split("\t")
            rows.append((s, int(i), int(j)))
    return rows


def make_eval_set(task: SyntheticTask, count: int, rng: np.random.Generator):
    return [(s, *task.eval_split(s)) for s in gen_corpus(task, count, rng)]
