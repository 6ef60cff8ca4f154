"""Denoisers: a tiny bidirectional transformer and a scripted test double."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .vocab import Vocabulary, build_vocabulary


class Denoiser(Protocol):
    max_len: int

    def predict(self, ids: np.ndarray) -> np.ndarray:
        """(L,) ids -> (L, V) rows, each a probability distribution."""


def _normalize_rows(probs: np.ndarray, mask_id: int) -> np.ndarray:
    probs = probs.astype(np.float64, copy=True)
    probs[:, mask_id] = 0.0
    return probs / probs.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 4
    width: int = 128
    heads: int = 4
    max_len: int = 256
    ffn_mult: int = 4
    tied: bool = False


class Block(nn.Module):
    def __init__(self, width: int, heads: int, ffn_mult: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.ln2 = nn.LayerNorm(width)
        self.ff1 = nn.Linear(width, ffn_mult * width)
        self.ff2 = nn.Linear(ffn_mult * width, width)

    def forward(self, x, key_pad=None):
        b, n, d = x.shape
        h = self.ln1(x)
        q, k, v = self.qkv(h).view(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-1, -2)) / math.sqrt(d // self.heads)
        if key_pad is not None:
            att = att.masked_fill(key_pad[:, None, None, :], float("-inf"))
        # no causal mask: every position attends to the full sequence
        y = (att.softmax(-1) @ v).transpose(1, 2).reshape(b, n, d)
        x = x + self.proj(y)
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


class TinyTransformer(nn.Module):
    def __init__(self, vocab: Vocabulary, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.vocab = vocab
        self.cfg = cfg
        self.max_len = cfg.max_len
        self.tok = nn.Embedding(vocab.size, cfg.width)
        self.pos = nn.Embedding(cfg.max_len, cfg.width)
        self.blocks = nn.ModuleList(
            Block(cfg.width, cfg.heads, cfg.ffn_mult) for _ in range(cfg.depth)
        )
        self.ln_f = nn.LayerNorm(cfg.width)
        self.head = nn.Linear(cfg.width, vocab.size, bias=False)
        if cfg.tied:
            self.head.weight = self.tok.weight
        self.apply(self._init)

    @staticmethod
    def _init(m):
        if isinstance(m, (nn.Linear, nn.Embedding)):
            nn.init.normal_(m.weight, std=0.02)
        if isinstance(m, nn.Linear) and m.bias is not None:
            nn.init.zeros_(m.bias)

    def forward(self, ids: torch.Tensor, key_pad: torch.Tensor | None = None) -> torch.Tensor:
        n = ids.shape[1]
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds model max_len {self.max_len}")
        # positions are recomputed from scratch on every call
        x = self.tok(ids) + self.pos(torch.arange(n, device=ids.device))
        for blk in self.blocks:
            x = blk(x, key_pad)
        return self.head(self.ln_f(x))

    @torch.no_grad()
    def predict(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) > self.max_len:
            raise ValueError(f"sequence length {len(ids)} exceeds model max_len {self.max_len}")
        was_training = self.training
        self.eval()
        logits = self(torch.from_numpy(ids)[None])[0].double()
        self.train(was_training)
        logits[:, self.vocab.mask_id] = float("-inf")
        return logits.softmax(-1).numpy()

    def param_order(self) -> list[tuple[str, torch.Tensor]]:
        return list(self.state_dict().items())


class ScriptedDenoiser:
    """Replays a fixed script: call k puts a point mass on ``script[k][pos]``.

    Positions are relative to ``offset``. Unscripted rows are uniform over
    every id except ``[mask]``. Calls past the end of the script return
    uniform rows everywhere.
    """

    def __init__(
        self,
        script: Sequence[Mapping[int, int]],
        vocab: Vocabulary,
        offset: int = 0,
        max_len: int = 10_000,
    ):
        self.script = [dict(s) for s in script]
        self.vocab = vocab
        self.offset = offset
        self.max_len = max_len
        self.calls = 0

    def predict(self, ids: np.ndarray) -> np.ndarray:
        n = len(ids)
        if n > self.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.max_len}")
        rows = np.ones((n, self.vocab.size))
        step = self.script[self.calls] if self.calls < len(self.script) else {}
        self.calls += 1
        for pos, tok in step.items():
            i = pos + self.offset
            if 0 <= i < n:
                rows[i] = 0.0
                rows[i, tok] = 1.0
        return _normalize_rows(rows, self.vocab.mask_id)


# --- checkpoint I/O ----------------------------------------------------------

MAGIC = b"VLMD"
VERSION = 1


def save_checkpoint(model: TinyTransformer, path, extra: dict | None = None) -> None:
    """Header (magic, version, JSON hyperparameters) then little-endian f32 tensors."""
    order = model.param_order()
    header = {
        "model": asdict(model.cfg),
        "vocab": {
            "symbols": list(model.vocab.symbols),
            "regular_size": model.vocab.regular_size,
            "structural": list(model.vocab.structural),
        },
        "tensors": [[name, list(t.shape)] for name, t in order],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, t in order:
            f.write(t.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[TinyTransformer, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    v = header["vocab"]
    vocab = build_vocabulary(v["symbols"][: v["regular_size"]], v["structural"])
    model = TinyTransformer(vocab, ModelConfig(**header["model"]))
    offset = 12 + hlen
    state = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * count
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes after tensor payload")
    model.load_state_dict(state)
    return model, header.get("extra", {})
