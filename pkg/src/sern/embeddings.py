"""Trainable word-embedding table with an optional skip-gram warm start."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import Tensor, index_select, take
from .text import PAD, EncodedDialog

FORMAT_TAG = "sern-embeddings v1"


class EmbeddingTable:
    """``vocab_size x d_emb`` matrix whose PAD row stays at zero."""

    def __init__(self, weight: Tensor):
        self.weight = weight

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]


def init_embeddings(vocab_size: int, d_emb: int, seed: int = 0, dtype=np.float64) -> EmbeddingTable:
    if vocab_size < 2 or d_emb < 1:
        raise ValueError(f"invalid embedding dims ({vocab_size}, {d_emb})")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-0.05, 0.05, size=(vocab_size, d_emb)).astype(dtype)
    w[PAD] = 0.0
    return EmbeddingTable(Tensor(w, requires_grad=True))


def lookup(table: EmbeddingTable, token_ids) -> list[Tensor]:
    """One embedding vector per token id, differentiable w.r.t. the table."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.vocab_size):
        raise IndexError(f"token id out of range for vocabulary of size {table.vocab_size}")
    rows = index_select(table.weight, ids)
    return [take(rows, t) for t in range(len(ids))]


def _skipgram_pairs(corpus: Sequence[EncodedDialog], window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for d in corpus:
        for seq in d.tokens:
            n = len(seq)
            for i in range(n):
                for j in range(max(0, i - window), min(n, i + window + 1)):
                    if j != i:
                        centers.append(seq[i])
                        contexts.append(seq[j])
    return np.array(centers, dtype=np.int64), np.array(contexts, dtype=np.int64)


def _log_softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def skipgram_pretrain(
    corpus: Sequence[EncodedDialog],
    table: EmbeddingTable,
    window: int = 2,
    epochs: int = 5,
    lr: float = 0.1,
    seed: int = 0,
    return_details: bool = False,
):
    """Full-batch gradient descent on the full-softmax skip-gram objective.

    Each center word predicts every token within ``window`` positions of it in
    the same utterance. The output projection is discarded afterwards; only
    the input embeddings are written back (in place) into ``table``. The
    objective is the mean negative log-likelihood over all pairs. With
    ``return_details`` a :class:`SkipGramFit` (per-epoch objective before
    each update, plus the output projection) is returned alongside.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    centers, contexts = _skipgram_pairs(corpus, window)
    emb = table.weight.data
    rng = np.random.default_rng(seed)
    out = rng.uniform(-0.05, 0.05, size=(table.vocab_size, table.dim)).astype(emb.dtype)
    history = []
    n = len(centers)
    for _ in range(epochs if n else 0):
        h = emb[centers]
        logp = _log_softmax_rows(h @ out.T)
        history.append(float(-logp[np.arange(n), contexts].mean()))
        dz = np.exp(logp)
        dz[np.arange(n), contexts] -= 1.0
        dz /= n
        d_out = dz.T @ h
        d_h = dz @ out
        d_emb = np.zeros_like(emb)
        np.add.at(d_emb, centers, d_h)
        d_emb[PAD] = 0.0
        emb -= lr * d_emb
        out -= lr * d_out
    if return_details:
        return table, SkipGramFit(history, out)
    return table


@dataclass
class SkipGramFit:
    losses: list
    output: np.ndarray

    def context_distribution(self, table: EmbeddingTable, center: int) -> np.ndarray:
        """Softmax over the vocabulary of words predicted around ``center``."""
        z = table.weight.data[center] @ self.output.T
        e = np.exp(z - z.max())
        return e / e.sum()


def save_embeddings(table: EmbeddingTable, path: str | Path, vocab_hash: str) -> None:
    """Text matrix with a header carrying the vocabulary hash."""
    header = f"{FORMAT_TAG}\nvocab_hash {vocab_hash}\nshape {table.vocab_size} {table.dim}"
    np.savetxt(path, table.weight.data, fmt="%.17g", header=header, comments="# ")


def load_embeddings(path: str | Path, vocab_hash: str | None = None) -> EmbeddingTable:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[2:].strip().partition(" ")
            meta[key] = value
    if meta.get("sern-embeddings") != "v1":
        raise ValueError(f"{path} is not a version-1 embedding file")
    if vocab_hash is not None and meta.get("vocab_hash") != vocab_hash:
        raise ValueError(f"embedding file was built for vocabulary {meta.get('vocab_hash')}, expected {vocab_hash}")
    rows, cols = (int(v) for v in meta["shape"].split())
    w = np.loadtxt(path, comments="#", ndmin=2)
    if w.shape != (rows, cols):
        raise ValueError(f"embedding matrix has shape {w.shape}, header says {(rows, cols)}")
    return EmbeddingTable(Tensor(w, requires_grad=True))
