"""Causal self-attention over a sequence of hidden states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import ShapeError, Tensor, concat, matmul, softmax, stack, tanh_act

SCORE_KINDS = ("dot", "general", "concat")


@dataclass
class AttentionParams:
    kind: str = "dot"
    W_a: Tensor | None = None
    u_a: Tensor | None = None

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValueError(f"score kind must be one of {SCORE_KINDS}, got {self.kind!r}")
        if self.kind == "dot" and (self.W_a is not None or self.u_a is not None):
            raise ValueError("dot attention has no parameters")
        if self.kind == "general" and (self.W_a is None or self.W_a.shape[0] != self.W_a.shape[1]):
            raise ValueError("general attention needs a square W_a")
        if self.kind == "concat":
            if self.W_a is None or self.u_a is None or self.W_a.shape[0] != self.u_a.shape[0]:
                raise ValueError("concat attention needs W_a (d_a x 2d) and u_a (d_a)")

    @classmethod
    def init(cls, kind: str, d: int, rng: np.random.Generator, d_a: int = 64, dtype=np.float64) -> "AttentionParams":
        if kind == "dot":
            return cls("dot")
        if kind == "general":
            k = 1.0 / np.sqrt(d)
            return cls("general", Tensor(rng.uniform(-k, k, (d, d)).astype(dtype), requires_grad=True))
        k = 1.0 / np.sqrt(2 * d)
        W = Tensor(rng.uniform(-k, k, (d_a, 2 * d)).astype(dtype), requires_grad=True)
        k = 1.0 / np.sqrt(d_a)
        u = Tensor(rng.uniform(-k, k, d_a).astype(dtype), requires_grad=True)
        return cls("concat", W, u)

    def named(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in (("W_a", self.W_a), ("u_a", self.u_a)) if t is not None]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]


def score(params: AttentionParams, h_t: Tensor, h_s: Tensor) -> Tensor:
    """Affinity between an attended state ``h_t`` and the query state ``h_s``."""
    if h_t.shape != h_s.shape:
        raise ShapeError(f"score: states of shapes {h_t.shape} and {h_s.shape}")
    if params.kind == "dot":
        return matmul(h_t, h_s)
    if params.kind == "general":
        if params.W_a.shape[1] != h_s.shape[0]:
            raise ShapeError(f"score: W_a {params.W_a.shape} does not fit state {h_s.shape}")
        return matmul(h_t, matmul(params.W_a, h_s))
    if params.W_a.shape[1] != 2 * h_s.shape[0]:
        raise ShapeError(f"score: W_a {params.W_a.shape} does not fit state {h_s.shape}")
    return matmul(params.u_a, tanh_act(matmul(params.W_a, concat([h_t, h_s]))))


def attended_range(s: int, window: int | None) -> range:
    """0-based positions visible from position ``s`` (itself included)."""
    if s < 0:
        raise ValueError("position must be non-negative")
    if window is not None and window < 1:
        raise ValueError("window must be at least 1")
    start = 0 if window is None else max(0, s - window + 1)
    return range(start, s + 1)


def causal_weights(params: AttentionParams, states: Sequence[Tensor], window: int | None = None) -> Tensor:
    """Softmax of scores between the last state and every state in its window.

    ``states`` holds positions ``0..s``; the query is ``states[-1]``.
    """
    if len(states) == 0:
        raise ValueError("causal attention needs at least one state")
    s = len(states) - 1
    h_s = states[-1]
    scores = [score(params, states[t], h_s) for t in attended_range(s, window)]
    return softmax(stack(scores))


def context_vector(weights: Tensor, states: Sequence[Tensor]) -> Tensor:
    """Weighted sum of ``states``."""
    if weights.shape != (len(states),):
        raise ShapeError(f"{weights.shape[0] if weights.shape else 0} weights for {len(states)} states")
    return matmul(weights, stack(states))


@dataclass
class AttentionTrace:
    """Per-position attention weights and the absolute positions they cover."""

    rows: list[np.ndarray] = field(default_factory=list)
    starts: list[int] = field(default_factory=list)

    def append(self, weights: np.ndarray, start: int) -> None:
        self.rows.append(np.array(weights, copy=True))
        self.starts.append(start)

    def __len__(self) -> int:
        return len(self.rows)

    def positions(self, s: int) -> range:
        return range(self.starts[s], self.starts[s] + len(self.rows[s]))

    def check(self, tol: float = 1e-9) -> None:
        """Raise if a row leaves the simplex or attends past its own position."""
        for s, w in enumerate(self.rows):
            pos = self.positions(s)
            if pos.stop - 1 != s:
                raise AssertionError(f"row {s} covers positions {pos.start}..{pos.stop - 1}")
            if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
                raise AssertionError(f"row {s} is not a probability vector")
