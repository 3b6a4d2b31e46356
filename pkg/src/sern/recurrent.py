"""GRU and LSTM cells and sequence runners built on :mod:`sern.numerics`."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .numerics import ShapeError, Tensor, affine, concat, mul, sigmoid, tanh_act


def _uniform(rng, shape, k, dtype):
    return Tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True)


class _Params:
    def tensors(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self)]

    def named(self) -> list[tuple[str, Tensor]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def d_hidden(self) -> int:
        return self.U_h.shape[0] if hasattr(self, "U_h") else self.U_c.shape[0]

    @property
    def d_in(self) -> int:
        return self.W_h.shape[1] if hasattr(self, "W_h") else self.W_c.shape[1]


@dataclass
class GruParams(_Params):
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @classmethod
    def init(cls, d_in: int, d_hidden: int, rng: np.random.Generator, dtype=np.float64) -> "GruParams":
        k = 1.0 / np.sqrt(d_hidden)
        W = [_uniform(rng, (d_hidden, d_in), k, dtype) for _ in range(3)]
        U = [_uniform(rng, (d_hidden, d_hidden), k, dtype) for _ in range(3)]
        b = [_uniform(rng, (d_hidden,), k, dtype) for _ in range(3)]
        return cls(*W, *U, *b)


@dataclass
class LstmParams(_Params):
    W_f: Tensor
    W_i: Tensor
    W_o: Tensor
    W_c: Tensor
    U_f: Tensor
    U_i: Tensor
    U_o: Tensor
    U_c: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_c: Tensor

    @classmethod
    def init(cls, d_in: int, d_hidden: int, rng: np.random.Generator, dtype=np.float64) -> "LstmParams":
        k = 1.0 / np.sqrt(d_hidden)
        W = [_uniform(rng, (d_hidden, d_in), k, dtype) for _ in range(4)]
        U = [_uniform(rng, (d_hidden, d_hidden), k, dtype) for _ in range(4)]
        b = [_uniform(rng, (d_hidden,), k, dtype) for _ in range(4)]
        return cls(*W, *U, *b)


@dataclass(frozen=True)
class LstmState:
    h: Tensor
    c: Tensor


def _check_step(params: _Params, x: Tensor, h: Tensor) -> None:
    if x.shape != (params.d_in,) or h.shape != (params.d_hidden,):
        raise ShapeError(
            f"cell expects input ({params.d_in},) and state ({params.d_hidden},), got {x.shape} and {h.shape}"
        )


def _gate(x, h, W, U, b):
    return affine(x, W, b, (h, U))


def gru_step(params: GruParams, x_t: Tensor, h_prev: Tensor) -> Tensor:
    """One GRU update; ``z`` weights the candidate, ``1 - z`` the old state."""
    _check_step(params, x_t, h_prev)
    p = params
    z = sigmoid(_gate(x_t, h_prev, p.W_z, p.U_z, p.b_z))
    r = sigmoid(_gate(x_t, h_prev, p.W_r, p.U_r, p.b_r))
    cand = tanh_act(affine(x_t, p.W_h, p.b_h, (mul(r, h_prev), p.U_h)))
    return mul(1.0 - z, h_prev) + mul(z, cand)


def lstm_step(params: LstmParams, x_t: Tensor, state_prev: LstmState) -> LstmState:
    h_prev, c_prev = state_prev.h, state_prev.c
    _check_step(params, x_t, h_prev)
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"LSTM h and c differ in shape: {h_prev.shape} vs {c_prev.shape}")
    p = params
    f = sigmoid(_gate(x_t, h_prev, p.W_f, p.U_f, p.b_f))
    i = sigmoid(_gate(x_t, h_prev, p.W_i, p.U_i, p.b_i))
    o = sigmoid(_gate(x_t, h_prev, p.W_o, p.U_o, p.b_o))
    c = mul(f, c_prev) + mul(i, tanh_act(_gate(x_t, h_prev, p.W_c, p.U_c, p.b_c)))
    return LstmState(mul(o, tanh_act(c)), c)


def initial_state(step: Callable, params: _Params):
    zeros = np.zeros(params.d_hidden, dtype=params.tensors()[0].data.dtype)
    if step is lstm_step:
        return LstmState(Tensor(zeros), Tensor(zeros.copy()))
    return Tensor(zeros)


def hidden(state) -> Tensor:
    return state.h if isinstance(state, LstmState) else state


def run_sequence(step: Callable, params: _Params, inputs: Sequence[Tensor], initial=None) -> list:
    """Apply ``step`` over ``inputs`` with shared parameters; one state per input."""
    if len(inputs) == 0:
        raise ValueError("cannot run a recurrent cell over an empty sequence")
    state = initial_state(step, params) if initial is None else initial
    states = []
    for x in inputs:
        state = step(params, x, state)
        states.append(state)
    return states


def run_bidirectional(
    step: Callable, params_fwd: _Params, params_bwd: _Params, inputs: Sequence[Tensor]
) -> tuple[list[Tensor], Tensor]:
    """Concatenate forward and (position-aligned) backward hidden states.

    Returns the per-position concatenations and ``[h_fwd_T; h_bwd_1]``, the
    last state produced by each direction.
    """
    if params_fwd.d_hidden != params_bwd.d_hidden:
        raise ShapeError("forward and backward cells must share a hidden size")
    fwd = [hidden(s) for s in run_sequence(step, params_fwd, inputs)]
    bwd = [hidden(s) for s in run_sequence(step, params_bwd, list(reversed(inputs)))][::-1]
    per_position = [concat([f, b]) for f, b in zip(fwd, bwd)]
    return per_position, concat([fwd[-1], bwd[0]])


def run_bidirectional_final(step: Callable, params_fwd: _Params, params_bwd: _Params, inputs: Sequence[Tensor]) -> Tensor:
    """Only ``[h_fwd_T; h_bwd_1]``, skipping the per-position concatenations."""
    if params_fwd.d_hidden != params_bwd.d_hidden:
        raise ShapeError("forward and backward cells must share a hidden size")
    fwd = run_sequence(step, params_fwd, inputs)[-1]
    bwd = run_sequence(step, params_bwd, list(reversed(inputs)))[-1]
    return concat([hidden(fwd), hidden(bwd)])
