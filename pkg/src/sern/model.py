"""The hierarchical self-attentive classifier and its two context baselines.

Utterances are embedded and read by a bidirectional LSTM; the resulting
utterance vectors feed a unidirectional dialog GRU whose states are combined
by causal self-attention into a context vector that drives a softmax
classifier. Processing is strictly left to right, so a dialog can be
consumed one utterance at a time (see :class:`DialogRunState`).

Architectures:

``sern``
    embeddings -> utterance BiLSTM -> dialog GRU -> self-attention -> softmax
``bilstm``
    embeddings -> utterance BiLSTM -> softmax (no dialog context)
``bilstm_att``
    embeddings -> utterance BiLSTM -> self-attention over utterance vectors -> softmax
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .attention import AttentionParams, AttentionTrace, causal_weights, context_vector
from .embeddings import EmbeddingTable, init_embeddings, lookup
from .numerics import Tensor, affine, concat, softmax
from .recurrent import GruParams, LstmParams, gru_step, initial_state, lstm_step, run_bidirectional_final
from .text import EncodedDialog

ARCHITECTURES = ("sern", "bilstm", "bilstm_att")
CLASSIFIER_INPUTS = ("context", "concat")


@dataclass(frozen=True)
class SernConfig:
    vocab_size: int
    n_classes: int = 6
    architecture: str = "sern"
    d_emb: int = 100
    d_lstm: int = 128
    d_gru: int = 128
    d_attn: int = 64
    score: str = "dot"
    window: int | None = None
    classifier_input: str = "context"
    dtype: str = "float64"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.classifier_input not in CLASSIFIER_INPUTS:
            raise ValueError(f"classifier_input must be one of {CLASSIFIER_INPUTS}")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be at least 1")
        for name in ("vocab_size", "n_classes", "d_emb", "d_lstm", "d_gru", "d_attn"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def d_state(self) -> int:
        """Size of the vectors the attention operates on."""
        return self.d_gru if self.architecture == "sern" else 2 * self.d_lstm

    @property
    def d_classifier(self) -> int:
        if self.architecture == "bilstm":
            return 2 * self.d_lstm
        return self.d_state * (2 if self.classifier_input == "concat" else 1)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SernParams:
    config: SernConfig
    embedding: EmbeddingTable
    utt_fwd: LstmParams
    utt_bwd: LstmParams
    dialog: GruParams | None
    attention: AttentionParams | None
    W_out: Tensor
    b_out: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        out = [("embedding.weight", self.embedding.weight)]
        out += [(f"utt_fwd.{n}", t) for n, t in self.utt_fwd.named()]
        out += [(f"utt_bwd.{n}", t) for n, t in self.utt_bwd.named()]
        if self.dialog is not None:
            out += [(f"dialog.{n}", t) for n, t in self.dialog.named()]
        if self.attention is not None:
            out += [(f"attention.{n}", t) for n, t in self.attention.named()]
        out += [("classifier.W_out", self.W_out), ("classifier.b_out", self.b_out)]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.named()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named())
        if set(named) != set(state):
            missing = sorted(set(named) ^ set(state))
            raise KeyError(f"parameter names differ: {missing}")
        for n, t in named.items():
            if state[n].shape != t.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {t.shape}")
            t.data = np.array(state[n], dtype=t.data.dtype, copy=True)
            t.zero_grad()


def init_params(config: SernConfig, seed: int = 0) -> SernParams:
    dtype = np.dtype(config.dtype)
    embedding = init_embeddings(config.vocab_size, config.d_emb, seed=seed, dtype=dtype)
    rng = np.random.default_rng([seed, 1])
    utt_fwd = LstmParams.init(config.d_emb, config.d_lstm, rng, dtype)
    utt_bwd = LstmParams.init(config.d_emb, config.d_lstm, rng, dtype)
    dialog = GruParams.init(2 * config.d_lstm, config.d_gru, rng, dtype) if config.architecture == "sern" else None
    attention = None
    if config.architecture != "bilstm":
        attention = AttentionParams.init(config.score, config.d_state, rng, config.d_attn, dtype)
    k = 1.0 / np.sqrt(config.d_classifier)
    W_out = Tensor(rng.uniform(-k, k, (config.n_classes, config.d_classifier)).astype(dtype), requires_grad=True)
    b_out = Tensor(np.zeros(config.n_classes, dtype=dtype), requires_grad=True)
    return SernParams(config, embedding, utt_fwd, utt_bwd, dialog, attention, W_out, b_out)


def encode_utterance(params: SernParams, token_ids) -> Tensor:
    """Final forward and backward LSTM states of one utterance, concatenated."""
    if len(token_ids) == 0:
        raise ValueError("cannot encode an empty utterance")
    x = lookup(params.embedding, token_ids)
    return run_bidirectional_final(lstm_step, params.utt_fwd, params.utt_bwd, x)


@dataclass(frozen=True)
class DialogRunState:
    """Everything needed to continue a dialog with its next utterance."""

    h: Tensor | None
    buffer: tuple = ()
    position: int = 0
    window: int | None = None


def new_run_state(params: SernParams, window: int | None = None) -> DialogRunState:
    h = initial_state(gru_step, params.dialog) if params.dialog is not None else None
    return DialogRunState(h, (), 0, window)


def dialog_step(params: SernParams, run_state: DialogRunState, f_utt: Tensor) -> tuple[Tensor, DialogRunState]:
    """Advance the dialog encoder by one utterance.

    Without a dialog GRU (the ``bilstm_att`` baseline) the utterance vector
    itself is buffered.
    """
    if params.dialog is not None:
        f_dial = gru_step(params.dialog, f_utt, run_state.h)
    else:
        f_dial = f_utt
    buffer = run_state.buffer + (f_dial,)
    if run_state.window is not None and len(buffer) > run_state.window:
        buffer = buffer[-run_state.window :]
    new_h = f_dial if params.dialog is not None else None
    return f_dial, replace(run_state, h=new_h, buffer=buffer, position=run_state.position + 1)


def _classify(params: SernParams, features: Tensor) -> Tensor:
    return softmax(affine(features, params.W_out, params.b_out))


def classify_utterance(params: SernParams, run_state: DialogRunState) -> tuple[Tensor, Tensor]:
    """Class probabilities for the newest utterance and its attention weights."""
    if not run_state.buffer:
        raise ValueError("no dialog state to classify")
    states = run_state.buffer
    weights = causal_weights(params.attention, states)
    c = context_vector(weights, states)
    if params.config.classifier_input == "concat":
        c = concat([c, states[-1]])
    return _classify(params, c), weights


def stream_step(params: SernParams, run_state: DialogRunState, token_ids):
    """Consume one utterance: returns ``(probs, weights_or_None, new_state)``."""
    f_utt = encode_utterance(params, token_ids)
    if params.config.architecture == "bilstm":
        return _classify(params, f_utt), None, replace(run_state, position=run_state.position + 1)
    _, run_state = dialog_step(params, run_state, f_utt)
    probs, weights = classify_utterance(params, run_state)
    return probs, weights, run_state


def forward_dialog(
    params: SernParams, dialog: EncodedDialog | Sequence, window: int | None = None
) -> tuple[list[Tensor], AttentionTrace]:
    """Per-utterance probabilities and attention trace for a whole dialog.

    Runs the exact same code path as utterance-at-a-time streaming.
    ``window`` defaults to the configured one.
    """
    tokens = dialog.tokens if isinstance(dialog, EncodedDialog) else list(dialog)
    if not tokens:
        raise ValueError("cannot run an empty dialog")
    if window is None:
        window = params.config.window
    state = new_run_state(params, window)
    probs, trace = [], AttentionTrace()
    for ids in tokens:
        p, w, state = stream_step(params, state, ids)
        probs.append(p)
        if w is not None:
            trace.append(w.data, state.position - len(w.data))
    return probs, trace


def _require(params: SernParams, arch: str) -> None:
    if params.config.architecture != arch:
        raise ValueError(f"expected {arch} parameters, got {params.config.architecture}")


def baseline_bilstm(params: SernParams, dialog: EncodedDialog) -> list[Tensor]:
    """Context-free predictions: each utterance is classified on its own."""
    _require(params, "bilstm")
    return forward_dialog(params, dialog)[0]


def baseline_bilstm_att(params: SernParams, dialog: EncodedDialog, window: int | None = None) -> list[Tensor]:
    _require(params, "bilstm_att")
    return forward_dialog(params, dialog, window)[0]


@dataclass
class Prediction:
    probs: np.ndarray
    trace: AttentionTrace = field(default_factory=AttentionTrace)

    @property
    def labels(self) -> np.ndarray:
        return self.probs.argmax(axis=1)


def predict_dialog(params: SernParams, dialog: EncodedDialog, window: int | None = None) -> Prediction:
    probs, trace = forward_dialog(params, dialog, window)
    return Prediction(np.stack([p.data for p in probs]), trace)
