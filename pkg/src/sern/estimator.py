"""scikit-learn style wrappers around the text pipeline and the classifier.

``X`` is always a list of dialogs (:class:`~sern.text.RawDialog` objects or
their dict records). Emotion labels travel inside the dialogs, so ``y`` is
accepted for API compatibility and ignored.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .attention import SCORE_KINDS, AttentionTrace
from .checkpoint import Checkpoint
from .embeddings import skipgram_pretrain
from .model import ARCHITECTURES, CLASSIFIER_INPUTS, SernConfig, init_params, predict_dialog
from .text import (
    EncodedDialog,
    RawDialog,
    build_vocabulary,
    emotion_set,
    encode,
    holdout_dialogs,
)
from .training import ConfusionMatrix, MetricsReport, evaluate, metrics, train


def check_dialogs(X, allow_empty: bool = False) -> list[RawDialog]:
    """Coerce ``X`` into a list of :class:`RawDialog`, raising on anything else."""
    if isinstance(X, (RawDialog, dict, str)):
        raise TypeError("expected a sequence of dialogs, got a single item")
    try:
        items = list(X)
    except TypeError as exc:
        raise TypeError(f"expected a sequence of dialogs, got {type(X).__name__}") from exc
    if not items and not allow_empty:
        raise ValueError("no dialogs given")
    out = []
    for i, d in enumerate(items):
        if isinstance(d, dict):
            d = RawDialog.from_record(d)
        if not isinstance(d, RawDialog):
            raise TypeError(f"item {i} is a {type(d).__name__}, not a dialog")
        out.append(d)
    return out


def check_params(regime: int, score: str, window, architecture: str, classifier_input: str, dims: dict) -> None:
    if regime not in (4, 5, 6):
        raise ValueError(f"regime must be 4, 5 or 6, got {regime}")
    if score not in SCORE_KINDS:
        raise ValueError(f"score must be one of {SCORE_KINDS}, got {score!r}")
    if window is not None and (int(window) != window or window < 1):
        raise ValueError(f"window must be a positive integer or None, got {window!r}")
    if architecture not in ARCHITECTURES:
        raise ValueError(f"architecture must be one of {ARCHITECTURES}")
    if classifier_input not in CLASSIFIER_INPUTS:
        raise ValueError(f"classifier_input must be one of {CLASSIFIER_INPUTS}")
    for name, value in dims.items():
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")


class DialogEncoder(TransformerMixin, BaseEstimator):
    """Learns a vocabulary from training dialogs and integer-encodes dialogs."""

    def __init__(self, regime: int = 6, min_frequency: int = 5):
        self.regime = regime
        self.min_frequency = min_frequency

    def fit(self, X, y=None):
        dialogs = check_dialogs(X)
        self.emotions_ = emotion_set(self.regime)
        self.vocabulary_ = build_vocabulary(dialogs, self.min_frequency)
        self.classes_ = np.array(self.emotions_.names)
        return self

    def transform(self, X) -> list[EncodedDialog]:
        check_is_fitted(self, "vocabulary_")
        return [encode(d, self.vocabulary_, self.emotions_) for d in check_dialogs(X, allow_empty=True)]


class SERNClassifier(ClassifierMixin, BaseEstimator):
    """Per-utterance emotion classifier for dialogs.

    Parameters mirror :class:`~sern.model.SernConfig` and
    :func:`~sern.training.train`; ``attention_score`` is the config's
    ``score`` (renamed so it does not hide :meth:`score`). When ``fit`` is not given validation
    dialogs, a ``validation_fraction`` share of ``X`` is held out (whole
    dialogs, seeded by ``random_state``).

    Attributes
    ----------
    classes_ : ndarray of str
        Class names in model output order.
    encoder_ : DialogEncoder
    params_ : SernParams
        Parameters from the best validation epoch.
    history_ : list of dict
        Per-epoch training log.
    best_epoch_ : int
    """

    def __init__(
        self,
        architecture: str = "sern",
        regime: int = 6,
        attention_score: str = "dot",
        window: int | None = None,
        d_emb: int = 100,
        d_lstm: int = 128,
        d_gru: int = 128,
        d_attn: int = 64,
        classifier_input: str = "context",
        min_frequency: int = 5,
        validation_fraction: float = 0.07,
        epochs: int = 50,
        patience: int | None = 10,
        lr: float = 5e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        pretrain_embeddings: bool = False,
        pretrain_epochs: int = 5,
        pretrain_window: int = 2,
        pretrain_lr: float = 0.1,
        dtype: str = "float64",
        random_state: int = 0,
    ):
        self.architecture = architecture
        self.regime = regime
        self.attention_score = attention_score
        self.window = window
        self.d_emb = d_emb
        self.d_lstm = d_lstm
        self.d_gru = d_gru
        self.d_attn = d_attn
        self.classifier_input = classifier_input
        self.min_frequency = min_frequency
        self.validation_fraction = validation_fraction
        self.epochs = epochs
        self.patience = patience
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.pretrain_embeddings = pretrain_embeddings
        self.pretrain_epochs = pretrain_epochs
        self.pretrain_window = pretrain_window
        self.pretrain_lr = pretrain_lr
        self.dtype = dtype
        self.random_state = random_state

    def _config(self, vocab_size: int) -> SernConfig:
        return SernConfig(
            vocab_size=vocab_size,
            n_classes=len(emotion_set(self.regime)),
            architecture=self.architecture,
            d_emb=self.d_emb,
            d_lstm=self.d_lstm,
            d_gru=self.d_gru,
            d_attn=self.d_attn,
            score=self.attention_score,
            window=self.window,
            classifier_input=self.classifier_input,
            dtype=self.dtype,
        )

    def fit(self, X, y=None, validation=None):
        check_params(
            self.regime,
            self.attention_score,
            self.window,
            self.architecture,
            self.classifier_input,
            {"d_emb": self.d_emb, "d_lstm": self.d_lstm, "d_gru": self.d_gru, "d_attn": self.d_attn},
        )
        dialogs = check_dialogs(X)
        if validation is None:
            dialogs, validation = holdout_dialogs(dialogs, self.validation_fraction, self.random_state)
        else:
            validation = check_dialogs(validation)
        self.encoder_ = DialogEncoder(self.regime, self.min_frequency).fit(dialogs)
        self.classes_ = self.encoder_.classes_
        train_enc = self.encoder_.transform(dialogs)
        val_enc = self.encoder_.transform(validation)
        config = self._config(len(self.encoder_.vocabulary_))
        params = init_params(config, self.random_state)
        if self.pretrain_embeddings:
            skipgram_pretrain(
                train_enc,
                params.embedding,
                window=self.pretrain_window,
                epochs=self.pretrain_epochs,
                lr=self.pretrain_lr,
                seed=self.random_state,
            )
        result = train(
            config,
            train_enc,
            val_enc,
            epochs=self.epochs,
            seed=self.random_state,
            patience=self.patience,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            params=params,
        )
        self.params_ = result.params
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        return self

    def _encoded(self, X) -> list[EncodedDialog]:
        check_is_fitted(self, "params_")
        return self.encoder_.transform(X)

    def predict_proba(self, X) -> list[np.ndarray]:
        """One ``(n_utterances, n_classes)`` array per dialog.

        Utterances dropped during encoding (omitted labels, no tokens) get
        no row.
        """
        return [predict_dialog(self.params_, d).probs for d in self._encoded(X)]

    def predict(self, X) -> list[np.ndarray]:
        return [self.classes_[p.argmax(axis=1)] for p in self.predict_proba(X)]

    def attention(self, X, window: int | None = None) -> list[AttentionTrace]:
        return [predict_dialog(self.params_, d, window).trace for d in self._encoded(X)]

    def evaluate(self, X) -> tuple[MetricsReport, ConfusionMatrix]:
        cm, _ = evaluate(self.params_, self._encoded(X))
        return metrics(cm), cm

    def score(self, X, y=None, sample_weight=None) -> float:
        """Accuracy over all labeled utterances of ``X``."""
        return self.evaluate(X)[0].accuracy

    def to_checkpoint(self, **meta) -> Checkpoint:
        check_is_fitted(self, "params_")
        run = {"estimator": self.get_params(), "best_epoch": self.best_epoch_, **meta}
        return Checkpoint(self.params_, self.encoder_.vocabulary_, self.regime, run)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "SERNClassifier":
        params = dict(ckpt.meta.get("estimator", {}))
        cfg = ckpt.params.config
        params.update(
            architecture=cfg.architecture,
            regime=ckpt.regime,
            attention_score=cfg.score,
            window=cfg.window,
            d_emb=cfg.d_emb,
            d_lstm=cfg.d_lstm,
            d_gru=cfg.d_gru,
            d_attn=cfg.d_attn,
            classifier_input=cfg.classifier_input,
            dtype=cfg.dtype,
            min_frequency=ckpt.vocab.min_frequency,
        )
        est = cls(**params)
        enc = DialogEncoder(ckpt.regime, ckpt.vocab.min_frequency)
        enc.emotions_ = ckpt.emotions
        enc.vocabulary_ = ckpt.vocab
        enc.classes_ = np.array(ckpt.emotions.names)
        est.encoder_ = enc
        est.classes_ = enc.classes_
        est.params_ = ckpt.params
        est.history_ = []
        est.best_epoch_ = int(ckpt.meta.get("best_epoch", 0))
        return est

