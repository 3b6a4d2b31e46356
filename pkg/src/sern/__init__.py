"""Self-attentive emotion recognition over dialogs.

A hierarchical model: a bidirectional LSTM encodes each utterance, a GRU
runs over the utterance vectors, and causal self-attention over the GRU
states feeds a softmax classifier. Everything, including reverse-mode
differentiation, is implemented on numpy.
"""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .estimator import DialogEncoder, SERNClassifier, check_dialogs
from .ingest import IngestError, ingest_directory
from .model import SernConfig, SernParams, forward_dialog, init_params, predict_dialog, stream_step
from .synthetic import bundled_corpus_dir, synthetic_dialogs
from .text import (
    EncodedDialog,
    RawDialog,
    Utterance,
    Vocabulary,
    build_vocabulary,
    emotion_set,
    encode,
    read_corpus,
    split_corpus,
    tokenize,
    write_corpus,
)
from .training import TrainingDiverged, confusion, evaluate, format_report, metrics, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "DialogEncoder",
    "EncodedDialog",
    "IngestError",
    "RawDialog",
    "SERNClassifier",
    "SernConfig",
    "SernParams",
    "TrainingDiverged",
    "Utterance",
    "Vocabulary",
    "build_vocabulary",
    "bundled_corpus_dir",
    "check_dialogs",
    "confusion",
    "emotion_set",
    "encode",
    "evaluate",
    "format_report",
    "forward_dialog",
    "ingest_directory",
    "init_params",
    "load_checkpoint",
    "metrics",
    "predict_dialog",
    "read_corpus",
    "save_checkpoint",
    "split_corpus",
    "stream_step",
    "synthetic_dialogs",
    "tokenize",
    "train",
    "write_corpus",
]
