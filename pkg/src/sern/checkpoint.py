"""Versioned model checkpoints.

A checkpoint is a zip archive holding ``meta.json`` (format version, model
configuration, emotion regime and class order, vocabulary and its hash, and
free-form run metadata) plus one ``.npy`` member per parameter tensor. Member
timestamps are pinned so identical models produce identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import SernConfig, SernParams, init_params
from .text import EmotionSet, Vocabulary, emotion_set

FORMAT = "sern-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: SernParams
    vocab: Vocabulary
    regime: int
    meta: dict = field(default_factory=dict)

    @property
    def emotions(self) -> EmotionSet:
        return emotion_set(self.regime)

    @property
    def vocab_hash(self) -> str:
        return self.vocab.content_hash()


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": ckpt.params.config.to_dict(),
        "regime": ckpt.regime,
        "classes": list(ckpt.emotions.names),
        "vocab": {
            "tokens": ckpt.vocab.itos[2:],
            "min_frequency": ckpt.vocab.min_frequency,
            "hash": ckpt.vocab_hash,
        },
        "run": ckpt.meta,
    }
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode("utf-8"))
        for name, tensor in ckpt.params.named():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(tensor.data), allow_pickle=False)
            _member(zf, f"params/{name}.npy", buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing meta.json") from exc
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        config = SernConfig(**meta["config"])
        params = init_params(config, seed=0)
        state = {}
        for name, _ in params.named():
            with zf.open(f"params/{name}.npy") as fh:
                state[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    params.load_state_dict(state)
    vocab = Vocabulary(meta["vocab"]["tokens"], meta["vocab"]["min_frequency"])
    if vocab.content_hash() != meta["vocab"]["hash"]:
        raise CheckpointError(f"{path}: vocabulary does not match its recorded hash")
    return Checkpoint(params, vocab, int(meta["regime"]), meta.get("run", {}))
