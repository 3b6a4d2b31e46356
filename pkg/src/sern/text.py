"""Tokenization, vocabularies, emotion label regimes and corpus splitting."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

SIX_CLASSES = ("angry", "excited", "frustrated", "happy", "neutral", "sad")

# Categories that exist in the annotation scheme but are never classified;
# utterances carrying them are dropped during encoding.
OMITTED = frozenset({"other", "surprised", "fearful", "disgusted", "undecided"})

_TOKEN_RE = re.compile(
    r"""
    [^\W_]+(?=n't\b)             # "do" of "don't"
    | n't\b
    | '(?:m|s|re|ve|ll|d)\b      # clitics split off their host
    | [^\W_]+(?:-[^\W_]+)*       # words, hyphenated compounds kept whole
    | \.\.\.
    | [^\w\s]|_                  # any other punctuation mark
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into words, clitics and punctuation.

    >>> tokenize("I'm  FINE")
    ['i', "'m", 'fine']
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class EmotionSet:
    """Ordered class names plus label rewrites for merged classes."""

    names: tuple[str, ...]
    merges: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.names) not in (4, 5, 6):
            raise ValueError(f"an emotion set has 4, 5 or 6 classes, got {len(self.names)}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, label: str) -> int | None:
        """Class id for ``label``, or ``None`` when the label is dropped."""
        label = self.merges.get(label, label)
        if label in self.names:
            return self.names.index(label)
        if label in SIX_CLASSES or label in OMITTED:
            return None
        raise ValueError(f"unknown emotion label {label!r}")


def emotion_set(regime: int) -> EmotionSet:
    """The six-, five- (no frustrated) or four-class (excited merged into happy) regime."""
    if regime == 6:
        return EmotionSet(SIX_CLASSES)
    if regime == 5:
        return EmotionSet(("angry", "excited", "happy", "neutral", "sad"))
    if regime == 4:
        return EmotionSet(("angry", "happy", "neutral", "sad"), {"excited": "happy"})
    raise ValueError(f"regime must be 4, 5 or 6, got {regime}")


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    label: str | None = None


@dataclass(frozen=True)
class RawDialog:
    dialog_id: str
    utterances: tuple[Utterance, ...]
    session: str = ""

    def __post_init__(self):
        if not self.utterances:
            raise ValueError(f"dialog {self.dialog_id!r} has no utterances")
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if not self.session:
            object.__setattr__(self, "session", session_of(self.dialog_id))

    def to_record(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "session": self.session,
            "utterances": [{"speaker": u.speaker, "text": u.text, "label": u.label} for u in self.utterances],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RawDialog":
        utts = tuple(Utterance(str(u.get("speaker", "")), str(u["text"]), u.get("label")) for u in rec["utterances"])
        return cls(str(rec["dialog_id"]), utts, str(rec.get("session") or ""))


def session_of(dialog_id: str) -> str:
    """Session key encoded in a dialog id: ``Ses05F_impro01`` -> ``Ses05``."""
    m = re.match(r"(Ses\d+)", dialog_id)
    if m:
        return m.group(1)
    return dialog_id.split("_", 1)[0]


@dataclass
class EncodedDialog:
    dialog_id: str
    tokens: list[np.ndarray]
    labels: np.ndarray
    texts: list[str] = field(default_factory=list)
    speakers: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)


class Vocabulary:
    """Token/id mapping with ``PAD=0`` and ``UNK=1`` reserved."""

    def __init__(self, tokens: Sequence[str], min_frequency: int = 1):
        self.itos = [PAD_TOKEN, UNK_TOKEN, *tokens]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique")
        self.min_frequency = min_frequency

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi and self.stoi[token] > UNK

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, UNK) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"min_frequency={self.min_frequency}\n".encode())
        h.update("\n".join(self.itos).encode("utf-8"))
        return h.hexdigest()[:16]


def build_vocabulary(training_dialogs: Sequence[RawDialog], min_frequency: int = 5) -> Vocabulary:
    """Keep tokens seen at least ``min_frequency`` times, most frequent first."""
    if min_frequency < 1:
        raise ValueError("min_frequency must be at least 1")
    counts: Counter = Counter()
    for d in training_dialogs:
        for u in d.utterances:
            counts.update(tokenize(u.text))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_frequency), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_frequency)


def encode(dialog: RawDialog, vocab: Vocabulary, emotions: EmotionSet) -> EncodedDialog:
    """Integer-encode a dialog, dropping omitted-label and token-less utterances.

    Unlabeled utterances (label ``None``) are kept with label id ``-1``.
    """
    tokens, labels, texts, speakers = [], [], [], []
    for u in dialog.utterances:
        if u.label is None:
            lab = -1
        else:
            lab = emotions.index(u.label)
            if lab is None:
                continue
        ids = vocab.encode(tokenize(u.text))
        if ids.size == 0:
            continue
        tokens.append(ids)
        labels.append(lab)
        texts.append(u.text)
        speakers.append(u.speaker)
    return EncodedDialog(dialog.dialog_id, tokens, np.array(labels, dtype=np.int64), texts, speakers)


def split_corpus(
    dialogs: Sequence[RawDialog],
    holdout_session: str,
    validation_fraction: float = 0.07,
    seed: int = 0,
) -> tuple[list[RawDialog], list[RawDialog], list[RawDialog]]:
    """Hold out one session as test data and carve validation dialogs off the rest."""
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError("validation_fraction must lie strictly between 0 and 1")
    test = sorted((d for d in dialogs if d.session == holdout_session), key=lambda d: d.dialog_id)
    if not test:
        raise ValueError(f"holdout session {holdout_session!r} is not in the corpus")
    pool = [d for d in dialogs if d.session != holdout_session]
    train, validation = holdout_dialogs(pool, validation_fraction, seed)
    return train, validation, test


def holdout_dialogs(
    dialogs: Sequence[RawDialog], fraction: float, seed: int = 0
) -> tuple[list[RawDialog], list[RawDialog]]:
    """Seeded dialog-level split into ``(kept, held_out)``; both non-empty.

    Dialogs are ordered by id before shuffling so the result does not depend
    on input order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("the held-out fraction must lie strictly between 0 and 1")
    pool = sorted(dialogs, key=lambda d: d.dialog_id)
    if len(pool) < 2:
        raise ValueError("need at least two dialogs to hold some out")
    n_out = min(max(1, int(round(fraction * len(pool)))), len(pool) - 1)
    order = np.random.default_rng(seed).permutation(len(pool))
    out_idx = set(order[:n_out].tolist())
    kept = [d for i, d in enumerate(pool) if i not in out_idx]
    held = [d for i, d in enumerate(pool) if i in out_idx]
    return kept, held


def corpus_stats(dialogs: Sequence[EncodedDialog], n_classes: int = 6) -> np.ndarray:
    """Per-class utterance counts (unlabeled utterances are not counted)."""
    counts = np.zeros(n_classes, dtype=np.int64)
    for d in dialogs:
        labs = d.labels[d.labels >= 0]
        counts += np.bincount(labs, minlength=n_classes)[:n_classes]
    return counts


def format_counts(names: Sequence[str], counts: Sequence[int]) -> str:
    """Two-row class/count table, tab separated."""
    head = "Class\t" + "\t".join(n.capitalize() for n in names) + "\tTotal"
    row = "Utterances\t" + "\t".join(str(int(c)) for c in counts) + f"\t{int(sum(counts))}"
    return head + "\n" + row


# -- corpus files ------------------------------------------------------------


def write_corpus(dialogs: Iterable[RawDialog], path: str | Path) -> None:
    """One JSON object per line, UTF-8, in the given dialog order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in dialogs:
            fh.write(json.dumps(d.to_record(), ensure_ascii=False) + "\n")


def read_corpus(path: str | Path) -> list[RawDialog]:
    dialogs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                dialogs.append(RawDialog.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed dialog record ({exc})") from exc
    return dialogs
