"""Readers that turn transcript directories into :class:`RawDialog` lists.

Two layouts are understood:

* IEMOCAP releases: ``Session*/dialog/transcriptions/*.txt`` next to
  ``Session*/dialog/EmoEvaluation/*.txt``. The majority label of each
  utterance is taken from the evaluation summary line.
* A generic layout: one ``<dialog_id>.txt`` file per dialog, one utterance
  per line as ``speaker<TAB>label<TAB>text``. Blank lines and lines starting
  with ``#`` are ignored.
"""

from __future__ import annotations

import re
from pathlib import Path

from .text import RawDialog, Utterance

IEMOCAP_CODES = {
    "ang": "angry",
    "hap": "happy",
    "exc": "excited",
    "fru": "frustrated",
    "neu": "neutral",
    "sad": "sad",
    "sur": "surprised",
    "fea": "fearful",
    "dis": "disgusted",
    "oth": "other",
    "xxx": "undecided",
}

_TRANSCRIPT_RE = re.compile(r"^(Ses\w+?_[FM]\w*?\d{3})\s+\[(\d+\.\d+)-(\d+\.\d+)\]:\s*(.*)$")
_EVAL_RE = re.compile(r"^\[(\d+\.\d+)\s*-\s*(\d+\.\d+)\]\s+(Ses\S+)\s+(\w+)\s+\[")


class IngestError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def read_generic_dialog(path: Path) -> RawDialog:
    utts = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path.name}:{lineno}: expected speaker<TAB>label<TAB>text")
        speaker, label, text = parts
        utts.append(Utterance(speaker, text, label or None))
    if not utts:
        raise ValueError(f"{path.name}: no utterances")
    return RawDialog(path.stem, tuple(utts))


def write_generic_dialog(dialog: RawDialog, directory: Path) -> Path:
    path = Path(directory) / f"{dialog.dialog_id}.txt"
    lines = [f"{u.speaker}\t{u.label or ''}\t{u.text}" for u in dialog.utterances]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _iemocap_labels(path: Path) -> dict[str, str]:
    labels = {}
    for line in path.read_text(encoding="utf-8", errors="replace").splitlines():
        m = _EVAL_RE.match(line)
        if m:
            labels[m.group(3)] = IEMOCAP_CODES.get(m.group(4), "other")
    return labels


def read_iemocap_dialog(transcript: Path, evaluation: Path) -> RawDialog:
    labels = _iemocap_labels(evaluation)
    rows = []
    for line in transcript.read_text(encoding="utf-8", errors="replace").splitlines():
        m = _TRANSCRIPT_RE.match(line.strip())
        if not m:
            continue
        utt_id, start, text = m.group(1), float(m.group(2)), m.group(4)
        speaker = utt_id.rsplit("_", 1)[1][0]
        rows.append((start, utt_id, Utterance(speaker, text, labels.get(utt_id, "undecided"))))
    if not rows:
        raise ValueError(f"{transcript.name}: no utterances recognised")
    rows.sort(key=lambda r: (r[0], r[1]))
    return RawDialog(transcript.stem, tuple(u for _, _, u in rows))


def _is_iemocap(root: Path) -> bool:
    return any(root.glob("**/dialog/transcriptions"))


def ingest_directory(root: str | Path) -> list[RawDialog]:
    """Read every dialog under ``root``, sorted by dialog id.

    Raises :class:`IngestError` listing one problem per bad file; nothing is
    returned if any file fails.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError([f"{root}: not a readable directory"])
    dialogs, problems = [], []
    if _is_iemocap(root):
        for tdir in sorted(root.glob("**/dialog/transcriptions")):
            edir = tdir.parent / "EmoEvaluation"
            for tfile in sorted(tdir.glob("*.txt")):
                efile = edir / tfile.name
                try:
                    if not efile.exists():
                        raise ValueError(f"{tfile.name}: missing evaluation file {efile}")
                    dialogs.append(read_iemocap_dialog(tfile, efile))
                except (OSError, ValueError) as exc:
                    problems.append(str(exc))
    else:
        for path in sorted(root.glob("*.txt")):
            try:
                dialogs.append(read_generic_dialog(path))
            except (OSError, UnicodeDecodeError, ValueError) as exc:
                problems.append(f"{path.name}: {exc}" if path.name not in str(exc) else str(exc))
    if problems:
        raise IngestError(problems)
    if not dialogs:
        raise IngestError([f"{root}: no dialog files found"])
    return sorted(dialogs, key=lambda d: d.dialog_id)
