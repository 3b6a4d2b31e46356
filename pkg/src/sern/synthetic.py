"""A small dialog corpus with planted long-range emotional cues.

Every dialog opens with a cue utterance whose wording reveals the dialog's
emotion, continues with at least five emotion-neutral filler turns (labeled
``neutral``), and closes with the same text ``"Thank you."`` labeled with the
cue's emotion. The closing utterance can only be classified correctly by a
model that carries information across the fillers; from its text alone the
best achievable accuracy on the closings is one in six.
"""

from __future__ import annotations

from pathlib import Path

from .text import SIX_CLASSES, RawDialog, Utterance

CUES = {
    "angry": ("Oh, you infuriate me! I am furious.", "This is outrageous, I am furious with you!"),
    "excited": ("Wow, we won the trip! I am thrilled!", "Guess what, I got in! I am thrilled!"),
    "frustrated": ("Ugh, the line again. This is so annoying.", "I keep trying and nothing works, so annoying."),
    "happy": ("I feel so glad today, everything is lovely.", "What a lovely morning, I am glad."),
    "neutral": ("The meeting starts at noon.", "I parked the car on the street."),
    "sad": ("My dog died last week. I miss him.", "She is gone and I feel so lonely."),
}

FILLERS = (
    "What did you say?",
    "Okay.",
    "I see.",
    "Go on.",
    "And then what?",
    "Right, right.",
    "Hmm, let me think.",
    "Tell me more.",
    "Really?",
    "Well, maybe.",
)

SURPRISE = "Oh! I did not expect that."
CLOSING = "Thank you."
N_FILLERS = 5


def synthetic_dialogs() -> list[RawDialog]:
    """The twelve bundled dialogs, three sessions of four."""
    dialogs = []
    for k in range(12):
        emotion = SIX_CLASSES[k % 6]
        cue = CUES[emotion][k // 6]
        utts = [Utterance("A", cue, emotion)]
        for j in range(N_FILLERS):
            utts.append(Utterance("B" if j % 2 == 0 else "A", FILLERS[(k + 3 * j) % len(FILLERS)], "neutral"))
            if j == 1 and k % 3 == 0:
                utts.append(Utterance("A", SURPRISE, "surprised"))
        utts.append(Utterance("A", CLOSING, emotion))
        session = f"Ses{k // 4 + 1:02d}"
        dialogs.append(RawDialog(f"{session}_d{k + 1:02d}", tuple(utts), session))
    return dialogs


def bundled_corpus_dir() -> Path:
    """Directory holding the same dialogs as generic-layout transcript files."""
    return Path(__file__).resolve().parent / "data" / "synthetic"
