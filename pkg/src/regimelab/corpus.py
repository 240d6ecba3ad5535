"""
Labelled dialogue corpora and label-dynamics analytics.

A corpus file is a UTF-8 JSON array of turn objects::

    [{"turn": 14, "user": "...", "assistant": "...", "label": "NP"}, ...]

Unknown keys are ignored. Turn indices must be strictly increasing.
Text fields are carried through verbatim and never interpreted.

Analytics are indexed by *sequence position* (1..T), with the original turn
index carried as metadata, so sparse corpora (e.g. a subset of focal turns
from a longer session) are handled without gaps.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusParseError, OrderError, ParameterError, SchemaError

LABELS = ("NP", "FR", "MN")
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}

DYNAMICS_HEADER = ("position", "turn", "label", "cum_np", "cum_fr", "cum_mn",
                   "win_np", "win_fr", "win_mn")


@dataclass(frozen=True)
class LabeledTurn:
    turn: int
    label: str
    user: str = ""
    assistant: str = ""

    def __post_init__(self):
        if self.label not in LABEL_INDEX:
            raise SchemaError(
                f"turn {self.turn}: label {self.label!r} is not one of {LABELS}",
                turn=self.turn)
        if isinstance(self.turn, bool) or not isinstance(self.turn, int) or self.turn < 1:
            raise SchemaError(f"turn index must be a positive integer, got {self.turn!r}",
                              turn=self.turn)


@dataclass(frozen=True)
class LabeledCorpus:
    turns: tuple

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise OrderError("corpus is empty")
        idx = [t.turn for t in self.turns]
        for prev, cur in zip(idx, idx[1:]):
            if cur <= prev:
                raise OrderError(
                    f"turn indices must be strictly increasing: {cur} follows {prev}")

    def __len__(self):
        return len(self.turns)

    @property
    def labels(self):
        return tuple(t.label for t in self.turns)

    @property
    def turn_indices(self):
        return tuple(t.turn for t in self.turns)

    def codes(self) -> np.ndarray:
        """Labels as integer codes (0=NP, 1=FR, 2=MN)."""
        return np.array([LABEL_INDEX[lab] for lab in self.labels], dtype=np.intp)

    @classmethod
    def from_labels(cls, labels: Iterable[str], turns: Sequence[int] | None = None):
        labels = list(labels)
        if turns is None:
            turns = range(1, len(labels) + 1)
        return cls(tuple(LabeledTurn(turn=int(t), label=lab)
                         for t, lab in zip(turns, labels, strict=True)))


def load_corpus(raw) -> LabeledCorpus:
    """Parse and validate a corpus from bytes, text or a binary file object."""
    if hasattr(raw, "read"):
        raw = raw.read()
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusParseError(f"corpus is not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(f"malformed corpus JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise CorpusParseError("corpus must be a JSON array of turn objects")

    turns = []
    for pos, item in enumerate(doc, start=1):
        if not isinstance(item, dict):
            raise SchemaError(f"entry {pos} is not an object")
        if "turn" not in item or "label" not in item:
            raise SchemaError(f"entry {pos} lacks 'turn' or 'label'",
                              turn=item.get("turn"))
        user = item.get("user", "")
        assistant = item.get("assistant", "")
        if not isinstance(user, str) or not isinstance(assistant, str):
            raise SchemaError(f"turn {item['turn']}: text fields must be strings",
                              turn=item["turn"])
        turns.append(LabeledTurn(turn=item["turn"], label=item["label"],
                                 user=user, assistant=assistant))
    return LabeledCorpus(tuple(turns))


def dump_corpus(corpus: LabeledCorpus) -> str:
    doc = [{"turn": t.turn, "user": t.user, "assistant": t.assistant,
            "label": t.label} for t in corpus.turns]
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def label_strip(corpus: LabeledCorpus):
    """``[(turn, label), ...]`` in sequence order."""
    return [(t.turn, t.label) for t in corpus.turns]


def cumulative_counts(corpus: LabeledCorpus) -> np.ndarray:
    """``(T, 3)`` integer array of running (NP, FR, MN) counts."""
    onehot = np.eye(3, dtype=np.int64)[corpus.codes()]
    return np.cumsum(onehot, axis=0)


def sliding_proportions(corpus: LabeledCorpus, window: int = 10) -> np.ndarray:
    """``(T, 3)`` label proportions over the trailing window ending at each
    position; the window is truncated at the start of the sequence."""
    if isinstance(window, bool) or int(window) != window or window < 1:
        raise ParameterError(f"window must be a positive integer, got {window!r}")
    window = int(window)
    cum = cumulative_counts(corpus)
    padded = np.vstack([np.zeros((1, 3), dtype=np.int64), cum])
    pos = np.arange(1, len(corpus) + 1)
    start = np.maximum(pos - window, 0)
    counts = padded[pos] - padded[start]
    return counts / (pos - start)[:, None]


def dynamics_table(corpus: LabeledCorpus, window: int = 10):
    cum = cumulative_counts(corpus)
    win = sliding_proportions(corpus, window)
    rows = []
    for i, t in enumerate(corpus.turns):
        rows.append((i + 1, t.turn, t.label, *map(int, cum[i]), *map(float, win[i])))
    return rows


def dynamics_csv(corpus: LabeledCorpus, window: int = 10) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DYNAMICS_HEADER)
    for row in dynamics_table(corpus, window):
        writer.writerow([*row[:6], *(f"{x:.6f}" for x in row[6:])])
    return buf.getvalue()
