"""Dialogue-recommendation corpora: schema, loading, validation and splitting.

A corpus is a set of items (id + description) and a list of dialogues. Each
dialogue carries one or more recommendation turns: the dialogue prefix seen so
far, the candidate items available at that point and a binary gold label per
candidate.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import random
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

from .errors import DomainError, ParseError, ValidationError

logger = logging.getLogger(__name__)


class Speaker(str, enum.Enum):
    OPERATOR = "operator"
    CUSTOMER = "customer"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class CorpusFormat(str, enum.Enum):
    NATIVE = "native"
    CHATREC_RATINGS = "chatrec"


def normalize_text(text: str) -> str:
    return unicodedata.normalize("NFC", text).strip()


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValidationError("utterance text is empty")


@dataclass(frozen=True)
class Item:
    id: str
    description: str

    def __post_init__(self):
        if not self.description or not self.description.strip():
            raise ValidationError(f"item {self.id!r} has an empty description")


@dataclass(frozen=True)
class RecommendationTurn:
    turn_id: str
    history: tuple[Utterance, ...]
    candidate_item_ids: tuple[str, ...]
    labels: dict[str, int]

    def __post_init__(self):
        if not self.candidate_item_ids:
            raise ValidationError(f"turn {self.turn_id!r} has an empty candidate set")
        if len(set(self.candidate_item_ids)) != len(self.candidate_item_ids):
            raise ValidationError(f"turn {self.turn_id!r} lists a candidate twice")
        if set(self.labels) != set(self.candidate_item_ids):
            raise ValidationError(
                f"turn {self.turn_id!r}: labels must cover exactly the candidate set"
            )
        if any(v not in (0, 1) for v in self.labels.values()):
            raise ValidationError(f"turn {self.turn_id!r}: labels must be 0 or 1")
        if max(self.labels.values()) != 1:
            raise ValidationError(f"turn {self.turn_id!r} has no positive label")

    @property
    def gold_item_ids(self) -> list[str]:
        return [i for i in self.candidate_item_ids if self.labels[i] == 1]


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    turns: tuple[RecommendationTurn, ...]
    split: Split | None = None


@dataclass(frozen=True)
class Corpus:
    items: dict[str, Item]
    dialogues: tuple[Dialogue, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen = set()
        turn_ids = set()
        for d in self.dialogues:
            if d.dialogue_id in seen:
                raise ValidationError(f"duplicate dialogue_id {d.dialogue_id!r}")
            seen.add(d.dialogue_id)
            for t in d.turns:
                if t.turn_id in turn_ids:
                    raise ValidationError(f"duplicate turn_id {t.turn_id!r}")
                turn_ids.add(t.turn_id)
                for item_id in t.candidate_item_ids:
                    if item_id not in self.items:
                        raise ValidationError(
                            f"turn {t.turn_id!r} references unknown item {item_id!r}"
                        )

    def turns(self, split: Split | str | None = None) -> Iterator[RecommendationTurn]:
        """Yield turns in canonical (dialogue, turn) order, optionally for one split."""
        want = Split(split) if split is not None else None
        for d in self.dialogues:
            if want is not None and d.split != want:
                continue
            yield from d.turns

    def subset(self, split: Split | str) -> "Corpus":
        want = Split(split)
        return Corpus(
            items=self.items,
            dialogues=tuple(d for d in self.dialogues if d.split == want),
            meta=self.meta,
        )

    def descriptions(self, item_ids) -> list[str]:
        return [self.items[i].description for i in item_ids]


def binarize_rating(rating: int) -> int:
    """Map a 1-5 interest rating onto a like (1) / dislike (0) label."""
    if isinstance(rating, bool) or not isinstance(rating, int) or not 1 <= rating <= 5:
        raise DomainError(f"rating must be an integer in 1..5, got {rating!r}")
    return 0 if rating <= 2 else 1


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing required key in {where}", field=key)
    return obj[key]


def _parse_utterance(raw, where) -> Utterance:
    speaker = _require(raw, "speaker", where)
    text = _require(raw, "text", where)
    try:
        sp = Speaker(str(speaker).strip().lower())
    except ValueError:
        raise ParseError(f"unknown speaker {speaker!r} in {where}", field="speaker") from None
    if not isinstance(text, str):
        raise ParseError(f"utterance text must be a string in {where}", field="text")
    text = normalize_text(text)
    if not text:
        raise ValidationError(f"empty utterance in {where}")
    return Utterance(sp, text)


def _parse_turn(raw, fmt: CorpusFormat, where) -> RecommendationTurn | None:
    turn_id = str(_require(raw, "turn_id", where))
    where = f"turn {turn_id!r}"
    history_raw = _require(raw, "history", where)
    if not isinstance(history_raw, list):
        raise ParseError(f"history must be a list in {where}", field="history")
    history = tuple(
        _parse_utterance(u, f"{where} utterance {i}") for i, u in enumerate(history_raw)
    )
    candidates = _require(raw, "candidates", where)
    if not isinstance(candidates, list):
        raise ParseError(f"candidates must be a list in {where}", field="candidates")
    if not candidates:
        raise ValidationError(f"{where} has an empty candidate set")
    candidates = tuple(str(c) for c in candidates)

    if fmt is CorpusFormat.CHATREC_RATINGS:
        ratings = _require(raw, "ratings", where)
        if not isinstance(ratings, dict):
            raise ParseError(f"ratings must be an object in {where}", field="ratings")
        labels = {str(k): binarize_rating(v) for k, v in ratings.items()}
        if set(labels) == set(candidates) and max(labels.values(), default=0) == 0:
            logger.warning("skipping %s: every candidate rated 2 or less", where)
            return None
    else:
        labels_raw = _require(raw, "labels", where)
        if not isinstance(labels_raw, dict):
            raise ParseError(f"labels must be an object in {where}", field="labels")
        labels = {}
        for k, v in labels_raw.items():
            if isinstance(v, bool) or v not in (0, 1):
                raise ParseError(f"label for {k!r} must be 0 or 1 in {where}", field="labels")
            labels[str(k)] = int(v)
    return RecommendationTurn(turn_id, history, candidates, labels)


def corpus_from_dict(data, fmt: CorpusFormat | str = CorpusFormat.NATIVE) -> Corpus:
    fmt = CorpusFormat(fmt)
    if not isinstance(data, dict):
        raise ParseError("top-level JSON value must be an object")
    items_raw = _require(data, "items", "corpus")
    dialogues_raw = _require(data, "dialogues", "corpus")
    if not isinstance(items_raw, list) or not isinstance(dialogues_raw, list):
        raise ParseError("items and dialogues must be lists")

    items: dict[str, Item] = {}
    for i, raw in enumerate(items_raw):
        item_id = str(_require(raw, "id", f"item {i}"))
        desc = _require(raw, "description", f"item {item_id!r}")
        if not isinstance(desc, str):
            raise ParseError(f"description of {item_id!r} must be a string", field="description")
        if item_id in items:
            raise ValidationError(f"duplicate item id {item_id!r}")
        items[item_id] = Item(item_id, normalize_text(desc))

    dialogues = []
    for i, raw in enumerate(dialogues_raw):
        dialogue_id = str(_require(raw, "dialogue_id", f"dialogue {i}"))
        split_raw = raw.get("split")
        try:
            split = Split(split_raw) if split_raw is not None else None
        except ValueError:
            raise ParseError(
                f"unknown split {split_raw!r} in dialogue {dialogue_id!r}", field="split"
            ) from None
        turns_raw = _require(raw, "turns", f"dialogue {dialogue_id!r}")
        turns = []
        for t in turns_raw:
            turn = _parse_turn(t, fmt, f"dialogue {dialogue_id!r}")
            if turn is not None:
                turns.append(turn)
        dialogues.append(Dialogue(dialogue_id, tuple(turns), split))

    return Corpus(items, tuple(dialogues), meta=dict(data.get("meta", {})))


def load_corpus(path, format: CorpusFormat | str = CorpusFormat.NATIVE) -> Corpus:
    """Read and validate a corpus JSON file.

    ``format="chatrec"`` reads a ``ratings`` object (1-5 per candidate) in
    place of ``labels`` and binarizes it.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not valid UTF-8: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc.msg}", line=exc.lineno) from exc
    return corpus_from_dict(data, format)


def corpus_to_dict(corpus: Corpus) -> dict:
    out = {
        "items": [{"id": it.id, "description": it.description} for it in corpus.items.values()],
        "dialogues": [],
    }
    for d in corpus.dialogues:
        entry = {"dialogue_id": d.dialogue_id}
        if d.split is not None:
            entry["split"] = d.split.value
        entry["turns"] = [
            {
                "turn_id": t.turn_id,
                "history": [{"speaker": u.speaker.value, "text": u.text} for u in t.history],
                "candidates": list(t.candidate_item_ids),
                "labels": {k: t.labels[k] for k in t.candidate_item_ids},
            }
            for t in d.turns
        ]
        out["dialogues"].append(entry)
    if corpus.meta:
        out["meta"] = corpus.meta
    return out


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text(
        json.dumps(corpus_to_dict(corpus), ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_corpus(corpus: Corpus, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Corpus:
    """Assign whole dialogues to train/val/test.

    Val and test sizes are the rounded ratio shares; train takes the rest.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise DomainError(f"ratios must be three non-negative fractions, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DomainError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    n = len(corpus.dialogues)
    if n < 3:
        raise DomainError(f"need at least 3 dialogues to split, got {n}")

    n_val = _round_half_up(n * ratios[1])
    n_test = _round_half_up(n * ratios[2])
    n_train = n - n_val - n_test
    if n_train < 0:
        raise DomainError("rounded val/test shares exceed the number of dialogues")

    order = list(range(n))
    random.Random(seed).shuffle(order)
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assignment[idx] = Split.TRAIN
        elif rank < n_train + n_val:
            assignment[idx] = Split.VAL
        else:
            assignment[idx] = Split.TEST
    dialogues = tuple(replace(d, split=assignment[i]) for i, d in enumerate(corpus.dialogues))
    return Corpus(corpus.items, dialogues, meta=corpus.meta)
