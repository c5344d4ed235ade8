"""Preference-pair construction from score-predictor outputs, and JSONL export.

For every candidate item the generated text whose predicted score lands
closest to the gold label becomes ``chosen`` and the one landing furthest
becomes ``rejected``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._parallel import ordered_map
from .corpus import Corpus
from .errors import DomainError, IoError, PrefRecError
from .scorer import ScoreInput, score_matrix
from .textgen import GenerationConfig
from .textgen.backends import TextKind
from .textgen.pipeline import (
    DEFAULT_CANDIDATE_TEMPERATURE,
    final_summary_request,
    generate_candidates,
    generate_rec_info,
    rec_info_request,
    single_summary_request,
    summarize_dialogue,
)

DEFAULT_NUM_CANDIDATES = 4


class PairKind(str, enum.Enum):
    SUMMARY = "Summary"
    REC_INFO = "RecInfo"


@dataclass(frozen=True)
class PairMeta:
    turn_id: str
    item_id: str
    y: int
    dist_chosen: float
    dist_rejected: float
    kind: PairKind
    chosen_index: int = -1
    rejected_index: int = -1

    def to_dict(self) -> dict:
        return {
            "turn_id": self.turn_id,
            "item_id": self.item_id,
            "y": self.y,
            "dist_chosen": self.dist_chosen,
            "dist_rejected": self.dist_rejected,
            "kind": self.kind.value,
            "chosen_index": self.chosen_index,
            "rejected_index": self.rejected_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairMeta":
        return cls(
            turn_id=d["turn_id"],
            item_id=d["item_id"],
            y=int(d["y"]),
            dist_chosen=float(d["dist_chosen"]),
            dist_rejected=float(d["dist_rejected"]),
            kind=PairKind(d["kind"]),
            chosen_index=int(d.get("chosen_index", -1)),
            rejected_index=int(d.get("rejected_index", -1)),
        )


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    chosen: str
    rejected: str
    meta: PairMeta

    def __post_init__(self):
        if self.chosen == self.rejected:
            raise DomainError("chosen and rejected texts are identical")
        if self.meta.dist_chosen > self.meta.dist_rejected:
            raise DomainError("chosen text is further from the label than the rejected one")


def select_pair(candidate_scores, y: int):
    """Return ``(winner, loser)`` indices, or None when every distance ties.

    Winner minimises ``|y - score|`` and loser maximises it; ties go to the
    lowest index.
    """
    scores = [float(s) for s in candidate_scores]
    if len(scores) < 2:
        raise DomainError(f"need at least 2 candidates, got {len(scores)}")
    if not all(np.isfinite(scores)):
        raise DomainError("candidate scores must be finite")
    dist = [abs(y - s) for s in scores]
    winner = min(range(len(dist)), key=lambda i: (dist[i], i))
    loser = max(range(len(dist)), key=lambda i: (dist[i], -i))
    if winner == loser:
        return None
    return winner, loser


@dataclass(frozen=True)
class PrefConfig:
    num_candidates: int = DEFAULT_NUM_CANDIDATES
    seed: int = 0
    temperature: float = DEFAULT_CANDIDATE_TEMPERATURE
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    use_rec_info: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.num_candidates < 2:
            raise DomainError("num_candidates must be >= 2")


def _with_context(exc: PrefRecError, **ctx):
    exc.context = {**getattr(exc, "context", {}), **ctx}
    return exc


def _summary_pairs_for_turn(turn, corpus, scorer, backend, recinfo_backend, cfg):
    gen = cfg.generation
    try:
        summary = summarize_dialogue(turn.history, backend, gen)
        if gen.chunk_size is None:
            req = single_summary_request(turn.history, gen, temperature=cfg.temperature)
        else:
            req = final_summary_request(summary.combined, gen, temperature=cfg.temperature)
        candidates = generate_candidates(
            req, cfg.num_candidates, backend, cfg.seed, kind=TextKind.FINAL_SUMMARY
        )
    except PrefRecError as exc:
        raise _with_context(exc, turn_id=turn.turn_id)

    item_ids = list(turn.candidate_item_ids)
    descriptions = corpus.descriptions(item_ids)
    rec_infos = None
    if cfg.use_rec_info:
        rec_infos = []
        for item_id, desc in zip(item_ids, descriptions):
            try:
                rec_infos.append(generate_rec_info(desc, recinfo_backend, gen).text)
            except PrefRecError as exc:
                raise _with_context(exc, turn_id=turn.turn_id, item_id=item_id)
    texts = [c.text for c in candidates]
    try:
        matrix = score_matrix(texts, rec_infos, descriptions, scorer)
    except PrefRecError as exc:
        raise _with_context(exc, turn_id=turn.turn_id)

    pairs = []
    for m, item_id in enumerate(item_ids):
        y = turn.labels[item_id]
        sel = select_pair(matrix[:, m], y)
        if sel is None:
            continue
        w, l = sel
        if texts[w] == texts[l]:
            continue
        pairs.append(
            PreferencePair(
                prompt=req.prompt,
                chosen=texts[w],
                rejected=texts[l],
                meta=PairMeta(
                    turn_id=turn.turn_id,
                    item_id=item_id,
                    y=y,
                    dist_chosen=abs(y - float(matrix[w, m])),
                    dist_rejected=abs(y - float(matrix[l, m])),
                    kind=PairKind.SUMMARY,
                    chosen_index=w,
                    rejected_index=l,
                ),
            )
        )
    return pairs


def build_summary_prefs(corpus: Corpus, scorer, backend, cfg: PrefConfig = PrefConfig(),
                        recinfo_backend=None) -> list[PreferencePair]:
    """Summary preference pairs for every turn of ``corpus``, in canonical order.

    Each turn gets K sampled final summaries from its combined partial
    summaries; each candidate item then yields at most one pair whose prompt
    is the rendered final-summary prompt.
    """
    recinfo_backend = recinfo_backend or backend
    per_turn = ordered_map(
        lambda t: _summary_pairs_for_turn(t, corpus, scorer, backend, recinfo_backend, cfg),
        corpus.turns(),
        cfg.jobs,
    )
    return [p for pairs in per_turn for p in pairs]


def _recinfo_pairs_for_turn(turn, corpus, scorer, summary_backend, backend, cfg):
    gen = cfg.generation
    try:
        summary = summarize_dialogue(turn.history, summary_backend, gen).final.text
    except PrefRecError as exc:
        raise _with_context(exc, turn_id=turn.turn_id)
    pairs = []
    for item_id in turn.candidate_item_ids:
        y = turn.labels[item_id]
        if y != 1:
            continue
        desc = corpus.items[item_id].description
        try:
            req = rec_info_request(desc, gen, temperature=cfg.temperature)
            candidates = generate_candidates(
                req, cfg.num_candidates, backend, cfg.seed, kind=TextKind.REC_INFO
            )
            texts = [c.text for c in candidates]
            scores = [scorer.predict(ScoreInput(summary, desc, r)) for r in texts]
        except PrefRecError as exc:
            raise _with_context(exc, turn_id=turn.turn_id, item_id=item_id)
        sel = select_pair(scores, y)
        if sel is None:
            continue
        w, l = sel
        if texts[w] == texts[l]:
            continue
        pairs.append(
            PreferencePair(
                prompt=req.prompt,
                chosen=texts[w],
                rejected=texts[l],
                meta=PairMeta(
                    turn_id=turn.turn_id,
                    item_id=item_id,
                    y=y,
                    dist_chosen=abs(y - scores[w]),
                    dist_rejected=abs(y - scores[l]),
                    kind=PairKind.REC_INFO,
                    chosen_index=w,
                    rejected_index=l,
                ),
            )
        )
    return pairs


def build_recinfo_prefs(corpus: Corpus, scorer, backend, cfg: PrefConfig = PrefConfig(),
                        summary_backend=None) -> list[PreferencePair]:
    """Rec-info preference pairs, built only for gold (label 1) items.

    One greedy summary per turn is shared by all of that turn's items.
    """
    summary_backend = summary_backend or backend
    per_turn = ordered_map(
        lambda t: _recinfo_pairs_for_turn(t, corpus, scorer, summary_backend, backend, cfg),
        corpus.turns(),
        cfg.jobs,
    )
    return [p for pairs in per_turn for p in pairs]


def pair_to_dict(pair: PreferencePair, include_meta: bool = True) -> dict:
    d = {"prompt": pair.prompt, "chosen": pair.chosen, "rejected": pair.rejected}
    if include_meta:
        d["meta"] = pair.meta.to_dict()
    return d


def export_jsonl(pairs, path, include_meta: bool = True) -> int:
    lines = [
        json.dumps(pair_to_dict(p, include_meta), ensure_ascii=False) + "\n" for p in pairs
    ]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(lines)


def load_jsonl(path) -> list[PreferencePair]:
    pairs = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        pairs.append(
            PreferencePair(d["prompt"], d["chosen"], d["rejected"], PairMeta.from_dict(d["meta"]))
        )
    return pairs
