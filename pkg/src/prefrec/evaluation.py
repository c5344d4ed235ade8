"""Candidate ranking, HR@k / MRR@k, and the pipeline variants used in ablations."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field

from ._parallel import ordered_map
from .corpus import Corpus, RecommendationTurn
from .errors import DomainError, PrefRecError
from .scorer import ScoreInput
from .textgen import GenerationConfig, generate_rec_info, summarize_dialogue

logger = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    SUMREC = "sumrec"
    OURS = "ours"
    WITHOUT_REC_DPO = "wo_rec_dpo"
    WITHOUT_SUM_DPO = "wo_sum_dpo"

    @property
    def uses_rec_info(self) -> bool:
        return self is not Variant.BASELINE

    @property
    def tuned_summary(self) -> bool:
        return self in (Variant.OURS, Variant.WITHOUT_REC_DPO)

    @property
    def tuned_rec_info(self) -> bool:
        return self in (Variant.OURS, Variant.WITHOUT_SUM_DPO)

    @property
    def label(self) -> str:
        return {
            Variant.BASELINE: "Baseline",
            Variant.SUMREC: "SumRec",
            Variant.OURS: "Ours",
            Variant.WITHOUT_REC_DPO: "w/o Rec-DPO",
            Variant.WITHOUT_SUM_DPO: "w/o Sum-DPO",
        }[self]


@dataclass
class PipelineConfig:
    """Which generators and scorer a variant uses.

    ``tuned_*_backend`` stand for the DPO-refined generators. When a variant
    asks for one that is not configured, the base backend is used and a
    warning is logged.
    """

    variant: Variant
    scorer: object
    summary_backend: object
    recinfo_backend: object | None = None
    tuned_summary_backend: object | None = None
    tuned_recinfo_backend: object | None = None
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    jobs: int = 1

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.variant.tuned_summary and self.tuned_summary_backend is None:
            logger.warning("%s: no tuned summary backend configured, using the base one",
                           self.variant.value)
        if self.variant.tuned_rec_info and self.tuned_recinfo_backend is None:
            logger.warning("%s: no tuned rec-info backend configured, using the base one",
                           self.variant.value)

    def summary_generator(self):
        if self.variant.tuned_summary and self.tuned_summary_backend is not None:
            return self.tuned_summary_backend
        return self.summary_backend

    def recinfo_generator(self):
        if not self.variant.uses_rec_info:
            return None
        base = self.recinfo_backend or self.summary_backend
        if self.variant.tuned_rec_info and self.tuned_recinfo_backend is not None:
            return self.tuned_recinfo_backend
        return base

    def describe(self) -> dict:
        rb = self.recinfo_generator()
        return {
            "variant": self.variant.value,
            "summary_backend": self.summary_generator().backend_id,
            "recinfo_backend": rb.backend_id if rb is not None else None,
            "scorer": getattr(self.scorer, "scorer_id", type(self.scorer).__name__),
        }


@dataclass(frozen=True)
class RankedTurn:
    turn_id: str
    ranking: list[tuple[str, float]]
    gold_ranks: list[int]

    def __post_init__(self):
        if not self.gold_ranks:
            raise DomainError(f"turn {self.turn_id!r} has no gold item")

    @property
    def first_gold_rank(self) -> int:
        return self.gold_ranks[0]

    def to_dict(self) -> dict:
        return {
            "turn_id": self.turn_id,
            "ranking": [[i, s] for i, s in self.ranking],
            "gold_ranks": list(self.gold_ranks),
        }


def rank_scores(turn_id: str, scores: dict, labels: dict) -> RankedTurn:
    """Sort by descending score, ties by ascending item id."""
    ranking = sorted(((i, float(s)) for i, s in scores.items()), key=lambda x: (-x[1], x[0]))
    gold = sorted(r for r, (i, _) in enumerate(ranking, start=1) if labels.get(i) == 1)
    return RankedTurn(turn_id, ranking, gold)


def rank_turn(turn: RecommendationTurn, corpus: Corpus, pipeline: PipelineConfig,
              rec_infos: dict | None = None) -> RankedTurn:
    """Summarize once, attach rec-info per candidate (unless Baseline) and score.

    ``rec_infos`` may supply precomputed texts keyed by item id.
    """
    gen = pipeline.generation
    try:
        summary = summarize_dialogue(turn.history, pipeline.summary_generator(), gen).final.text
    except PrefRecError as exc:
        exc.context = {**getattr(exc, "context", {}), "turn_id": turn.turn_id}
        raise
    rb = pipeline.recinfo_generator()
    scores = {}
    for item_id in turn.candidate_item_ids:
        desc = corpus.items[item_id].description
        r = None
        try:
            if rb is not None:
                if rec_infos is not None and item_id in rec_infos:
                    r = rec_infos[item_id]
                else:
                    r = generate_rec_info(desc, rb, gen).text
            scores[item_id] = pipeline.scorer.predict(ScoreInput(summary, desc, r))
        except PrefRecError as exc:
            exc.context = {**getattr(exc, "context", {}), "turn_id": turn.turn_id,
                           "item_id": item_id}
            raise
    return rank_scores(turn.turn_id, scores, turn.labels)


def _check(turns, k):
    turns = list(turns)
    if not turns:
        raise DomainError("no ranked turns given")
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    return turns


def hit_rate_at_k(turns, k: int) -> float:
    turns = _check(turns, k)
    return sum(1 for t in turns if t.first_gold_rank <= k) / len(turns)


def mrr_at_k(turns, k: int) -> float:
    """Mean reciprocal rank of the first gold item, counting 0 beyond rank k."""
    turns = _check(turns, k)
    return sum(1.0 / t.first_gold_rank for t in turns if t.first_gold_rank <= k) / len(turns)


@dataclass
class EvalReport:
    variant: str
    ks: list[int]
    hr: dict[int, float]
    mrr: dict[int, float]
    turns: list[RankedTurn]
    pipeline: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "ks": list(self.ks),
            "hr": {str(k): v for k, v in self.hr.items()},
            "mrr": {str(k): v for k, v in self.mrr.items()},
            "pipeline": self.pipeline,
            "turns": [t.to_dict() for t in self.turns],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n"

    def table(self) -> str:
        return render_table([self])


def render_table(reports) -> str:
    """Plain-text HR/MRR table, one block of two rows per report."""
    reports = list(reports)
    ks = reports[0].ks
    head = ["Method", "Metrics"] + [f"@{k}" for k in ks]
    rows = []
    for rep in reports:
        try:
            name = Variant(rep.variant).label
        except ValueError:
            name = rep.variant
        rows.append([name, "HR"] + [f"{rep.hr[k]:.4f}" for k in ks])
        rows.append(["", "MRR"] + [f"{rep.mrr[k]:.4f}" for k in ks])
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    rule = "-" * len(fmt(head))
    return "\n".join([fmt(head), rule] + [fmt(r) for r in rows]) + "\n"


def evaluate(corpus: Corpus, pipeline: PipelineConfig, ks=(1, 3, 5)) -> EvalReport:
    """Rank every turn of ``corpus`` (normally the test slice) and aggregate."""
    ks = sorted(set(int(k) for k in ks))
    turns = list(corpus.turns())
    if not turns:
        raise DomainError("evaluation corpus has no turns")
    rec_infos = None
    rb = pipeline.recinfo_generator()
    if rb is not None:
        needed = sorted({i for t in turns for i in t.candidate_item_ids})
        texts = ordered_map(
            lambda i: generate_rec_info(corpus.items[i].description, rb, pipeline.generation).text,
            needed,
            pipeline.jobs,
        )
        rec_infos = dict(zip(needed, texts))
    ranked = ordered_map(lambda t: rank_turn(t, corpus, pipeline, rec_infos), turns, pipeline.jobs)
    return EvalReport(
        variant=pipeline.variant.value,
        ks=ks,
        hr={k: hit_rate_at_k(ranked, k) for k in ks},
        mrr={k: mrr_at_k(ranked, k) for k in ks},
        turns=ranked,
        pipeline=pipeline.describe(),
    )
