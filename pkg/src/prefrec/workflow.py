"""Corpus-level glue: summarize turns, generate rec-info, build scorer training sets."""

from __future__ import annotations

from ._parallel import ordered_map
from .corpus import Corpus, Split
from .scorer import FeatureConfig, ScoredExample, ScoreInput, TrainConfig, train_scorer
from .textgen import GenerationConfig, generate_rec_info, summarize_dialogue


def summarize_turns(corpus: Corpus, backend, gen: GenerationConfig, split=None, jobs=1) -> dict:
    turns = list(corpus.turns(split))
    out = ordered_map(lambda t: summarize_dialogue(t.history, backend, gen), turns, jobs)
    return {t.turn_id: s for t, s in zip(turns, out)}


def rec_infos_for_items(corpus: Corpus, item_ids, backend, gen: GenerationConfig, jobs=1) -> dict:
    item_ids = sorted(set(item_ids))
    out = ordered_map(
        lambda i: generate_rec_info(corpus.items[i].description, backend, gen), item_ids, jobs
    )
    return dict(zip(item_ids, out))


def scored_examples(corpus: Corpus, summaries: dict, rec_infos: dict | None, split=None):
    """One example per (turn, candidate) with the gold label as target."""
    examples = []
    for turn in corpus.turns(split):
        s = summaries[turn.turn_id]
        s = s.final.text if hasattr(s, "final") else str(s)
        for item_id in turn.candidate_item_ids:
            r = None
            if rec_infos is not None:
                r = rec_infos[item_id]
                r = r.text if hasattr(r, "text") else str(r)
            examples.append(
                ScoredExample(ScoreInput(s, corpus.items[item_id].description, r), turn.labels[item_id])
            )
    return examples


def train_scorer_on_corpus(
    corpus: Corpus,
    backend,
    gen: GenerationConfig = GenerationConfig(),
    use_rec_info: bool = True,
    hyper: TrainConfig = TrainConfig(),
    feature_cfg: FeatureConfig = FeatureConfig(),
    recinfo_backend=None,
    jobs: int = 1,
):
    """Generate texts for the train/val splits with ``backend`` and fit a scorer."""
    summaries = {}
    for split in (Split.TRAIN, Split.VAL):
        summaries.update(summarize_turns(corpus, backend, gen, split, jobs))
    rec_infos = None
    if use_rec_info:
        ids = [i for sp in (Split.TRAIN, Split.VAL) for t in corpus.turns(sp) for i in t.candidate_item_ids]
        rec_infos = rec_infos_for_items(corpus, ids, recinfo_backend or backend, gen, jobs)
    train = scored_examples(corpus, summaries, rec_infos, Split.TRAIN)
    val = scored_examples(corpus, summaries, rec_infos, Split.VAL)
    return train_scorer(train, val, hyper, feature_cfg)
