"""Synthetic keyword-matching corpus for end-to-end checks without real data.

Each dialogue has the customer state one preference keyword. Every turn offers
one candidate per keyword, so exactly one description matches the customer.
"""

from __future__ import annotations

import random

from .corpus import Corpus, Dialogue, Item, RecommendationTurn, Speaker, Utterance, split_corpus

KEYWORDS = (
    "onsen",
    "skiing",
    "museums",
    "seafood",
    "hiking",
    "aquariums",
    "castles",
    "shopping",
    "gardens",
    "festivals",
)

_PREFERENCE_LINES = (
    "I really like {kw}.",
    "This time we want to enjoy {kw}.",
    "Honestly I prefer {kw} to anything else.",
    "My partner and I like {kw} a lot.",
)
_CUSTOMER_FILLER = (
    "Sounds good.",
    "We are a couple in our fifties.",
    "Our budget is moderate.",
    "We plan to stay two nights.",
    "That is helpful, thank you.",
    "We will travel by train.",
    "Hmm, let me think about it.",
    "Yes, please go ahead.",
    "We are free in early autumn.",
    "Is it crowded on weekends?",
)
_OPERATOR_FILLER = (
    "How can I help you today?",
    "Let me check the system for you.",
    "Please wait a moment.",
    "Which season are you planning for?",
    "How many people will be travelling?",
    "I see, thank you for telling me.",
    "Do you have a region in mind?",
    "I will look up a few places.",
)
_DESC_OPENERS = (
    "A popular spot famous for {kw}.",
    "Visitors come here mainly for {kw}.",
    "This area is well known for its {kw}.",
    "A relaxed destination centred on {kw}.",
    "Travel guides list it among the best places for {kw}.",
)
_DESC_FILLER = (
    "Parking is available nearby.",
    "The nearest station is a short walk away.",
    "Open all year round.",
    "Guided tours run every afternoon.",
    "There is a small cafe at the entrance.",
    "Allow about two hours for a visit.",
    "Free entry for small children.",
)


def _items(rng: random.Random, per_keyword: int) -> dict[str, Item]:
    items = {}
    for k, kw in enumerate(KEYWORDS):
        for j in range(per_keyword):
            item_id = f"spot-{k:02d}-{j}"
            extra = rng.sample(_DESC_FILLER, 2)
            desc = " ".join([rng.choice(_DESC_OPENERS).format(kw=kw), *extra])
            items[item_id] = Item(item_id, desc)
    return items


def _history(rng: random.Random, length: int, keyword: str) -> list[Utterance]:
    hist = []
    customer_slots = [i for i in range(length) if i % 2 == 1]
    pref_at = rng.choice(customer_slots[: max(1, len(customer_slots) // 2)])
    for i in range(length):
        if i % 2 == 0:
            hist.append(Utterance(Speaker.OPERATOR, rng.choice(_OPERATOR_FILLER)))
        elif i == pref_at:
            hist.append(Utterance(Speaker.CUSTOMER, rng.choice(_PREFERENCE_LINES).format(kw=keyword)))
        else:
            hist.append(Utterance(Speaker.CUSTOMER, rng.choice(_CUSTOMER_FILLER)))
    return hist


def generate_synthetic_corpus(
    n_dialogues: int = 100,
    turns_per_dialogue: int = 2,
    items_per_keyword: int = 5,
    min_len: int = 6,
    max_len: int = 70,
    seed: int = 0,
    split_ratios=(0.7, 0.1, 0.2),
) -> Corpus:
    """Build (and split by dialogue) a corpus with ``n_dialogues * turns_per_dialogue`` turns."""
    rng = random.Random(seed)
    items = _items(rng, items_per_keyword)
    dialogues = []
    for d in range(n_dialogues):
        kw_index = rng.randrange(len(KEYWORDS))
        length = rng.randint(max(min_len, 2 * turns_per_dialogue + 2), max_len)
        full = _history(rng, length, KEYWORDS[kw_index])
        pref_pos = next(i for i, u in enumerate(full) if KEYWORDS[kw_index] in u.text)
        cut_points = sorted(rng.sample(range(pref_pos + 1, length + 1), turns_per_dialogue))
        turns = []
        for t, cut in enumerate(cut_points):
            candidates = [f"spot-{k:02d}-{rng.randrange(items_per_keyword)}" for k in range(len(KEYWORDS))]
            rng.shuffle(candidates)
            labels = {c: int(c.startswith(f"spot-{kw_index:02d}-")) for c in candidates}
            turns.append(
                RecommendationTurn(f"d{d:03d}-t{t}", tuple(full[:cut]), tuple(candidates), labels)
            )
        dialogues.append(Dialogue(f"d{d:03d}", tuple(turns)))
    corpus = Corpus(items, tuple(dialogues), meta={"generator": "synthetic-keywords", "seed": seed})
    if split_ratios is None:
        return corpus
    return split_corpus(corpus, split_ratios, seed=seed)
