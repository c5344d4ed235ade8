"""Surface statistics for generated texts: length, Distinct-n, BLEU, ROUGE-L."""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import asdict, dataclass

from .errors import DomainError

MAX_BLEU_ORDER = 4


@dataclass(frozen=True)
class TokenizerConfig:
    """``char`` splits into non-space characters, ``whitespace`` into words,
    ``auto`` picks ``char`` when most non-space characters are CJK."""

    mode: str = "auto"
    lowercase: bool = False

    def __post_init__(self):
        if self.mode not in ("auto", "char", "whitespace"):
            raise DomainError(f"unknown tokenizer mode {self.mode!r}")


def _is_cjk(ch: str) -> bool:
    name = unicodedata.name(ch, "")
    return name.startswith(("CJK", "HIRAGANA", "KATAKANA", "HANGUL")) or "IDEOGRAPH" in name


def resolve_mode(texts, cfg: TokenizerConfig) -> str:
    if cfg.mode != "auto":
        return cfg.mode
    chars = [c for t in texts for c in t if not c.isspace()]
    if chars and sum(map(_is_cjk, chars)) * 2 > len(chars):
        return "char"
    return "whitespace"


def tokenize(text: str, mode: str, lowercase: bool = False) -> list[str]:
    if lowercase:
        text = text.lower()
    if mode == "char":
        return [c for c in text if not c.isspace()]
    return text.split()


def ngrams(tokens, n: int) -> list[tuple]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def avg_length(texts) -> float:
    texts = list(texts)
    if not texts:
        raise DomainError("avg_length needs at least one text")
    return sum(len(t) for t in texts) / len(texts)


def distinct_n(texts, n: int, cfg: TokenizerConfig = TokenizerConfig()) -> float:
    """Unique n-grams over total n-grams, pooled across all texts."""
    if n < 1:
        raise DomainError("n must be >= 1")
    texts = list(texts)
    mode = resolve_mode(texts, cfg)
    grams = [g for t in texts for g in ngrams(tokenize(t, mode, cfg.lowercase), n)]
    if not grams:
        raise DomainError(f"no {n}-grams could be extracted")
    return len(set(grams)) / len(grams)


def bleu(candidates, references, cfg: TokenizerConfig = TokenizerConfig()) -> float:
    """Corpus BLEU in [0, 1] with one reference per candidate.

    Uniform weights over orders 1-4 and the standard brevity penalty. An order
    >= 2 with zero clipped matches uses (0 + 1) / (total + 1) instead of 0.
    Zero unigram matches give 0.
    """
    candidates = list(candidates)
    references = list(references)
    if len(candidates) != len(references):
        raise DomainError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise DomainError("bleu needs at least one candidate")
    mode = resolve_mode(candidates + references, cfg)

    matches = [0] * (MAX_BLEU_ORDER + 1)
    totals = [0] * (MAX_BLEU_ORDER + 1)
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        c_tok = tokenize(cand, mode, cfg.lowercase)
        r_tok = tokenize(ref, mode, cfg.lowercase)
        cand_len += len(c_tok)
        ref_len += len(r_tok)
        for n in range(1, MAX_BLEU_ORDER + 1):
            c_counts = Counter(ngrams(c_tok, n))
            r_counts = Counter(ngrams(r_tok, n))
            matches[n] += sum(min(c, r_counts[g]) for g, c in c_counts.items())
            totals[n] += sum(c_counts.values())

    if cand_len == 0 or matches[1] == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, MAX_BLEU_ORDER + 1):
        if matches[n] == 0:
            p = 1.0 / (totals[n] + 1)
        else:
            p = matches[n] / totals[n]
        log_p += math.log(p) / MAX_BLEU_ORDER
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class RougeL:
    precision: float
    recall: float
    f1: float


def rouge_l(candidate: str, reference: str, cfg: TokenizerConfig = TokenizerConfig()) -> RougeL:
    mode = resolve_mode([candidate, reference], cfg)
    c = tokenize(candidate, mode, cfg.lowercase)
    r = tokenize(reference, mode, cfg.lowercase)
    if not c or not r:
        raise DomainError("ROUGE-L needs non-empty candidate and reference token lists")
    lcs = lcs_length(c, r)
    p = lcs / len(c)
    rec = lcs / len(r)
    f1 = 0.0 if p + rec == 0 else 2 * p * rec / (p + rec)
    return RougeL(p, rec, f1)


@dataclass(frozen=True)
class MetricReport:
    avg_len: float
    distinct_1: float
    distinct_2: float
    bleu: float | None
    rouge_l: float | None
    tokenizer: str
    n_texts: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def compute_report(texts, references=None, cfg: TokenizerConfig = TokenizerConfig()) -> MetricReport:
    """Length and diversity of ``texts``; BLEU and mean ROUGE-L F1 when
    aligned ``references`` are given."""
    texts = list(texts)
    mode = resolve_mode(texts + list(references or []), cfg)
    fixed = TokenizerConfig(mode, cfg.lowercase)
    b = r = None
    if references is not None:
        references = list(references)
        b = bleu(texts, references, fixed)
        r = sum(rouge_l(t, ref, fixed).f1 for t, ref in zip(texts, references)) / len(texts)
    return MetricReport(
        avg_len=avg_length(texts),
        distinct_1=distinct_n(texts, 1, fixed),
        distinct_2=distinct_n(texts, 2, fixed),
        bleu=b,
        rouge_l=r,
        tokenizer=f"{mode}{'+lower' if cfg.lowercase else ''}",
        n_texts=len(texts),
    )


def render_metric_table(rows, bleu_scale: float = 100.0) -> str:
    """``rows`` is a list of (name, MetricReport); BLEU shown on a 0-100 scale."""
    head = ["Method", "Avg. Len.", "Distinct-1/2", "BLEU", "ROUGE-L"]
    body = []
    for name, rep in rows:
        body.append([
            name,
            f"{rep.avg_len:.1f}",
            f"{rep.distinct_1:.3f} / {rep.distinct_2:.3f}",
            "--" if rep.bleu is None else f"{rep.bleu * bleu_scale:.3f}",
            "--" if rep.rouge_l is None else f"{rep.rouge_l:.3f}",
        ])
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [head] + body]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
