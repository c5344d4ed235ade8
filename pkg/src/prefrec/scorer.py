"""Score predictor: (summary, rec-info, description) -> recommendation score in [0, 1].

The native model hashes field-tagged character n-grams (plus optional word
unigrams and cross-field overlap features) into a fixed-size space and applies
a linear layer followed by a sigmoid. It is trained by mini-batch gradient
descent on mean squared error against 0/1 targets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import httpx
import numpy as np
import scipy.sparse as sp

from .errors import DomainError, FormatError, NumericalError, ProtocolError
from .textgen.backends import post_with_retries

logger = logging.getLogger(__name__)

MODEL_FORMAT = "prefrec-scorer"
MODEL_VERSION = 1
_EPS = 1e-15
_WORD_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class ScoreInput:
    summary: str
    description: str
    rec_info: str | None = None

    def __post_init__(self):
        if not self.summary or not self.summary.strip():
            raise DomainError("summary must be non-empty")
        if not self.description or not self.description.strip():
            raise DomainError("description must be non-empty")


@dataclass(frozen=True)
class ScoredExample:
    input: ScoreInput
    target: int

    def __post_init__(self):
        if self.target not in (0, 1):
            raise DomainError(f"target must be 0 or 1, got {self.target!r}")


@dataclass(frozen=True)
class FeatureConfig:
    hash_dim_log2: int = 18
    char_ngram_range: tuple[int, int] = (2, 3)
    word_ngrams: bool = True
    # Shared units between the summary and the item fields. A linear model
    # over per-field features alone cannot express "summary matches item".
    cross_features: bool = True
    # L2-normalize each feature block so long texts do not dominate.
    normalize: bool = True

    def __post_init__(self):
        lo, hi = self.char_ngram_range
        if not 1 <= lo <= hi:
            raise DomainError(f"bad char_ngram_range {self.char_ngram_range!r}")
        if not 1 <= self.hash_dim_log2 <= 30:
            raise DomainError("hash_dim_log2 must be in 1..30")

    @property
    def dim(self) -> int:
        return 1 << self.hash_dim_log2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["char_ngram_range"] = list(self.char_ngram_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        d = dict(d)
        d["char_ngram_range"] = tuple(d["char_ngram_range"])
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@lru_cache(maxsize=1 << 16)
def _units(text: str, lo: int, hi: int, words: bool) -> Counter:
    low = text.lower()
    units = Counter()
    for n in range(lo, hi + 1):
        for i in range(len(low) - n + 1):
            units["c" + low[i : i + n]] += 1
    if words:
        for w in _WORD_RE.findall(low):
            units["w" + w] += 1
    return units


@lru_cache(maxsize=1 << 20)
def _bucket(key: str, dim_log2: int) -> int:
    h = int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")
    return h & ((1 << dim_log2) - 1)


def _add_block(out: dict, tag: str, counts: dict, cfg: FeatureConfig):
    if not counts:
        return
    scale = 1.0
    if cfg.normalize:
        scale = 1.0 / math.sqrt(sum(c * c for c in counts.values()))
    for unit, c in counts.items():
        idx = _bucket(f"{tag}:{unit}", cfg.hash_dim_log2)
        out[idx] = out.get(idx, 0.0) + c * scale


def featurize(inp: ScoreInput, cfg: FeatureConfig = FeatureConfig()) -> dict[int, float]:
    """Hash the tagged feature units of ``inp`` into ``{bucket: value}``."""
    lo, hi = cfg.char_ngram_range
    fields = [("S", inp.summary), ("D", inp.description)]
    if inp.rec_info is not None:
        fields.append(("R", inp.rec_info))
    units = {tag: _units(text, lo, hi, cfg.word_ngrams) for tag, text in fields}

    out: dict[int, float] = {}
    for tag, _ in fields:
        _add_block(out, tag, units[tag], cfg)
    if cfg.cross_features:
        s_units = units["S"]
        for tag in ("D", "R"):
            if tag in units:
                shared = {u: 1 for u in s_units if u in units[tag]}
                _add_block(out, "S" + tag, shared, cfg)
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ScorerModel:
    weights: np.ndarray
    bias: float = 0.0
    feature_cfg: FeatureConfig = field(default_factory=FeatureConfig)
    scorer_id: str = "native"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.feature_cfg.dim,):
            raise DomainError(
                f"weights length {self.weights.shape} != 2^{self.feature_cfg.hash_dim_log2}"
            )
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise NumericalError("model parameters must be finite")

    @classmethod
    def zeros(cls, feature_cfg: FeatureConfig = FeatureConfig()) -> "ScorerModel":
        return cls(np.zeros(feature_cfg.dim), 0.0, feature_cfg)

    def logit(self, inp: ScoreInput) -> float:
        feats = featurize(inp, self.feature_cfg)
        z = self.bias
        for idx in sorted(feats):
            z += self.weights[idx] * feats[idx]
        return float(z)

    def predict(self, inp: ScoreInput) -> float:
        return predict_score(self, inp)


def predict_score(model: ScorerModel, inp: ScoreInput) -> float:
    z = model.logit(inp)
    if not math.isfinite(z):
        raise NumericalError(f"non-finite logit {z!r}")
    p = float(_sigmoid(z))
    return min(max(p, _EPS), 1.0 - _EPS)


def score_matrix(summaries, rec_infos, descriptions, model) -> np.ndarray:
    """K x M scores for every (summary k, item m) pairing.

    ``rec_infos=None`` scores without recommendation information.
    """
    summaries = list(summaries)
    descriptions = list(descriptions)
    if rec_infos is None:
        rec_infos = [None] * len(descriptions)
    rec_infos = list(rec_infos)
    if not descriptions:
        raise DomainError("score_matrix needs at least one item")
    if not summaries:
        raise DomainError("score_matrix needs at least one summary")
    if len(rec_infos) != len(descriptions):
        raise DomainError(
            f"rec_infos ({len(rec_infos)}) and descriptions ({len(descriptions)}) differ in length"
        )
    out = np.empty((len(summaries), len(descriptions)))
    for k, s in enumerate(summaries):
        for m, (r, d) in enumerate(zip(rec_infos, descriptions)):
            out[k, m] = model.predict(ScoreInput(s, d, r))
    return out


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 8.0
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    l2: float = 1e-5

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError("lr must be > 0")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.l2 < 0:
            raise DomainError("l2 must be >= 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_mse: float | None


def design_matrix(inputs, cfg: FeatureConfig) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for r, inp in enumerate(inputs):
        feats = featurize(inp, cfg)
        for idx in sorted(feats):
            rows.append(r)
            cols.append(idx)
            vals.append(feats[idx])
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(inputs), cfg.dim), dtype=np.float64)


def mse_loss_and_grad(w, b, X, y, l2):
    """Objective ``mean((sigmoid(Xw+b) - y)^2) + l2 * ||w||^2`` and its gradient."""
    n = X.shape[0]
    p = _sigmoid(X @ w + b)
    r = p - y
    loss = float(np.mean(r * r) + l2 * np.dot(w, w))
    g = 2.0 * r * p * (1.0 - p) / n
    grad_w = X.T @ g + 2.0 * l2 * w
    return loss, np.asarray(grad_w).ravel(), float(g.sum())


def _mse(w, b, X, y) -> float:
    p = _sigmoid(X @ w + b)
    return float(np.mean((p - y) ** 2))


def train_scorer(
    train,
    val=(),
    hyper: TrainConfig = TrainConfig(),
    feature_cfg: FeatureConfig = FeatureConfig(),
):
    """Fit a native scorer; returns ``(model, history)``.

    ``history[0]`` is the untrained model, one entry per epoch follows. The
    returned model is the epoch with the lowest validation MSE (training loss
    when no validation set is given).
    """
    train = list(train)
    val = list(val)
    if not train:
        raise DomainError("training set is empty")
    X = design_matrix([e.input for e in train], feature_cfg)
    y = np.array([e.target for e in train], dtype=np.float64)
    Xv = design_matrix([e.input for e in val], feature_cfg) if val else None
    yv = np.array([e.target for e in val], dtype=np.float64) if val else None

    rng = np.random.default_rng(hyper.seed)
    w = np.zeros(feature_cfg.dim)
    b = 0.0

    def snapshot(epoch):
        loss = _mse(w, b, X, y) + hyper.l2 * float(np.dot(w, w))
        vm = _mse(w, b, Xv, yv) if val else None
        if not math.isfinite(loss) or (vm is not None and not math.isfinite(vm)):
            raise NumericalError(f"training diverged at epoch {epoch}")
        return EpochStats(epoch, loss, vm)

    history = [snapshot(0)]
    best = (history[0].val_mse if val else history[0].train_loss, w.copy(), b)
    n = X.shape[0]
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            _, gw, gb = mse_loss_and_grad(w, b, X[idx], y[idx], hyper.l2)
            w -= hyper.lr * gw
            b -= hyper.lr * gb
        if not (np.all(np.isfinite(w)) and math.isfinite(b)):
            raise NumericalError(f"training diverged at epoch {epoch}")
        stats = snapshot(epoch)
        history.append(stats)
        crit = stats.val_mse if val else stats.train_loss
        if crit < best[0]:
            best = (crit, w.copy(), b)
    model = ScorerModel(best[1], float(best[2]), feature_cfg)
    return model, history


def save_model(model: ScorerModel, path) -> None:
    nz = np.flatnonzero(model.weights)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "feature_cfg": model.feature_cfg.to_dict(),
        "dim": int(model.feature_cfg.dim),
        "bias": model.bias,
        "weights": {"indices": nz.tolist(), "values": model.weights[nz].tolist()},
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")), encoding="utf-8")


def load_model(path, expected_cfg: FeatureConfig | None = None) -> ScorerModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot parse scorer model {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported scorer model version {doc.get('version')!r}")
    try:
        cfg = FeatureConfig.from_dict(doc["feature_cfg"])
        dim = int(doc["dim"])
        idx = np.asarray(doc["weights"]["indices"], dtype=np.int64)
        vals = np.asarray(doc["weights"]["values"], dtype=np.float64)
        bias = float(doc["bias"])
    except (KeyError, TypeError, ValueError, DomainError) as exc:
        raise FormatError(f"malformed scorer model {path}: {exc}") from exc
    if dim != cfg.dim:
        raise FormatError(f"weight dimension {dim} does not match hash_dim_log2={cfg.hash_dim_log2}")
    if expected_cfg is not None and expected_cfg != cfg:
        raise FormatError(
            f"feature config mismatch: model {cfg.to_dict()} vs expected {expected_cfg.to_dict()}"
        )
    if idx.shape != vals.shape or (idx.size and (idx.min() < 0 or idx.max() >= dim)):
        raise FormatError("weight indices out of range")
    w = np.zeros(dim)
    w[idx] = vals
    return ScorerModel(w, bias, cfg)


class RemoteScorer:
    """Client for an external score service (e.g. a fine-tuned encoder).

    The service receives the three fields separately and is responsible for
    joining them with its own separator token.
    """

    RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(self, endpoint: str, client: httpx.Client | None = None, max_attempts=3,
                 backoff=1.0, timeout=30.0, sleep=None):
        self.endpoint = endpoint
        self.scorer_id = f"remote:{endpoint}"
        self._client = client or httpx.Client(timeout=timeout)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep or time.sleep

    def predict(self, inp: ScoreInput) -> float:
        payload = {"summary": inp.summary, "rec_info": inp.rec_info, "description": inp.description}
        body = post_with_retries(
            self._client, self.endpoint, payload, {"Content-Type": "application/json"},
            self.max_attempts, self.backoff, self._sleep, retry_status=self.RETRY_STATUS,
        )
        try:
            score = float(body["score"])
        except (KeyError, TypeError, ValueError):
            raise ProtocolError(f"score service returned {body!r:.200}") from None
        if not math.isfinite(score) or not -10.0 <= score <= 10.0:
            raise ProtocolError(f"score {score!r} outside the accepted range [-10, 10]")
        if not 0.0 <= score <= 1.0:
            logger.warning("clamping remote score %r into [0, 1]", score)
            score = min(max(score, 0.0), 1.0)
        return score


def remote_score(endpoint, inp: ScoreInput, client: httpx.Client | None = None, **kwargs) -> float:
    return RemoteScorer(endpoint, client=client, **kwargs).predict(inp)


class RandomScorer:
    """Control scorer: a uniform score per input, keyed by seed and text."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.scorer_id = f"random:{seed}"

    def predict(self, inp: ScoreInput) -> float:
        key = f"{self.seed}\x00{inp.summary}\x00{inp.rec_info}\x00{inp.description}"
        h = int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "big")
        return (h + 0.5) / 2.0**64


__all__ = [
    "EpochStats",
    "FeatureConfig",
    "RandomScorer",
    "RemoteScorer",
    "ScoreInput",
    "ScoredExample",
    "ScorerModel",
    "TrainConfig",
    "design_matrix",
    "featurize",
    "load_model",
    "mse_loss_and_grad",
    "predict_score",
    "remote_score",
    "save_model",
    "score_matrix",
    "train_scorer",
]
