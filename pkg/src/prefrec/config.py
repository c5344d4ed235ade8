"""Run configuration: file + flag merging, seed fan-out and backend construction."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import Variant
from .scorer import FeatureConfig, TrainConfig
from .textgen import MockExtractiveBackend, OpenAICompatibleBackend

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

# DPO fine-tuning settings reported for the two corpora; exported alongside
# preference files as a starting point for an external trainer.
DPO_TRAINER_DEFAULTS = {
    "tabidachi": {
        "summary": {"beta": 0.1768, "learning_rate": 1.1593e-7, "per_device_train_batch_size": 12},
        "rec_info": {"beta": 0.06109, "learning_rate": 8.7340e-6, "per_device_train_batch_size": 16},
    },
    "chatrec": {
        "summary": {"beta": 0.1253, "learning_rate": 6.4087e-7, "per_device_train_batch_size": 8},
        "rec_info": {"beta": 0.03949, "learning_rate": 1.7718e-7, "per_device_train_batch_size": 8},
    },
}
DPO_TRAINER_COMMON = {
    "num_train_epochs": 1,
    "optimizer": {"name": "adamw", "betas": [0.9, 0.999], "eps": 1e-8, "weight_decay": 0.0},
    "max_grad_norm": 1.0,
    "gradient_checkpointing": True,
    "bf16": True,
    "disable_dropout": True,
}


def dpo_trainer_config(corpus_kind: str, kind: str) -> dict:
    table = DPO_TRAINER_DEFAULTS.get(corpus_kind, DPO_TRAINER_DEFAULTS["tabidachi"])
    return {**DPO_TRAINER_COMMON, **table[kind]}


@dataclass
class RunConfig:
    corpus: str | None = None
    corpus_format: str = "native"
    templates: str = "tabidachi"
    template_dir: str | None = None
    backend: str = "mock"
    recinfo_backend: str | None = None
    tuned_summary_backend: str | None = None
    tuned_recinfo_backend: str | None = None
    mock_markers: list[str] = field(default_factory=list)
    scorer: str = "native"
    scorer_model: str | None = None
    scorer_url: str | None = None
    variant: str = "ours"
    k: int = 4
    j: int = 4
    chunk_size: int = 30
    temperature: float = 0.8
    seed: int = 0
    ks: list[int] = field(default_factory=lambda: [1, 3, 5])
    split: list[float] | None = None
    lr: float = 8.0
    epochs: int = 50
    batch_size: int = 32
    l2: float = 1e-5
    hash_dim_log2: int = 18
    cross_features: bool = True
    jobs: int = 1
    output_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        try:
            Variant(self.variant)
        except ValueError:
            raise ConfigError(
                f"unknown variant {self.variant!r}; expected one of {[v.value for v in Variant]}"
            ) from None
        if self.corpus_format not in ("native", "chatrec"):
            raise ConfigError(f"unknown corpus_format {self.corpus_format!r}")
        if self.scorer not in ("native", "remote"):
            raise ConfigError(f"unknown scorer kind {self.scorer!r}")
        if self.scorer == "remote" and not self.scorer_url:
            raise ConfigError("scorer=remote requires scorer_url")
        if self.k < 2 or self.j < 2:
            raise ConfigError("k and j must be >= 2")
        if self.chunk_size < 0:
            raise ConfigError("chunk_size must be >= 0 (0 = single pass)")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError("ks must be a non-empty list of positive integers")
        if self.split is not None and len(self.split) != 3:
            raise ConfigError("split must have three ratios")
        if self.variant == Variant.BASELINE.value and self.recinfo_backend:
            logger.warning("variant baseline does not use rec-info; ignoring recinfo_backend")
        for spec in (self.backend, self.recinfo_backend, self.tuned_summary_backend,
                     self.tuned_recinfo_backend):
            if spec is not None:
                parse_backend_spec(spec)
        return self

    @property
    def variant_enum(self) -> Variant:
        return Variant(self.variant)

    def to_dict(self, include_output=False) -> dict:
        d = dataclasses.asdict(self)
        if not include_output:
            d.pop("output_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def feature_cfg(self) -> FeatureConfig:
        return FeatureConfig(hash_dim_log2=self.hash_dim_log2, cross_features=self.cross_features)

    def train_cfg(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.stage_seed("train-scorer"), l2=self.l2)

    def stage_seed(self, stage: str) -> int:
        """Derive an independent seed per stage from the root seed."""
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF

    def make_backend(self, spec: str | None):
        if spec is None:
            return None
        return build_backend(spec, self.mock_markers)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def parse_backend_spec(spec: str) -> tuple[str, str | None, str | None]:
    """``mock``, ``mock:<name>`` or ``openai:<model>@<url>``."""
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        return "mock", rest or None, None
    if kind == "openai":
        model, at, url = rest.partition("@")
        if not model or not at or not url:
            raise ConfigError(f"remote backend spec must be openai:<model>@<url>, got {spec!r}")
        return "openai", model, url
    raise ConfigError(f"unknown backend spec {spec!r}")


def build_backend(spec: str, markers=()):
    kind, name, url = parse_backend_spec(spec)
    if kind == "mock":
        bid = "mock-extractive" if name is None else f"mock-extractive-{name}"
        return MockExtractiveBackend(extra_markers=tuple(markers), backend_id=bid)
    return OpenAICompatibleBackend(url=url, model=name)


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a table/object")
    return data


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """File values first, then ``overrides`` (explicit flags) on top."""
    values = {}
    if path is not None:
        for key, val in read_config_file(path).items():
            key = key.replace("-", "_")
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = val
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return RunConfig(**values).validate()
