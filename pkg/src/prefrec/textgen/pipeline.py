"""Chunked dialogue summarization and recommendation-information generation."""

from __future__ import annotations

from dataclasses import dataclass, field

from .._parallel import ordered_map
from ..corpus import Speaker, Utterance
from ..errors import BackendError, DomainError, GenerationError, PrefRecError
from .backends import (
    CUSTOMER_LABEL,
    OPERATOR_LABEL,
    Backend,
    GeneratedText,
    GenerationRequest,
    Task,
    TextKind,
    prompt_hash,
)
from .templates import TemplateSet, render_prompt

PS_JOINER = "\n"
DEFAULT_CHUNK_SIZE = 30
DEFAULT_CANDIDATE_TEMPERATURE = 0.8


def format_dialogue(history) -> str:
    labels = {Speaker.OPERATOR: OPERATOR_LABEL, Speaker.CUSTOMER: CUSTOMER_LABEL}
    return "\n".join(f"{labels[u.speaker]}: {u.text}" for u in history)


def chunk_dialogue(history: list[Utterance], chunk_size: int) -> list[list[Utterance]]:
    if chunk_size is None or chunk_size < 1:
        raise DomainError(f"chunk_size must be >= 1, got {chunk_size!r}")
    history = list(history)
    if not history:
        raise DomainError("cannot chunk an empty dialogue history")
    return [history[i : i + chunk_size] for i in range(0, len(history), chunk_size)]


@dataclass(frozen=True)
class GenerationConfig:
    """Settings shared by summary and rec-info generation.

    ``chunk_size=None`` selects single-pass summarization with the ``summary``
    template (the ChatRec setup); otherwise partial summaries are produced per
    chunk and merged by the ``final_summary`` template.
    """

    templates: TemplateSet = field(default_factory=TemplateSet.load)
    chunk_size: int | None = DEFAULT_CHUNK_SIZE
    seed: int = 0
    temperature: float = 0.0
    max_tokens: int = 512
    jobs: int = 1
    user_label: str = CUSTOMER_LABEL


@dataclass(frozen=True)
class DialogueSummary:
    partials: list[GeneratedText]
    final: GeneratedText
    combined: str  # joined partial summaries, conditioning text for the final pass
    final_prompt: str

    def __iter__(self):
        # unpacks as (partials, final)
        return iter((self.partials, self.final))


def _call(backend: Backend, request: GenerationRequest, kind: TextKind, index=None, context=None):
    try:
        text = backend.generate(request)
    except BackendError as exc:
        raise BackendError(str(exc), index=index, context=context) from exc
    except PrefRecError:
        raise
    except Exception as exc:
        raise BackendError(f"{type(exc).__name__}: {exc}", index=index, context=context) from exc
    if text is None or not str(text).strip():
        raise GenerationError(f"backend {backend.backend_id} returned empty text (index {index})")
    return GeneratedText(
        text=str(text).strip(),
        backend_id=backend.backend_id,
        seed=request.seed,
        prompt_hash=prompt_hash(request.prompt),
        kind=kind,
    )


def final_summary_request(combined: str, cfg: GenerationConfig, seed=None, temperature=None):
    variables = {"all_short_dialogue_summary": combined}
    return GenerationRequest(
        prompt=render_prompt(cfg.templates.final_summary, variables),
        seed=cfg.seed if seed is None else seed,
        temperature=cfg.temperature if temperature is None else temperature,
        max_tokens=cfg.max_tokens,
        task=Task.FINAL_SUMMARY,
        variables=variables,
    )


def single_summary_request(history, cfg: GenerationConfig, seed=None, temperature=None):
    variables = {"dialogue": format_dialogue(history), "user": cfg.user_label}
    return GenerationRequest(
        prompt=render_prompt(cfg.templates.summary, variables),
        seed=cfg.seed if seed is None else seed,
        temperature=cfg.temperature if temperature is None else temperature,
        max_tokens=cfg.max_tokens,
        task=Task.SUMMARY,
        variables=variables,
    )


def summarize_dialogue(history, backend: Backend, cfg: GenerationConfig) -> DialogueSummary:
    """Summarize a dialogue prefix chunk by chunk, then merge the partials.

    The merge pass runs even for a single chunk so every summary has the same
    two-stage provenance.
    """
    history = list(history)
    if not history:
        raise DomainError("cannot summarize an empty dialogue history")

    if cfg.chunk_size is None:
        req = single_summary_request(history, cfg)
        final = _call(backend, req, TextKind.FINAL_SUMMARY, index=0)
        return DialogueSummary([], final, combined=req.variables["dialogue"], final_prompt=req.prompt)

    chunks = chunk_dialogue(history, cfg.chunk_size)

    def partial(indexed):
        i, chunk = indexed
        variables = {"short_dialogue": format_dialogue(chunk)}
        req = GenerationRequest(
            prompt=render_prompt(cfg.templates.partial_summary, variables),
            seed=cfg.seed,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            task=Task.PARTIAL_SUMMARY,
            variables=variables,
        )
        return _call(backend, req, TextKind.PARTIAL_SUMMARY, index=i)

    partials = ordered_map(partial, enumerate(chunks), cfg.jobs)
    combined = PS_JOINER.join(p.text for p in partials)
    req = final_summary_request(combined, cfg)
    final = _call(backend, req, TextKind.FINAL_SUMMARY, index=len(chunks))
    return DialogueSummary(partials, final, combined=combined, final_prompt=req.prompt)


def generate_candidates(
    request: GenerationRequest,
    count: int,
    backend: Backend,
    base_seed: int,
    kind: TextKind = TextKind.FINAL_SUMMARY,
    jobs: int = 1,
) -> list[GeneratedText]:
    """Sample ``count`` texts for one prompt; candidate i uses seed ``base_seed + i``."""
    if count < 2:
        raise DomainError(f"need at least 2 candidates to form a preference pair, got {count}")

    def one(i):
        req = GenerationRequest(
            prompt=request.prompt,
            seed=base_seed + i,
            temperature=request.temperature,
            max_tokens=request.max_tokens,
            task=request.task,
            variables=request.variables,
        )
        return _call(backend, req, kind, index=i)

    return ordered_map(one, range(count), jobs)


def rec_info_request(description: str, cfg: GenerationConfig, seed=None, temperature=None):
    if not description or not description.strip():
        raise DomainError("item description is empty")
    variables = {"description": description}
    return GenerationRequest(
        prompt=render_prompt(cfg.templates.rec_info, variables),
        seed=cfg.seed if seed is None else seed,
        temperature=cfg.temperature if temperature is None else temperature,
        max_tokens=cfg.max_tokens,
        task=Task.REC_INFO,
        variables=variables,
    )


def generate_rec_info(description: str, backend: Backend, cfg: GenerationConfig) -> GeneratedText:
    return _call(backend, rec_info_request(description, cfg), TextKind.REC_INFO)


def generate_rec_infos(descriptions, backend: Backend, cfg: GenerationConfig) -> list[GeneratedText]:
    return ordered_map(lambda d: generate_rec_info(d, backend, cfg), descriptions, cfg.jobs)
