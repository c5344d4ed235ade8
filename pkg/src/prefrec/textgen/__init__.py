from .backends import (
    API_KEY_ENV,
    Backend,
    CachingBackend,
    GeneratedText,
    GenerationRequest,
    MockExtractiveBackend,
    OpenAICompatibleBackend,
    Task,
    TextKind,
    prompt_hash,
)
from .pipeline import (
    PS_JOINER,
    DialogueSummary,
    GenerationConfig,
    chunk_dialogue,
    final_summary_request,
    format_dialogue,
    generate_candidates,
    generate_rec_info,
    generate_rec_infos,
    rec_info_request,
    single_summary_request,
    summarize_dialogue,
)
from .templates import PromptTemplate, TemplateSet, render_prompt

__all__ = [
    "API_KEY_ENV",
    "Backend",
    "CachingBackend",
    "DialogueSummary",
    "GeneratedText",
    "GenerationConfig",
    "GenerationRequest",
    "MockExtractiveBackend",
    "OpenAICompatibleBackend",
    "PS_JOINER",
    "PromptTemplate",
    "Task",
    "TemplateSet",
    "TextKind",
    "chunk_dialogue",
    "final_summary_request",
    "format_dialogue",
    "generate_candidates",
    "generate_rec_info",
    "generate_rec_infos",
    "prompt_hash",
    "rec_info_request",
    "render_prompt",
    "single_summary_request",
    "summarize_dialogue",
]
