"""Language-model reconstruction pipeline and preference-aware prompting."""

from .parsing import ground_coordinates, parse_plan, parse_step_coordinates
from .pipeline import PipelineOptions, run_two_stage
from .provider import ChatProvider, Completion, ProviderConfig, StubProvider, chat
from .prompts import (
    build_context_summary,
    build_preference_prompt,
    build_stage1_prompt,
    build_stage2_prompt,
)

__all__ = [
    "ChatProvider",
    "Completion",
    "PipelineOptions",
    "ProviderConfig",
    "StubProvider",
    "build_context_summary",
    "build_preference_prompt",
    "build_stage1_prompt",
    "build_stage2_prompt",
    "chat",
    "ground_coordinates",
    "parse_plan",
    "parse_step_coordinates",
    "run_two_stage",
]
