"""Prompt assembly for the two prompt settings and deterministic generation.

The system instruction is shipped verbatim as a template resource and never
constructed programmatically, so prompts are bit-reproducible across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

from .errors import MissingAnatomyLine
from .tagging import TaggedReport


class PromptSetting(Enum):
    BASE = "base"
    WITH_ANATOMY = "with_anatomy"


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p, "max_tokens": self.max_tokens}


@lru_cache(maxsize=1)
def instruction_template() -> str:
    """The system instruction, byte-identical to the shipped template file."""
    return (
        resources.files("incifind")
        .joinpath("templates/incidentaloma_prompt.txt")
        .read_text(encoding="utf-8")
    )


@dataclass(frozen=True)
class PromptBundle:
    system_instruction: str
    user_content: str
    params: GenerationParams
    report_id: str
    setting: PromptSetting

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "setting": self.setting.value,
            "system": self.system_instruction,
            "user": self.user_content,
            "params": self.params.to_dict(),
        }


def build_prompt(
    tagged: TaggedReport,
    anatomy_line: str = "",
    setting: PromptSetting = PromptSetting.BASE,
    params: GenerationParams | None = None,
) -> PromptBundle:
    """Assemble the prompt bundle for one tagged report.

    Base passes the tagged report as-is; the with-anatomy setting prepends
    the single tag->anatomy mapping line followed by a newline.
    """
    if setting is PromptSetting.WITH_ANATOMY:
        if tagged.tag_map and not anatomy_line:
            raise MissingAnatomyLine(
                f"report {tagged.report_id}: with-anatomy prompt requires the anatomy mapping line"
            )
        user = f"{anatomy_line}\n{tagged.tagged_text}" if anatomy_line else tagged.tagged_text
    else:
        user = tagged.tagged_text
    return PromptBundle(
        system_instruction=instruction_template(),
        user_content=user,
        params=params or GenerationParams(),
        report_id=tagged.report_id,
        setting=setting,
    )
