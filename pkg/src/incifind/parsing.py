"""Turns raw model completions into lesion-level labels.

The expected completion is a brace-delimited object with seven anatomy keys
("Lung Inci" ... "Other Inci"), each mapping tag names to label values 1 or 2,
optionally followed by free-text reasoning.  Anything that deviates from the
contract degrades to a typed warning, never an unhandled exception; lesions
the model does not mention default to label 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

from .corpus import Anatomy, RadiologyReport
from .errors import NoJsonFound, ParseFailure, UnbalancedBraces
from .tagging import TaggedReport

if TYPE_CHECKING:  # avoid a runtime cycle with llm_client
    from .llm_client import RawCompletion

ANATOMY_KEYS = tuple(f"{a.display} Inci" for a in Anatomy)
_KEY_BY_NORMALIZED = {k.lower(): k for k in ANATOMY_KEYS}
_KEY_BY_NORMALIZED.update({a.value: f"{a.display} Inci" for a in Anatomy})

# warning codes
W_MISSING_KEY = "missing_key"
W_UNKNOWN_KEY = "unknown_key"
W_INVALID_BLOCK = "invalid_block"
W_UNKNOWN_TAG = "unknown_tag"
W_INVALID_LABEL = "invalid_label"
W_DUPLICATE_MENTION = "duplicate_mention"
W_ANATOMY_MISMATCH = "anatomy_mismatch"
W_TRANSPORT_ERROR = "transport_error"
W_PARSE_FAILURE = "parse_failure"


@dataclass(frozen=True)
class ParseWarning:
    code: str
    detail: str


@dataclass
class ModelOutput:
    report_id: str
    anatomy_blocks: dict[str, dict[str, int]]  # canonical key -> {tag: 1|2}
    reasoning: str | None = None
    diagnostics: list[ParseWarning] = field(default_factory=list)


def _escape_pair(ch: str) -> str:
    mapping = {"n": "\n", "t": "\t", "r": "\r", "'": "'", '"': '"', "\\": "\\"}
    return mapping.get(ch, "\\" + ch)


def _normalize_quotes(block: str) -> str:
    """Rewrite single-quoted string literals as standard JSON strings."""
    out: list[str] = []
    i = 0
    n = len(block)
    while i < n:
        ch = block[i]
        if ch == '"':
            # copy a double-quoted string verbatim, honoring escapes
            j = i + 1
            while j < n:
                if block[j] == "\\":
                    j += 2
                    continue
                if block[j] == '"':
                    break
                j += 1
            out.append(block[i : j + 1])
            i = j + 1
        elif ch == "'":
            j = i + 1
            content: list[str] = []
            while j < n and block[j] != "'":
                if block[j] == "\\" and j + 1 < n:
                    content.append(_escape_pair(block[j + 1]))
                    j += 2
                else:
                    content.append(block[j])
                    j += 1
            out.append(json.dumps("".join(content)))
            i = j + 1
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def extract_json(text: str) -> tuple[dict, str]:
    """Return the first balanced top-level brace block and the trailing text.

    Single-quoted keys and strings are normalized to standard JSON before
    decoding.  Text before the block is discarded; text after it is returned
    (stripped) as the model's reasoning.
    """
    start = text.find("{")
    if start == -1:
        raise NoJsonFound("no opening brace in completion")
    depth = 0
    quote: str | None = None
    i = start
    n = len(text)
    while i < n:
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                block = text[start : i + 1]
                try:
                    obj = json.loads(_normalize_quotes(block))
                except json.JSONDecodeError as exc:
                    raise NoJsonFound(f"brace block is not decodable JSON: {exc}") from None
                return obj, text[i + 1 :].strip()
        i += 1
    raise UnbalancedBraces("completion ends inside an unclosed brace block")


def _canonical_key(key: object) -> str | None:
    if not isinstance(key, str):
        return None
    return _KEY_BY_NORMALIZED.get(key.strip().lower())


def _canonical_tag(tag: object) -> str | None:
    if not isinstance(tag, str):
        return None
    cleaned = tag.strip().upper().replace(" ", "")
    return cleaned if cleaned.startswith("LESION") else None


def _coerce_label(value: object) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    return None


def parse_output(raw: "RawCompletion", tagged: TaggedReport) -> ModelOutput:
    """Validate one completion against the tagged report.

    Missing anatomy keys become empty blocks, unknown keys/tags and
    out-of-range labels are dropped; each such repair leaves a warning in
    ``diagnostics``.  Raises ParseFailure only when no JSON block can be
    extracted at all.
    """
    try:
        obj, reasoning = extract_json(raw.text)
    except (NoJsonFound, UnbalancedBraces) as exc:
        raise ParseFailure(tagged.report_id, str(exc)) from exc

    warnings: list[ParseWarning] = []
    blocks: dict[str, dict[str, int]] = {key: {} for key in ANATOMY_KEYS}
    seen_keys: set[str] = set()
    for key, block in obj.items():
        canon = _canonical_key(key)
        if canon is None:
            warnings.append(ParseWarning(W_UNKNOWN_KEY, f"dropped unknown key {key!r}"))
            continue
        seen_keys.add(canon)
        if not isinstance(block, dict):
            warnings.append(
                ParseWarning(W_INVALID_BLOCK, f"{canon}: expected an object, got {type(block).__name__}")
            )
            continue
        for tag, value in block.items():
            canon_tag = _canonical_tag(tag)
            if canon_tag is None or canon_tag not in tagged.tag_map:
                warnings.append(ParseWarning(W_UNKNOWN_TAG, f"{canon}: dropped unknown tag {tag!r}"))
                continue
            label = _coerce_label(value)
            if label not in (1, 2):
                warnings.append(
                    ParseWarning(W_INVALID_LABEL, f"{canon}/{canon_tag}: dropped label {value!r}")
                )
                continue
            blocks[canon][canon_tag] = label
    for key in ANATOMY_KEYS:
        if key not in seen_keys:
            warnings.append(ParseWarning(W_MISSING_KEY, f"{key} absent, treated as empty"))
    return ModelOutput(
        report_id=tagged.report_id,
        anatomy_blocks=blocks,
        reasoning=reasoning or None,
        diagnostics=warnings,
    )


def to_lesion_labels(output: ModelOutput, tagged: TaggedReport) -> dict[str, int]:
    """Total lesion_id -> label map; unmentioned lesions get 0.

    A lesion mentioned under several anatomy blocks keeps the maximum label
    and a duplicate_mention warning is appended to ``output.diagnostics``.
    """
    by_tag: dict[str, int] = {}
    for key in ANATOMY_KEYS:
        for tag, label in output.anatomy_blocks.get(key, {}).items():
            if tag in by_tag:
                output.diagnostics.append(
                    ParseWarning(W_DUPLICATE_MENTION, f"{tag} mentioned more than once; keeping max")
                )
                by_tag[tag] = max(by_tag[tag], label)
            else:
                by_tag[tag] = label
    return {
        lesion_id: by_tag.get(tag, 0) for tag, lesion_id in tagged.tag_map.items()
    }


def anatomy_mismatch_warnings(
    output: ModelOutput, tagged: TaggedReport, report: RadiologyReport
) -> list[ParseWarning]:
    """Flag tags listed under a block other than the lesion's verified anatomy.

    The tag name stays authoritative for the label; these warnings exist so
    error analysis can see where a model shelved a lesion incorrectly.
    """
    warnings = []
    for key, block in output.anatomy_blocks.items():
        for tag in block:
            lesion = report.lesion(tagged.tag_map[tag])
            expected = f"{lesion.anatomy.display} Inci"
            if key != expected:
                warnings.append(ParseWarning(
                    W_ANATOMY_MISMATCH,
                    f"{tag} listed under {key} but verified anatomy is {lesion.anatomy.display}",
                ))
    return warnings


def render_output_text(
    blocks: Mapping[str, Mapping[str, int]], reasoning: str = ""
) -> str:
    """Format anatomy blocks in the completion contract's shape.

    Anatomy keys are single-quoted and tag entries double-quoted, mirroring
    the instruction template's example output, so rendered text exercises
    the same normalization path real completions do.
    """
    lines = ["{"]
    for idx, key in enumerate(ANATOMY_KEYS):
        entries = blocks.get(key, {})
        inner = ",".join(f'"{tag}":{label}' for tag, label in entries.items())
        comma = "," if idx < len(ANATOMY_KEYS) - 1 else ""
        lines.append(f" '{key}': {{{inner}}}{comma}")
    lines.append("}")
    text = "\n".join(lines)
    if reasoning:
        text += "\n" + reasoning
    return text
