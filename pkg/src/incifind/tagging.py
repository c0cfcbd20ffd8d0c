"""Inline numbered lesion tags and context windows.

Tags look like ``<LESION3>nodule</LESION3>``; numbering starts at 1 in
ascending span order, so stripping the tags reproduces the original text
exactly and the tag names form a bijection onto the report's lesions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .corpus import RadiologyReport
from .errors import MalformedTag, OverlappingSpans

TAG_RE = re.compile(r"</?LESION(\d+)>")

DEFAULT_CONTEXT_RADIUS = 100


@dataclass(frozen=True)
class TaggedReport:
    report_id: str
    tagged_text: str
    tag_map: dict[str, str]  # "LESION1" -> lesion_id, insertion-ordered


def tag_lesions(report: RadiologyReport) -> TaggedReport:
    """Wrap each lesion surface in a numbered tag, earliest span first."""
    ordered = sorted(report.lesions, key=lambda l: l.span_start)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.span_start < prev.span_end:
            raise OverlappingSpans(report.report_id, f"({prev.lesion_id}, {cur.lesion_id})")
    pieces = []
    tag_map: dict[str, str] = {}
    cursor = 0
    for k, lesion in enumerate(ordered, start=1):
        tag = f"LESION{k}"
        tag_map[tag] = lesion.lesion_id
        pieces.append(report.text[cursor : lesion.span_start])
        pieces.append(f"<{tag}>{report.text[lesion.span_start:lesion.span_end]}</{tag}>")
        cursor = lesion.span_end
    pieces.append(report.text[cursor:])
    return TaggedReport(report.report_id, "".join(pieces), tag_map)


def strip_tags(tagged_text: str) -> str:
    """Remove well-formed lesion tags; raise MalformedTag on nesting or imbalance."""
    out = []
    cursor = 0
    open_tag: str | None = None
    for m in TAG_RE.finditer(tagged_text):
        out.append(tagged_text[cursor : m.start()])
        cursor = m.end()
        token = m.group(0)
        if token.startswith("</"):
            number = token[len("</LESION") : -1]
            if open_tag != number:
                raise MalformedTag(f"unmatched closing tag {token}")
            open_tag = None
        else:
            if open_tag is not None:
                raise MalformedTag(f"nested tag {token} inside LESION{open_tag}")
            open_tag = m.group(1)
    if open_tag is not None:
        raise MalformedTag(f"unclosed tag LESION{open_tag}")
    out.append(tagged_text[cursor:])
    return "".join(out)


def anatomy_map_line(tagged: TaggedReport, report: RadiologyReport) -> str:
    """One line pinning each tag to its verified anatomy, in tag order.

    Example: ``LESION1=Thyroid; LESION2=Pancreas``.
    """
    entries = []
    for tag, lesion_id in tagged.tag_map.items():
        lesion = report.lesion(lesion_id)
        entries.append(f"{tag}={lesion.anatomy.display}")
    return "; ".join(entries)


def context_window(
    report: RadiologyReport, lesion_id: str, radius: int = DEFAULT_CONTEXT_RADIUS
) -> str:
    """Surface plus up to ``radius`` characters on each side, clipped at text bounds."""
    lesion = report.lesion(lesion_id)  # raises UnknownLesion
    start = max(0, lesion.span_start - radius)
    end = min(len(report.text), lesion.span_end + radius)
    return report.text[start:end]
