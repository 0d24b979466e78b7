"""Final-answer extraction and gold-answer matching.

Extraction is deliberately narrow: the last boxed marker wins, otherwise the
last nonempty line after the close-of-reasoning marker. Matching normalizes
obvious numeric spellings (leading zeros, trailing decimal zeros, reducible
fractions) and nothing more; no symbolic math.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

BOXED_MARKER = "\\boxed"
THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

_INT_RE = re.compile(r"^[+-]?\d+$")
_DECIMAL_RE = re.compile(r"^[+-]?\d+\.\d+$")
_FRACTION_RE = re.compile(r"^([+-]?\d+)/(\d+)$")
_MATH_DELIMS = (("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"))


class ExtractionRule(str, Enum):
    BOXED = "boxed"
    FINAL_LINE = "final_line"
    NONE = "none"


@dataclass(frozen=True)
class Problem:
    """One verifiable problem. metadata is free-form string pairs."""

    problem_id: str
    prompt: str
    gold_answer: str
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.problem_id:
            raise ValueError("problem_id must be nonempty")
        if not self.gold_answer:
            raise ValueError(f"problem {self.problem_id!r} has an empty gold answer")

    @property
    def unverifiable(self) -> bool:
        """Gold marked absent: excluded from rejection filtering, never auto-accepted."""
        return self.metadata.get("unverifiable") == "true"


@dataclass(frozen=True)
class ExtractedAnswer:
    raw: str
    normalized: str
    found: bool
    extraction_rule: ExtractionRule


def _last_boxed(text: str) -> str | None:
    """Content of the last balanced \boxed{...} in text, or None."""
    start = len(text)
    while True:
        start = text.rfind(BOXED_MARKER, 0, start)
        if start < 0:
            return None
        pos = start + len(BOXED_MARKER)
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text) or text[pos] != "{":
            continue
        depth = 0
        for end in range(pos, len(text)):
            if text[end] == "{":
                depth += 1
            elif text[end] == "}":
                depth -= 1
                if depth == 0:
                    return text[pos + 1 : end]
        # Unbalanced: try an earlier occurrence.


def extract_answer(trajectory_text: str) -> ExtractedAnswer:
    """Extract the final answer from a trajectory. Total: never raises.

    Rule order: last boxed marker; else the last nonempty line after the last
    close-of-reasoning marker; else not found.
    """
    boxed = _last_boxed(trajectory_text)
    if boxed is not None:
        return ExtractedAnswer(boxed, normalize_answer(boxed), True, ExtractionRule.BOXED)
    if THINK_CLOSE in trajectory_text:
        tail = trajectory_text.rsplit(THINK_CLOSE, 1)[1]
        lines = [line.strip() for line in tail.splitlines()]
        lines = [line for line in lines if line]
        if lines:
            raw = lines[-1]
            return ExtractedAnswer(raw, normalize_answer(raw), True, ExtractionRule.FINAL_LINE)
    return ExtractedAnswer("", "", False, ExtractionRule.NONE)


def _strip_math_delims(text: str) -> str:
    changed = True
    while changed:
        changed = False
        text = text.strip()
        for open_d, close_d in _MATH_DELIMS:
            if (
                len(text) > len(open_d) + len(close_d)
                and text.startswith(open_d)
                and text.endswith(close_d)
            ):
                text = text[len(open_d) : -len(close_d)]
                changed = True
    return text


def _canonical_decimal(text: str) -> str:
    sign = "-" if text[0] == "-" else ""
    body = text.lstrip("+-")
    int_part, frac_part = body.split(".")
    int_part = int_part.lstrip("0") or "0"
    frac_part = frac_part.rstrip("0")
    if sign == "-" and int_part == "0" and not frac_part:
        sign = ""
    return f"{sign}{int_part}.{frac_part}" if frac_part else f"{sign}{int_part}"


def normalize_answer(answer: str) -> str:
    """Canonical comparison form. Idempotent.

    Numerics: integers lose leading zeros, decimals lose trailing zeros,
    integer fractions are reduced by gcd. Everything else: whitespace
    collapsed, case preserved.
    """
    text = _strip_math_delims(answer.strip())
    if _INT_RE.match(text):
        return str(int(text))
    if _DECIMAL_RE.match(text):
        return _canonical_decimal(text)
    fraction = _FRACTION_RE.match(text)
    if fraction:
        numerator, denominator = int(fraction.group(1)), int(fraction.group(2))
        if denominator != 0:
            common = math.gcd(numerator, denominator)
            numerator //= common
            denominator //= common
            return str(numerator) if denominator == 1 else f"{numerator}/{denominator}"
    return re.sub(r"\s+", " ", text)


def answers_match(extracted: ExtractedAnswer, gold_answer: str) -> bool:
    """True when the extracted answer equals the gold answer after normalization.

    An answer that was never found matches nothing.
    """
    if not extracted.found:
        return False
    return extracted.normalized == normalize_answer(gold_answer)
