"""Strict parsers for the two auditor response formats.

Confidence mode expects a single <confidence> slot holding an integer 1-5;
label mode expects exactly one <think> block followed by one <answer> block
whose trimmed content is "Real" or "Fake" (case-sensitive). Parsers never
guess: anything ambiguous is a ResponseParseError.
"""

from __future__ import annotations

import re

from ..errors import ResponseParseError

REAL = "Real"
FAKE = "Fake"

_SLOT_RE = {
    "think": re.compile(r"<think>(.*?)</think>", re.DOTALL),
    "answer": re.compile(r"<answer>(.*?)</answer>", re.DOTALL),
    "confidence": re.compile(r"<confidence>(.*?)</confidence>", re.DOTALL),
}


def _single_block(raw: str, tag: str) -> tuple[str, int, int]:
    """Content and span of the unique <tag> block; errors on 0 or 2+."""
    opens = raw.count(f"<{tag}>")
    closes = raw.count(f"</{tag}>")
    if opens == 0 or closes == 0:
        raise ResponseParseError(f"missing <{tag}> block")
    if opens > 1 or closes > 1:
        raise ResponseParseError(f"duplicated <{tag}> block")
    match = _SLOT_RE[tag].search(raw)
    if match is None:
        raise ResponseParseError(f"malformed <{tag}> block")
    return match.group(1), match.start(), match.end()


def parse_label_response(raw: str) -> tuple[str, str]:
    """Extract (think_text, answer_label) from a label-mode response.

    The think block must come before the answer block and the answer must be
    exactly "Real" or "Fake" after trimming. Text outside the two blocks is
    ignored here (strict whole-output conformance is a separate check).
    """
    think, _, think_end = _single_block(raw, "think")
    answer, answer_start, _ = _single_block(raw, "answer")
    if answer_start < think_end:
        raise ResponseParseError("<answer> block precedes <think> block")
    label = answer.strip()
    if label not in (REAL, FAKE):
        raise ResponseParseError(f"answer must be 'Real' or 'Fake', got {label!r}")
    return think.strip(), label


def parse_confidence(raw: str) -> int:
    """Extract the 1-5 integer from the unique <confidence> slot."""
    content, _, _ = _single_block(raw, "confidence")
    value = content.strip()
    if not re.fullmatch(r"\d+", value):
        raise ResponseParseError(f"confidence slot is not an integer: {value!r}")
    score = int(value)
    if not 1 <= score <= 5:
        raise ResponseParseError(f"confidence {score} outside 1-5")
    return score


def is_strict_label_format(raw: str) -> bool:
    """True iff the whole output is exactly one think block then one answer
    block with a valid label and nothing but whitespace outside them."""
    try:
        _, think_start, think_end = _single_block(raw, "think")
        _, answer_start, answer_end = _single_block(raw, "answer")
        parse_label_response(raw)
    except ResponseParseError:
        return False
    outside = raw[:think_start] + raw[think_end:answer_start] + raw[answer_end:]
    return outside.strip() == ""


def render_label_response(think: str, answer: str) -> str:
    if answer not in (REAL, FAKE):
        raise ValueError(f"answer must be 'Real' or 'Fake', got {answer!r}")
    return f"<think> {think} </think>\n<answer> {answer} </answer>"


def render_confidence_response(think: str, score: int) -> str:
    if not 1 <= int(score) <= 5:
        raise ValueError(f"score must be in 1-5, got {score}")
    return f"<think> {think} </think>\n<confidence> {int(score)} </confidence>"
