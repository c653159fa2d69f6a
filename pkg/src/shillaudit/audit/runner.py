"""Stage-II driver: audit every candidate and produce the flagged set.

Users outside the candidate set are never audited and thus classified
genuine with zero requests. Per-user transport or parse failures follow the
failure policy (fail-open to Genuine by default) without stopping the run.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..dataset import InteractionMatrix, ItemCatalog, UserLabel
from ..errors import ResponseParseError, TransportError
from ..prescreen import CandidateSet
from . import parsers
from .prompts import (
    CONFIDENCE_MODE,
    DEFAULT_ITEM_CHAR_BUDGET,
    DEFAULT_MAX_ITEMS,
    LABEL_MODE,
    build_prompt,
)

logger = logging.getLogger(__name__)

CONFIDENCE_THRESHOLD = 3  # scores >= this are genuine


@dataclass(frozen=True)
class AuditVerdict:
    user_index: int
    raw_response: str
    mode: str
    decision: UserLabel
    parse_ok: bool
    confidence: int | None = None
    think_text: str | None = None
    answer_label: str | None = None
    error: str | None = None
    latency_ms: float = 0.0


@dataclass(frozen=True)
class AuditOutcome:
    verdicts: list[AuditVerdict]
    flagged: frozenset[int]

    def transport_failures(self) -> int:
        return sum(1 for v in self.verdicts if v.error is not None)


def _judge(mode: str, raw: str, fallback: UserLabel) -> AuditVerdict | dict:
    """Parse one raw response into decision fields (without user index)."""
    if mode == CONFIDENCE_MODE:
        score = parsers.parse_confidence(raw)
        decision = UserLabel.GENUINE if score >= CONFIDENCE_THRESHOLD else UserLabel.FAKE
        return {"confidence": score, "decision": decision, "parse_ok": True}
    if mode == LABEL_MODE:
        think, answer = parsers.parse_label_response(raw)
        decision = UserLabel.GENUINE if answer == parsers.REAL else UserLabel.FAKE
        return {
            "think_text": think,
            "answer_label": answer,
            "decision": decision,
            "parse_ok": True,
        }
    raise ValueError(f"unknown audit mode {mode!r}")


def audit_candidates(
    auditor,
    candidates: CandidateSet,
    matrix: InteractionMatrix,
    catalog: ItemCatalog,
    mode: str,
    knowledge: str,
    fail_closed: bool = False,
    item_char_budget: int = DEFAULT_ITEM_CHAR_BUDGET,
    max_items: int = DEFAULT_MAX_ITEMS,
) -> AuditOutcome:
    """One verdict per candidate, ordered by user index; F = decided Fake."""
    users = candidates.sorted_users()
    if not users:
        return AuditOutcome(verdicts=[], flagged=frozenset())
    fallback = UserLabel.FAKE if fail_closed else UserLabel.GENUINE

    prompts = {
        u: build_prompt(
            u, matrix, catalog, knowledge, mode,
            item_char_budget=item_char_budget, max_items=max_items,
        )
        for u in users
    }

    def run_one(user: int) -> AuditVerdict:
        start = time.perf_counter()
        raw = ""
        error = None
        fields: dict = {"decision": fallback, "parse_ok": False}
        try:
            raw = auditor.respond(user, prompts[user])
            fields = _judge(mode, raw, fallback)
        except TransportError as exc:
            error = f"transport: {exc}"
            logger.warning("user %d: %s (defaulting %s)", user, error, fallback.value)
        except ResponseParseError as exc:
            error = None
            fields = {"decision": fallback, "parse_ok": False}
            logger.warning("user %d: parse failure: %s (defaulting %s)", user, exc, fallback.value)
        latency_ms = (time.perf_counter() - start) * 1000.0
        return AuditVerdict(
            user_index=user,
            raw_response=raw,
            mode=mode,
            error=error,
            latency_ms=latency_ms,
            **fields,
        )

    workers = max(1, getattr(auditor, "max_concurrency", 1))
    if workers == 1:
        verdicts = [run_one(u) for u in users]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(run_one, users))
    verdicts.sort(key=lambda v: v.user_index)
    flagged = frozenset(v.user_index for v in verdicts if v.decision is UserLabel.FAKE)
    return AuditOutcome(verdicts=verdicts, flagged=flagged)


def write_verdict_log(outcome: AuditOutcome, matrix: InteractionMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in outcome.verdicts:
            fh.write(
                json.dumps(
                    {
                        "user_id": matrix.user_ids[v.user_index],
                        "mode": v.mode,
                        "raw": v.raw_response,
                        "decision": v.decision.value,
                        "parse_ok": v.parse_ok,
                        "confidence": v.confidence,
                        "answer_label": v.answer_label,
                        "error": v.error,
                        "latency_ms": round(v.latency_ms, 3),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
