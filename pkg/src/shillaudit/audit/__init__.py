"""Stage-II semantic auditing: prompts, parsers, client, and runner."""

from .auditors import AlwaysGenuineAuditor, Auditor, HttpAuditor, OracleAuditor, ScriptedAuditor
from .client import AuditorEndpoint, check_endpoint_reachable, query_auditor, resolve_auth_token
from .parsers import (
    FAKE,
    REAL,
    is_strict_label_format,
    parse_confidence,
    parse_label_response,
    render_confidence_response,
    render_label_response,
)
from .prompts import (
    CONFIDENCE_MODE,
    LABEL_MODE,
    MODES,
    AuditPrompt,
    build_prompt,
    judgment_format_text,
    load_prior_knowledge,
    load_template,
    render_item_features,
    response_template_text,
)
from .runner import CONFIDENCE_THRESHOLD, AuditOutcome, AuditVerdict, audit_candidates, write_verdict_log

__all__ = [
    "AlwaysGenuineAuditor",
    "Auditor",
    "AuditOutcome",
    "AuditPrompt",
    "AuditVerdict",
    "AuditorEndpoint",
    "CONFIDENCE_MODE",
    "CONFIDENCE_THRESHOLD",
    "FAKE",
    "HttpAuditor",
    "LABEL_MODE",
    "MODES",
    "OracleAuditor",
    "REAL",
    "ScriptedAuditor",
    "audit_candidates",
    "build_prompt",
    "check_endpoint_reachable",
    "is_strict_label_format",
    "judgment_format_text",
    "load_prior_knowledge",
    "load_template",
    "parse_confidence",
    "parse_label_response",
    "query_auditor",
    "render_confidence_response",
    "render_item_features",
    "render_label_response",
    "resolve_auth_token",
    "response_template_text",
    "write_verdict_log",
]
