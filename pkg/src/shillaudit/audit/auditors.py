"""Auditor backends: the HTTP client plus offline mocks.

An auditor maps (user_index, prompt) to raw response text. The mocks make
the full pipeline testable with no network: "oracle" answers from ground
truth, "always-genuine" clears everyone, "scripted" replays fixture
responses keyed by user.
"""

from __future__ import annotations

import json
from typing import Protocol

from ..dataset import InteractionMatrix, LabeledUsers
from ..errors import ConfigError
from . import parsers
from .client import AuditorEndpoint, query_auditor, resolve_auth_token
from .prompts import CONFIDENCE_MODE, LABEL_MODE, AuditPrompt

_ORACLE_THINK = (
    "1. Reviewed every item in the interaction history. "
    "2. Compared the mix against typical behavior for this catalog."
)


class Auditor(Protocol):
    max_concurrency: int

    def respond(self, user_index: int, prompt: AuditPrompt) -> str: ...


class HttpAuditor:
    """Queries a chat-completion endpoint; auth resolved up front."""

    def __init__(self, endpoint: AuditorEndpoint):
        self.endpoint = endpoint
        self.max_concurrency = endpoint.max_concurrency
        self._token = resolve_auth_token(endpoint)

    def respond(self, user_index: int, prompt: AuditPrompt) -> str:
        return query_auditor(self.endpoint, prompt, token=self._token)


def _render_verdict(mode: str, fake: bool) -> str:
    if mode == CONFIDENCE_MODE:
        return parsers.render_confidence_response(_ORACLE_THINK, 1 if fake else 5)
    if mode == LABEL_MODE:
        return parsers.render_label_response(_ORACLE_THINK, parsers.FAKE if fake else parsers.REAL)
    raise ConfigError(f"unknown audit mode {mode!r}")


class OracleAuditor:
    """Answers straight from ground-truth labels, always well-formed."""

    max_concurrency = 1

    def __init__(self, labels: LabeledUsers, mode: str):
        self._labels = labels
        self._mode = mode

    def respond(self, user_index: int, prompt: AuditPrompt) -> str:
        return _render_verdict(self._mode, self._labels.is_fake(user_index))


class AlwaysGenuineAuditor:
    """Clears every audited user."""

    max_concurrency = 1

    def __init__(self, mode: str):
        self._mode = mode

    def respond(self, user_index: int, prompt: AuditPrompt) -> str:
        return _render_verdict(self._mode, fake=False)


class ScriptedAuditor:
    """Replays fixture responses keyed by user index.

    Users without a scripted response get an empty string, which fails
    parsing and therefore exercises the configured failure policy.
    """

    max_concurrency = 1

    def __init__(self, responses: dict[int, str]):
        self._responses = dict(responses)

    @classmethod
    def from_jsonl(cls, path, matrix: InteractionMatrix) -> "ScriptedAuditor":
        """Load {user_id, response} lines, mapping external ids to indices."""
        index = matrix.user_index
        responses: dict[int, str] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                uid = str(obj["user_id"])
                if uid not in index:
                    raise ConfigError(f"{path}:{lineno}: unknown user id {uid!r}")
                responses[index[uid]] = str(obj["response"])
        return cls(responses)

    def respond(self, user_index: int, prompt: AuditPrompt) -> str:
        return self._responses.get(user_index, "")
