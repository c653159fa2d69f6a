"""Chat-completion client with bounded retries and exponential backoff.

Wire protocol: JSON POST {model, messages, temperature, max_tokens} to the
endpoint URL, bearer token from a named environment variable, response read
from the first choice's message content. Transient failures (connection
errors, timeouts, HTTP 429/5xx, malformed bodies) are retried up to the
configured count; other HTTP errors fail immediately.
"""

from __future__ import annotations

import logging
import os
import socket
import time
from dataclasses import dataclass
from urllib.parse import urlparse

import requests

from ..errors import ConfigError, TransportError
from .prompts import AuditPrompt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditorEndpoint:
    base_url: str
    model_name: str
    auth_token_env_var: str | None = None
    max_concurrency: int = 4
    timeout: float = 30.0
    retries: int = 2
    temperature: float = 0.0
    max_tokens: int = 512
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ConfigError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.retries < 0:
            raise ConfigError(f"retries must be >= 0, got {self.retries}")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")


def resolve_auth_token(endpoint: AuditorEndpoint) -> str | None:
    """Bearer token from the configured environment variable, if any.

    A configured-but-unset variable is a config error raised before any
    request goes out.
    """
    if not endpoint.auth_token_env_var:
        return None
    token = os.environ.get(endpoint.auth_token_env_var)
    if not token:
        raise ConfigError(
            f"auth environment variable {endpoint.auth_token_env_var!r} is not set"
        )
    return token


def check_endpoint_reachable(endpoint: AuditorEndpoint, connect_timeout: float = 3.0) -> None:
    """Cheap TCP reachability probe; raises TransportError when unreachable."""
    parsed = urlparse(endpoint.base_url)
    host = parsed.hostname
    if host is None:
        raise ConfigError(f"endpoint URL {endpoint.base_url!r} has no host")
    port = parsed.port or (443 if parsed.scheme == "https" else 80)
    try:
        with socket.create_connection((host, port), timeout=connect_timeout):
            pass
    except OSError as exc:
        raise TransportError(f"endpoint {host}:{port} unreachable: {exc}") from exc


def _extract_content(payload: dict) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise TransportError("response body lacks choices[0].message.content") from None
    if not isinstance(content, str):
        raise TransportError("completion content is not a string")
    return content


def query_auditor(
    endpoint: AuditorEndpoint,
    prompt: AuditPrompt,
    temperature: float | None = None,
    token: str | None = None,
) -> str:
    """Issue one chat-completion request and return the completion text."""
    if token is None:
        token = resolve_auth_token(endpoint)
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    payload = {
        "model": endpoint.model_name,
        "messages": prompt.messages(),
        "temperature": endpoint.temperature if temperature is None else temperature,
        "max_tokens": endpoint.max_tokens,
    }

    attempts = endpoint.retries + 1
    last_error = "no attempt made"
    for attempt in range(attempts):
        if attempt:
            delay = endpoint.backoff_base * (2 ** (attempt - 1))
            time.sleep(delay)
        try:
            resp = requests.post(
                endpoint.base_url, json=payload, headers=headers, timeout=endpoint.timeout
            )
        except requests.RequestException as exc:
            last_error = f"request failed: {exc}"
            logger.warning("attempt %d/%d: %s", attempt + 1, attempts, last_error)
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last_error = f"transient HTTP {resp.status_code}"
            logger.warning("attempt %d/%d: %s", attempt + 1, attempts, last_error)
            continue
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
        except ValueError:
            last_error = "malformed JSON response body"
            logger.warning("attempt %d/%d: %s", attempt + 1, attempts, last_error)
            continue
        try:
            content = _extract_content(body)
        except TransportError as exc:
            last_error = str(exc)
            logger.warning("attempt %d/%d: %s", attempt + 1, attempts, last_error)
            continue
        if attempt:
            logger.info("request succeeded after %d attempts", attempt + 1)
        return content
    raise TransportError(f"exhausted {attempts} attempts; last error: {last_error}")
