"""Prompt assembly from user histories and item-side metadata.

The system text is a filled template (role, prior knowledge, judgment
format, response template); the user text lists every item of the audited
user's history as "Item_k (features)" segments in a stable order:
timestamp order when available, item index otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..dataset import InteractionMatrix, ItemCatalog, ItemRecord
from ..errors import ConfigError

CONFIDENCE_MODE = "confidence"
LABEL_MODE = "label"
MODES = (CONFIDENCE_MODE, LABEL_MODE)

ELLIPSIS = "..."
DEFAULT_ITEM_CHAR_BUDGET = 300
DEFAULT_MAX_ITEMS = 40

_PLACEHOLDERS = ("{prior_knowledge}", "{judgment_format}", "{response_template}")


def _read_template(name: str) -> str:
    ref = resources.files("shillaudit.audit") / "templates" / name
    return ref.read_text(encoding="utf-8")


def load_template(name: str) -> str:
    """Read a shipped template file (e.g. 'judgment_label.txt')."""
    return _read_template(name).strip()


def load_prior_knowledge(domain_or_path: str) -> str:
    """Prior-knowledge text by shipped domain name or explicit file path."""
    builtin = resources.files("shillaudit.audit") / "templates" / "prior_knowledge" / f"{domain_or_path}.txt"
    if builtin.is_file():
        return builtin.read_text(encoding="utf-8").strip()
    path = Path(domain_or_path)
    if path.is_file():
        return path.read_text(encoding="utf-8").strip()
    raise ConfigError(f"no prior-knowledge domain or file named {domain_or_path!r}")


def judgment_format_text(mode: str) -> str:
    if mode not in MODES:
        raise ConfigError(f"unknown audit mode {mode!r}; expected one of {MODES}")
    return load_template(f"judgment_{mode}.txt")


def response_template_text(mode: str) -> str:
    if mode not in MODES:
        raise ConfigError(f"unknown audit mode {mode!r}; expected one of {MODES}")
    return load_template(f"response_{mode}.txt")


@dataclass(frozen=True)
class AuditPrompt:
    system_text: str
    user_text: str

    def __post_init__(self):
        for marker in _PLACEHOLDERS:
            if marker in self.system_text:
                raise ConfigError(f"system text still contains placeholder {marker}")

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]


def render_item_features(record: ItemRecord, char_budget: int = DEFAULT_ITEM_CHAR_BUDGET) -> str:
    """Join title, description, and extra fields; truncate to the budget.

    Truncated feature strings end with an ellipsis marker appended after the
    cut, so the rendered text is at most char_budget plus the marker.
    """
    parts = [record.title]
    if record.description:
        parts.append(record.description)
    for key in sorted(record.extra_fields):
        parts.append(f"{key}={record.extra_fields[key]}")
    features = "; ".join(parts)
    if len(features) > char_budget:
        features = features[:char_budget] + ELLIPSIS
    return features


def build_prompt(
    user: int,
    matrix: InteractionMatrix,
    catalog: ItemCatalog,
    knowledge: str,
    mode: str,
    item_char_budget: int = DEFAULT_ITEM_CHAR_BUDGET,
    max_items: int = DEFAULT_MAX_ITEMS,
) -> AuditPrompt:
    """Assemble the audit prompt for one user.

    The newest max_items history entries are kept (oldest dropped) and each
    item's features are budget-truncated. Every referenced item must resolve
    in the catalog.
    """
    if not knowledge:
        raise ConfigError("prior knowledge text must be non-empty")
    history = matrix.user_history(user)
    if history.size == 0:
        raise ValueError(f"user {user} has no interactions to audit")
    if history.size > max_items:
        history = history[-max_items:]

    segments = []
    for k, item_idx in enumerate(history, start=1):
        record = catalog.get(matrix.item_ids[int(item_idx)])
        segments.append(f"Item_{k} ({render_item_features(record, item_char_budget)})")
    user_text = "; ".join(segments) + "."

    system_text = (
        _read_template("system.txt")
        .replace("{prior_knowledge}", knowledge)
        .replace("{judgment_format}", judgment_format_text(mode))
        .replace("{response_template}", response_template_text(mode))
        .strip()
    )
    return AuditPrompt(system_text=system_text, user_text=user_text)
