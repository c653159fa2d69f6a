"""Composite reward scoring and fine-tuning data export.

Each candidate output earns four components: a structure reward for strict
template conformance, a clarity reward for enumerated reasoning steps, a
consistency penalty when the reasoning's final verdict contradicts the
answer, and an asymmetric task reward that penalizes missed fakes harder
than false alarms. Group advantages subtract the group-mean baseline, with
optional per-group standard-deviation normalization. The policy update
itself belongs to an external trainer consuming the exported records.
"""

from __future__ import annotations

import json
import logging
import math
import re
import zlib
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .attacks import AttackConfig, run_attack
from .audit.parsers import FAKE, REAL, is_strict_label_format, parse_label_response
from .audit.prompts import LABEL_MODE, AuditPrompt, build_prompt
from .dataset import InteractionMatrix, ItemCatalog
from .errors import ConfigError, DatasetError, ResponseParseError, TransportError

logger = logging.getLogger(__name__)

# Enumerated step tokens: an integer followed by a dot and whitespace (or
# end of text), not glued to a word or a decimal like "2.5".
_STEP_RE = re.compile(r"(?<![\w.])(\d+)\.(?=\s|$)")
_VERDICT_RE = re.compile(r"\b(real|genuine|fake)\b", re.IGNORECASE)


@dataclass(frozen=True)
class RewardConfig:
    r_format_value: float = 0.5
    r_clarity_value: float = 0.25
    r_consist_penalty: float = 0.5
    r1: float = 1.0
    r2: float = 2.0
    normalize_std: bool = True

    def __post_init__(self):
        values = (self.r_format_value, self.r_clarity_value, self.r_consist_penalty, self.r1, self.r2)
        if not all(math.isfinite(v) for v in values):
            raise ConfigError("reward component magnitudes must be finite")
        if not self.r2 > self.r1 > 0:
            raise ConfigError(f"need r2 > r1 > 0, got r1={self.r1}, r2={self.r2}")


def score_format(output: str, cfg: RewardConfig) -> float:
    """Full reward only when the whole output is exactly the two blocks."""
    return cfg.r_format_value if is_strict_label_format(output) else 0.0


def _steps_ascending_from_one(think: str) -> bool:
    numbers = [int(m.group(1)) for m in _STEP_RE.finditer(think)]
    return len(numbers) >= 2 and numbers == list(range(1, len(numbers) + 1))


def score_clarity(output: str, cfg: RewardConfig) -> float:
    """Reward enumerated reasoning: steps "1. ... 2. ..." ascending from 1."""
    try:
        think, _ = parse_label_response(output)
    except ResponseParseError:
        return 0.0
    return cfg.r_clarity_value if _steps_ascending_from_one(think) else 0.0


def _final_think_verdict(think: str) -> str | None:
    last = None
    for match in _VERDICT_RE.finditer(think):
        word = match.group(1).lower()
        last = FAKE if word == "fake" else REAL
    return last


def score_consistency(output: str, cfg: RewardConfig) -> float:
    """Penalty when the reasoning's last verdict keyword contradicts the answer.

    The keyword scan maps real/genuine to Real and fake to Fake,
    case-insensitively; with no verdict keyword in the reasoning there is no
    detectable contradiction and no penalty.
    """
    try:
        think, answer = parse_label_response(output)
    except ResponseParseError:
        return 0.0
    verdict = _final_think_verdict(think)
    if verdict is None or verdict == answer:
        return 0.0
    return -cfg.r_consist_penalty


def score_task(output: str, ground_truth: str, cfg: RewardConfig) -> float:
    """Asymmetric correctness reward; an unparseable label counts as wrong."""
    if ground_truth not in (REAL, FAKE):
        raise ValueError(f"ground_truth must be 'Real' or 'Fake', got {ground_truth!r}")
    try:
        _, predicted = parse_label_response(output)
    except ResponseParseError:
        predicted = None
    if predicted == ground_truth:
        return cfg.r1
    return -cfg.r1 if ground_truth == REAL else -cfg.r2


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: float
    r_clarity: float
    r_consist: float
    r_task: float
    composite: float
    parse_ok: bool
    answer_label: str | None

    def components(self) -> dict:
        return {
            "r_format": self.r_format,
            "r_clarity": self.r_clarity,
            "r_consist": self.r_consist,
            "r_task": self.r_task,
        }


def composite_reward(output: str, ground_truth: str, cfg: RewardConfig) -> RewardBreakdown:
    """All four components; the composite is their exact sum."""
    r_format = score_format(output, cfg)
    r_clarity = score_clarity(output, cfg)
    r_consist = score_consistency(output, cfg)
    r_task = score_task(output, ground_truth, cfg)
    try:
        _, answer = parse_label_response(output)
        parse_ok = True
    except ResponseParseError:
        answer = None
        parse_ok = False
    return RewardBreakdown(
        r_format=r_format,
        r_clarity=r_clarity,
        r_consist=r_consist,
        r_task=r_task,
        composite=r_format + r_clarity + r_consist + r_task,
        parse_ok=parse_ok,
        answer_label=answer,
    )


def group_advantages(rewards: Sequence[float], normalize_std: bool = False) -> list[float]:
    """Rewards minus the group mean, optionally divided by the group std.

    The std is the population standard deviation; groups with std below
    1e-12 skip the division (all advantages are then 0 anyway).
    """
    if len(rewards) < 2:
        raise ValueError(f"advantage groups need >= 2 rewards, got {len(rewards)}")
    arr = np.asarray(rewards, dtype=np.float64)
    adv = arr - arr.mean()
    if normalize_std:
        std = float(arr.std())
        if std > 1e-12:
            adv = adv / std
    return [float(a) for a in adv]


@dataclass(frozen=True)
class RolloutGroup:
    query_id: str
    outputs: list[str]
    ground_truth: str
    breakdowns: list[RewardBreakdown]
    rewards: list[float]
    advantages: list[float]  # group-mean baseline
    advantages_normalized: list[float]

    def __post_init__(self):
        if not (len(self.outputs) == len(self.rewards) == len(self.advantages) >= 2):
            raise ValueError("rollout group needs >= 2 scored outputs")
        if abs(sum(self.advantages)) > 1e-9:
            raise ValueError("mean-baseline advantages must sum to 0")


class CompletionSampler(Protocol):
    def sample(self, prompt: AuditPrompt, n: int, temperature: float) -> list[str]: ...


class ScriptedSampler:
    """Returns pre-canned completions; fixture plumbing for offline runs."""

    def __init__(self, outputs: Sequence[str]):
        self._outputs = list(outputs)

    def sample(self, prompt: AuditPrompt, n: int, temperature: float) -> list[str]:
        return self._outputs[:n]


class HttpSampler:
    """Samples completions from a chat endpoint, one request per candidate."""

    def __init__(self, endpoint):
        from .audit.client import resolve_auth_token

        self.endpoint = endpoint
        self._token = resolve_auth_token(endpoint)

    def sample(self, prompt: AuditPrompt, n: int, temperature: float) -> list[str]:
        from concurrent.futures import ThreadPoolExecutor

        from .audit.client import query_auditor

        def one(_: int) -> str | None:
            try:
                return query_auditor(self.endpoint, prompt, temperature=temperature, token=self._token)
            except TransportError as exc:
                logger.warning("rollout request failed: %s", exc)
                return None

        with ThreadPoolExecutor(max_workers=self.endpoint.max_concurrency) as pool:
            results = list(pool.map(one, range(n)))
        return [r for r in results if r is not None]


def collect_rollouts(
    sampler: CompletionSampler,
    query_id: str,
    prompt: AuditPrompt,
    group_size: int,
    ground_truth: str,
    cfg: RewardConfig,
    temperature: float = 0.8,
) -> RolloutGroup:
    """Sample a group of candidate outputs and score each one.

    Missing completions truncate the group with a warning; fewer than 2
    usable outputs is an error.
    """
    if group_size < 2:
        raise ValueError(f"group_size must be >= 2, got {group_size}")
    if temperature <= 0:
        raise ValueError("rollout sampling requires temperature > 0")
    outputs = sampler.sample(prompt, group_size, temperature)
    if len(outputs) < group_size:
        logger.warning(
            "query %s: obtained %d/%d completions, truncating group",
            query_id, len(outputs), group_size,
        )
    if len(outputs) < 2:
        raise TransportError(f"query {query_id}: only {len(outputs)} completions obtained")
    breakdowns = [composite_reward(o, ground_truth, cfg) for o in outputs]
    rewards = [b.composite for b in breakdowns]
    return RolloutGroup(
        query_id=query_id,
        outputs=list(outputs),
        ground_truth=ground_truth,
        breakdowns=breakdowns,
        rewards=rewards,
        advantages=group_advantages(rewards, normalize_std=False),
        advantages_normalized=group_advantages(rewards, normalize_std=True),
    )


def rollout_record(group: RolloutGroup, prompt: AuditPrompt, cfg: RewardConfig) -> dict:
    """JSON-ready record with both advantage modes for the external trainer."""
    return {
        "query_id": group.query_id,
        "prompt": {"system": prompt.system_text, "user": prompt.user_text},
        "ground_truth": group.ground_truth,
        "outputs": [
            {
                "text": out,
                "rewards": bd.components(),
                "composite": bd.composite,
                "advantage": adv_n if cfg.normalize_std else adv,
                "advantage_mean_baseline": adv,
                "advantage_normalized": adv_n,
            }
            for out, bd, adv, adv_n in zip(
                group.outputs, group.breakdowns, group.advantages, group.advantages_normalized
            )
        ],
        "config_snapshot": {
            "r_format_value": cfg.r_format_value,
            "r_clarity_value": cfg.r_clarity_value,
            "r_consist_penalty": cfg.r_consist_penalty,
            "r1": cfg.r1,
            "r2": cfg.r2,
            "normalize_std": cfg.normalize_std,
        },
    }


# -- fine-tuning corpus ---------------------------------------------------------


@dataclass(frozen=True)
class CorpusRecord:
    query_id: str
    ground_truth: str  # "Real" or "Fake"
    prompt_system: str
    prompt_user: str
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "ground_truth": self.ground_truth,
            "prompt": {"system": self.prompt_system, "user": self.prompt_user},
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusRecord":
        return cls(
            query_id=obj["query_id"],
            ground_truth=obj["ground_truth"],
            prompt_system=obj["prompt"]["system"],
            prompt_user=obj["prompt"]["user"],
            provenance=dict(obj.get("provenance", {})),
        )


@dataclass(frozen=True)
class CorpusDataset:
    """One source dataset for corpus building: its training split + catalog."""

    name: str
    train: InteractionMatrix
    catalog: ItemCatalog
    knowledge: str


def build_rft_corpus(
    datasets: Sequence[CorpusDataset],
    injectors: Sequence[str],
    regimes: Sequence[str],
    seed: int,
    attack_base: AttackConfig | None = None,
    percentile_cutoff: float = 0.2,
    mode: str = LABEL_MODE,
    item_char_budget: int = 300,
    max_items: int = 40,
) -> list[CorpusRecord]:
    """One malicious group per (dataset, injector, regime) cell, class-balanced.

    Each cell injects an attack on the dataset's training split; the fake
    users become Fake records and an equal number of genuine users, sampled
    without replacement within each dataset, become Real records.
    """
    if not injectors:
        raise ConfigError("at least one injector is required")
    if not regimes:
        raise ConfigError("at least one target regime is required")
    if attack_base is None:
        attack_base = AttackConfig()

    records: list[CorpusRecord] = []
    cell = 0
    for ds in datasets:
        used_genuine: set[int] = set()
        genuine_rng = np.random.default_rng(
            np.random.SeedSequence((seed, zlib.crc32(ds.name.encode("utf-8"))))
        )
        for strategy in injectors:
            for regime in regimes:
                cell_seed = int(np.random.SeedSequence((seed, cell)).generate_state(1)[0])
                cell += 1
                cfg = replace(
                    attack_base,
                    strategy=strategy,
                    target_popularity_regime=regime,
                    seed=cell_seed,
                )
                poisoned = run_attack(ds.train, cfg, percentile_cutoff=percentile_cutoff)
                fakes = poisoned.labels.fake_indices()
                genuine_pool = [
                    u for u in range(ds.train.n_users)
                    if u not in used_genuine and ds.train.user_items(u).size > 0
                ]
                if len(genuine_pool) < len(fakes):
                    raise DatasetError(
                        f"dataset {ds.name!r}: need {len(fakes)} genuine users per cell, "
                        f"only {len(genuine_pool)} unused remain"
                    )
                picked = genuine_rng.choice(len(genuine_pool), size=len(fakes), replace=False)
                genuine_users = [genuine_pool[int(p)] for p in picked]
                used_genuine.update(genuine_users)

                def record_for(user: int, label: str) -> CorpusRecord:
                    prompt = build_prompt(
                        user, poisoned.matrix, ds.catalog, ds.knowledge, mode,
                        item_char_budget=item_char_budget, max_items=max_items,
                    )
                    return CorpusRecord(
                        query_id=f"{ds.name}/{strategy}/{regime}/{poisoned.matrix.user_ids[user]}",
                        ground_truth=label,
                        prompt_system=prompt.system_text,
                        prompt_user=prompt.user_text,
                        provenance={
                            "dataset": ds.name,
                            "strategy": strategy,
                            "regime": regime,
                            "seed": cell_seed,
                            "user_id": poisoned.matrix.user_ids[user],
                        },
                    )

                for u in fakes:
                    records.append(record_for(u, FAKE))
                for u in genuine_users:
                    records.append(record_for(u, REAL))
    return records


def write_rft_corpus(records: Sequence[CorpusRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def load_rft_corpus(path) -> list[CorpusRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(CorpusRecord.from_json(json.loads(line)))
    return records
