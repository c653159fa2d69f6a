"""Fake-profile injection under fixed budget rules.

Two heuristic injectors ship by default (random and bandwagon); further
strategies plug in through :func:`register_injector`. Every injector is a
pure function of (matrix, targets, config) with per-fake-user derived
sub-seeds, so regenerating with the same seed is bit-identical even if
profiles are built in parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dataset import (
    InteractionMatrix,
    LabeledUsers,
    PopularityTable,
    compute_popularity,
)
from .errors import ConfigError, DatasetError

REGIMES = ("unpopular", "popular", "random")


@dataclass(frozen=True)
class AttackConfig:
    strategy: str = "random"
    n_targets: int = 5
    fake_fraction: float = 0.01
    quota: int | None = None  # None resolves to round(mean genuine profile length)
    target_popularity_regime: str = "random"
    seed: int = 0
    # bandwagon-only knobs
    bandwagon_pool_fraction: float = 0.10
    bandwagon_filler_ratio: float = 0.5

    def __post_init__(self):
        if self.n_targets < 1:
            raise ConfigError(f"n_targets must be >= 1, got {self.n_targets}")
        if not 0 < self.fake_fraction <= 0.1:
            raise ConfigError(f"fake_fraction must be in (0, 0.1], got {self.fake_fraction}")
        if self.quota is not None and self.quota < self.n_targets:
            raise ConfigError(f"quota {self.quota} smaller than n_targets {self.n_targets}")
        if self.target_popularity_regime not in REGIMES:
            raise ConfigError(f"unknown target regime {self.target_popularity_regime!r}")
        if not 0 < self.bandwagon_pool_fraction < 1:
            raise ConfigError("bandwagon_pool_fraction must be in (0, 1)")
        if not 0 <= self.bandwagon_filler_ratio <= 1:
            raise ConfigError("bandwagon_filler_ratio must be in [0, 1]")


class FakeProfile(NamedTuple):
    user_id: str
    items: np.ndarray  # item indices into the clean matrix's item space
    weights: np.ndarray


@dataclass(frozen=True)
class PoisonedDataset:
    """Clean matrix with fake rows appended at the tail plus ground truth."""

    matrix: InteractionMatrix
    labels: LabeledUsers
    targets: frozenset[int]
    attack_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.labels.n_users != self.matrix.n_users:
            raise DatasetError("label count does not match matrix users")
        fakes = self.labels.fake_indices()
        n_fake = len(fakes)
        if fakes != list(range(self.matrix.n_users - n_fake, self.matrix.n_users)):
            raise DatasetError("fake users must occupy the tail index range")
        quota = self.attack_meta.get("quota")
        for u in fakes:
            items = set(int(x) for x in self.matrix.user_items(u))
            if self.targets and not self.targets.issubset(items):
                raise DatasetError(f"fake user {u} does not interact with all targets")
            if quota is not None and len(items) != quota:
                raise DatasetError(f"fake user {u} has {len(items)} interactions, expected quota {quota}")

    @property
    def fake_user_ids(self) -> list[str]:
        return [self.matrix.user_ids[u] for u in self.labels.fake_indices()]

    def manifest(self) -> dict:
        """Attack manifest consumed by evaluation as ground truth."""
        meta = dict(self.attack_meta)
        meta.update(
            {
                "targets": sorted(self.matrix.item_ids[t] for t in self.targets),
                "fake_user_ids": self.fake_user_ids,
            }
        )
        return meta

    def save_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def labels_from_manifest(manifest: dict, matrix: InteractionMatrix) -> LabeledUsers:
    index = matrix.user_index
    try:
        fakes = [index[uid] for uid in manifest["fake_user_ids"]]
    except KeyError as exc:
        raise DatasetError(f"manifest fake user {exc.args[0]!r} not present in matrix") from None
    return LabeledUsers(matrix.n_users, fakes)


def targets_from_manifest(manifest: dict, matrix: InteractionMatrix) -> frozenset[int]:
    index = matrix.item_index
    try:
        return frozenset(index[iid] for iid in manifest["targets"])
    except KeyError as exc:
        raise DatasetError(f"manifest target item {exc.args[0]!r} not present in matrix") from None


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resolve_quota(matrix: InteractionMatrix, cfg: AttackConfig) -> int:
    """Fixed per-fake-user interaction quota; defaults to the genuine mean."""
    quota = cfg.quota
    if quota is None:
        quota = _round_half_up(float(matrix.profile_lengths().mean()))
    if quota < cfg.n_targets:
        raise ConfigError(f"resolved quota {quota} smaller than n_targets {cfg.n_targets}")
    if quota > matrix.n_items:
        raise ConfigError(f"quota {quota} exceeds item count {matrix.n_items}")
    return int(quota)


def n_fake_users(matrix: InteractionMatrix, cfg: AttackConfig) -> int:
    return _round_half_up(cfg.fake_fraction * matrix.n_users)


def select_targets(
    pop: PopularityTable, regime: str, k: int, seed: int
) -> frozenset[int]:
    """Sample k target items from the regime's popularity pool."""
    if regime not in REGIMES:
        raise ConfigError(f"unknown target regime {regime!r}")
    if k > pop.n_items:
        raise ConfigError(f"cannot select {k} targets from {pop.n_items} items")
    if regime == "unpopular":
        pool = sorted(pop.unpopular_set)
    elif regime == "popular":
        pool = sorted(pop.popular_pool(pop.percentile_cutoff))
    else:
        pool = list(range(pop.n_items))
    if len(pool) < k:
        raise ConfigError(f"{regime} pool has only {len(pool)} items, need {k}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=k, replace=False)
    return frozenset(pool[int(p)] for p in picked)


def _fake_user_ids(matrix: InteractionMatrix, n_fake: int) -> list[str]:
    existing = set(matrix.user_ids)
    ids = [f"fake_{k:05d}" for k in range(n_fake)]
    clash = existing.intersection(ids)
    if clash:
        raise DatasetError(f"fake user id already present in matrix: {sorted(clash)[:3]}")
    return ids


def _per_user_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _random_profiles(
    matrix: InteractionMatrix, targets: frozenset[int], cfg: AttackConfig
) -> list[FakeProfile]:
    quota = resolve_quota(matrix, cfg)
    n_fake = n_fake_users(matrix, cfg)
    rating = matrix.max_weight()
    target_list = np.array(sorted(targets), dtype=np.int64)
    non_targets = np.setdiff1d(np.arange(matrix.n_items), target_list)
    n_filler = quota - target_list.size
    if n_filler > non_targets.size:
        raise ConfigError(f"quota {quota} needs {n_filler} filler items but only {non_targets.size} exist")
    profiles = []
    for uid, rng in zip(_fake_user_ids(matrix, n_fake), _per_user_rngs(cfg.seed, n_fake)):
        filler = rng.choice(non_targets, size=n_filler, replace=False)
        items = np.concatenate([target_list, filler])
        profiles.append(FakeProfile(uid, items, np.full(items.size, rating)))
    return profiles


def _bandwagon_profiles(
    matrix: InteractionMatrix, targets: frozenset[int], cfg: AttackConfig
) -> list[FakeProfile]:
    quota = resolve_quota(matrix, cfg)
    n_fake = n_fake_users(matrix, cfg)
    rating = matrix.max_weight()
    target_list = np.array(sorted(targets), dtype=np.int64)

    pop = compute_popularity(matrix, percentile_cutoff=cfg.bandwagon_pool_fraction)
    pool = np.array(
        [i for i in pop.popular_pool(cfg.bandwagon_pool_fraction) if i not in targets],
        dtype=np.int64,
    )
    if pool.size == 0:
        raise ConfigError("bandwagon popular pool is empty after removing targets")

    n_filler = quota - target_list.size
    n_popular = _round_half_up(cfg.bandwagon_filler_ratio * n_filler)
    n_random = n_filler - n_popular
    if n_popular > pool.size:
        raise ConfigError(f"bandwagon pool has {pool.size} items, need {n_popular} popular fillers")

    # Random fillers come from outside the popular pool, so the
    # popular/random split of each profile is exactly the configured ratio.
    outside = np.setdiff1d(np.arange(matrix.n_items), np.concatenate([target_list, pool]))
    if n_random > outside.size:
        raise ConfigError(f"quota {quota} needs {n_random} random fillers but only {outside.size} exist")

    profiles = []
    for uid, rng in zip(_fake_user_ids(matrix, n_fake), _per_user_rngs(cfg.seed, n_fake)):
        popular = rng.choice(pool, size=n_popular, replace=False)
        rand_filler = rng.choice(outside, size=n_random, replace=False)
        items = np.concatenate([target_list, popular, rand_filler])
        profiles.append(FakeProfile(uid, items, np.full(items.size, rating)))
    return profiles


Injector = Callable[[InteractionMatrix, frozenset, AttackConfig], list]
_INJECTORS: dict[str, Injector] = {}


def register_injector(name: str, fn: Injector) -> None:
    if name in _INJECTORS:
        raise ConfigError(f"injector {name!r} already registered")
    _INJECTORS[name] = fn


def get_injector(name: str) -> Injector:
    try:
        return _INJECTORS[name]
    except KeyError:
        raise ConfigError(
            f"unknown attack strategy {name!r}; registered: {sorted(_INJECTORS)}"
        ) from None


register_injector("random", _random_profiles)
register_injector("bandwagon", _bandwagon_profiles)


def merge_and_label(
    matrix: InteractionMatrix,
    fake_profiles: Sequence[FakeProfile] | InteractionMatrix,
    targets: frozenset[int] = frozenset(),
    attack_meta: dict | None = None,
) -> PoisonedDataset:
    """Append fake rows to the matrix and label exactly them as Fake.

    Fake interactions may come as profiles (item indices into the clean item
    space) or as a second matrix, whose item-id space must match exactly.
    """
    if isinstance(fake_profiles, InteractionMatrix):
        if fake_profiles.item_ids != matrix.item_ids:
            raise DatasetError("item id spaces differ between matrix and fake matrix")
        fake_csr = fake_profiles.csr()
        fake_profiles = [
            FakeProfile(
                fake_profiles.user_ids[u],
                fake_csr.indices[fake_csr.indptr[u] : fake_csr.indptr[u + 1]].astype(np.int64),
                fake_csr.data[fake_csr.indptr[u] : fake_csr.indptr[u + 1]].astype(np.float64),
            )
            for u in range(fake_profiles.n_users)
        ]

    base_u, base_i, base_w, base_ts = [], [], [], []
    for u, i, w, ts in matrix.entries():
        base_u.append(u)
        base_i.append(i)
        base_w.append(w)
        base_ts.append(ts)
    u_parts = [np.array(base_u, dtype=np.int64)]
    i_parts = [np.array(base_i, dtype=np.int64)]
    w_parts = [np.array(base_w, dtype=np.float64)]
    ts_parts = [np.array(base_ts, dtype=np.float64)]
    user_ids = list(matrix.user_ids)
    for offset, prof in enumerate(fake_profiles):
        if prof.user_id in matrix.user_index or prof.user_id in user_ids[matrix.n_users :]:
            raise DatasetError(f"fake user id {prof.user_id!r} collides with an existing user")
        items = np.asarray(prof.items, dtype=np.int64)
        if items.size and (items.min() < 0 or items.max() >= matrix.n_items):
            raise DatasetError(f"fake profile {prof.user_id!r} references out-of-range items")
        user_ids.append(prof.user_id)
        u_parts.append(np.full(items.size, matrix.n_users + offset, dtype=np.int64))
        i_parts.append(items)
        w_parts.append(np.asarray(prof.weights, dtype=np.float64))
        ts_parts.append(np.full(items.size, np.nan))

    # Fake profiles carry no timestamps; clean entries keep theirs.
    merged = InteractionMatrix(
        user_ids,
        matrix.item_ids,
        np.concatenate(u_parts),
        np.concatenate(i_parts),
        np.concatenate(w_parts),
        np.concatenate(ts_parts),
    )
    labels = LabeledUsers(
        merged.n_users, range(matrix.n_users, merged.n_users)
    )
    meta = dict(attack_meta or {})
    if "quota" not in meta:
        lengths = {int(np.asarray(p.items).size) for p in fake_profiles}
        if len(lengths) == 1:
            meta["quota"] = lengths.pop()
    return PoisonedDataset(matrix=merged, labels=labels, targets=targets, attack_meta=meta)


def run_attack(
    matrix: InteractionMatrix,
    cfg: AttackConfig,
    percentile_cutoff: float = 0.2,
    targets: frozenset[int] | None = None,
) -> PoisonedDataset:
    """Select targets, generate fake profiles per the strategy, and merge."""
    if targets is None:
        pop = compute_popularity(matrix, percentile_cutoff=percentile_cutoff)
        targets = select_targets(pop, cfg.target_popularity_regime, cfg.n_targets, cfg.seed)
    injector = get_injector(cfg.strategy)
    profiles = injector(matrix, targets, cfg)
    meta = {
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "quota": resolve_quota(matrix, cfg),
        "fake_fraction": cfg.fake_fraction,
        "n_targets": cfg.n_targets,
        "target_popularity_regime": cfg.target_popularity_regime,
    }
    return merge_and_label(matrix, profiles, targets=targets, attack_meta=meta)


def inject_random_attack(
    matrix: InteractionMatrix, targets: frozenset[int], cfg: AttackConfig
) -> PoisonedDataset:
    """Fake users rate every target at max weight plus uniform random filler."""
    cfg = replace(cfg, strategy="random")
    return merge_and_label(
        matrix,
        _random_profiles(matrix, targets, cfg),
        targets=targets,
        attack_meta={"strategy": "random", "seed": cfg.seed, "quota": resolve_quota(matrix, cfg)},
    )


def inject_bandwagon_attack(
    matrix: InteractionMatrix, targets: frozenset[int], cfg: AttackConfig
) -> PoisonedDataset:
    """Fake users rate targets plus popular bandwagon items plus random filler."""
    cfg = replace(cfg, strategy="bandwagon")
    return merge_and_label(
        matrix,
        _bandwagon_profiles(matrix, targets, cfg),
        targets=targets,
        attack_meta={"strategy": "bandwagon", "seed": cfg.seed, "quota": resolve_quota(matrix, cfg)},
    )
