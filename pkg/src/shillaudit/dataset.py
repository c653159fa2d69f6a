"""Interaction-matrix and item-catalog loading, popularity stats, and splits.

Interactions are implicit feedback: any rating > 0 counts as an interaction,
and the raw rating is retained as the entry weight so that attack injectors
can write explicit ratings. All container types are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DatasetError

logger = logging.getLogger(__name__)

INTERACTION_COLUMNS = ("user_id", "item_id", "rating")
TIMESTAMP_COLUMN = "timestamp"


def _sort_key(external_id: str):
    # Numeric ids sort numerically, everything else lexicographically after.
    if external_id.isdigit():
        return (0, int(external_id), external_id)
    return (1, 0, external_id)


class InteractionMatrix:
    """Sparse user x item implicit-feedback matrix with stable id maps.

    Entries are stored in canonical (user_index, item_index) order. Index
    assignment in :meth:`from_records` depends only on the set of external
    ids, never on row order. Timestamps are optional and kept per entry
    (NaN where missing).
    """

    def __init__(
        self,
        user_ids: Sequence[str],
        item_ids: Sequence[str],
        user_idx: np.ndarray,
        item_idx: np.ndarray,
        weights: np.ndarray,
        timestamps: np.ndarray | None = None,
    ):
        self._user_ids = tuple(str(u) for u in user_ids)
        self._item_ids = tuple(str(i) for i in item_ids)
        if len(set(self._user_ids)) != len(self._user_ids):
            raise DatasetError("duplicate external user ids")
        if len(set(self._item_ids)) != len(self._item_ids):
            raise DatasetError("duplicate external item ids")

        u = np.asarray(user_idx, dtype=np.int64)
        i = np.asarray(item_idx, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)
        if timestamps is None:
            ts = np.full(u.shape, np.nan, dtype=np.float64)
        else:
            ts = np.asarray(timestamps, dtype=np.float64)
        if not (u.shape == i.shape == w.shape == ts.shape):
            raise DatasetError("entry arrays must have identical length")
        if u.size:
            if u.min() < 0 or u.max() >= len(self._user_ids):
                raise DatasetError("user index out of range")
            if i.min() < 0 or i.max() >= len(self._item_ids):
                raise DatasetError("item index out of range")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DatasetError("entry weights must be finite and strictly positive")

        order = np.lexsort((i, u))
        self._u = u[order]
        self._i = i[order]
        self._w = w[order]
        self._ts = ts[order]
        pairs = self._u * len(self._item_ids) + self._i
        if pairs.size and np.any(np.diff(pairs) == 0):
            raise DatasetError("duplicate (user, item) pairs")

        self._user_index = {uid: k for k, uid in enumerate(self._user_ids)}
        self._item_index = {iid: k for k, iid in enumerate(self._item_ids)}
        self._csr: sp.csr_matrix | None = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_records(
        cls, records: Iterable[tuple[str, str, float, float | None]]
    ) -> "InteractionMatrix":
        """Build a matrix from (user_id, item_id, weight, timestamp?) rows.

        Duplicate (user, item) rows collapse to the one with the largest
        (weight, timestamp) pair, so shuffled input produces an identical
        matrix.
        """
        best: dict[tuple[str, str], tuple[float, float]] = {}
        for user_id, item_id, weight, ts in records:
            key = (str(user_id), str(item_id))
            rank = (float(weight), -math.inf if ts is None else float(ts))
            prev = best.get(key)
            if prev is None or rank > prev:
                best[key] = rank
        if not best:
            raise DatasetError("empty dataset: no interactions with rating > 0")

        user_ids = sorted({u for u, _ in best}, key=_sort_key)
        item_ids = sorted({i for _, i in best}, key=_sort_key)
        uindex = {u: k for k, u in enumerate(user_ids)}
        iindex = {i: k for k, i in enumerate(item_ids)}
        n = len(best)
        u = np.empty(n, dtype=np.int64)
        i = np.empty(n, dtype=np.int64)
        w = np.empty(n, dtype=np.float64)
        ts_arr = np.empty(n, dtype=np.float64)
        for k, ((uid, iid), (weight, ts)) in enumerate(best.items()):
            u[k] = uindex[uid]
            i[k] = iindex[iid]
            w[k] = weight
            ts_arr[k] = np.nan if ts == -math.inf else ts
        return cls(user_ids, item_ids, u, i, w, ts_arr)

    # -- basic accessors ---------------------------------------------------

    @property
    def n_users(self) -> int:
        return len(self._user_ids)

    @property
    def n_items(self) -> int:
        return len(self._item_ids)

    @property
    def nnz(self) -> int:
        return int(self._u.size)

    @property
    def user_ids(self) -> tuple[str, ...]:
        return self._user_ids

    @property
    def item_ids(self) -> tuple[str, ...]:
        return self._item_ids

    @property
    def user_index(self) -> dict[str, int]:
        return dict(self._user_index)

    @property
    def item_index(self) -> dict[str, int]:
        return dict(self._item_index)

    @property
    def has_timestamps(self) -> bool:
        return bool(np.any(~np.isnan(self._ts)))

    def entries(self) -> Iterator[tuple[int, int, float, float]]:
        """Yield (user_index, item_index, weight, timestamp_or_nan)."""
        for k in range(self._u.size):
            yield int(self._u[k]), int(self._i[k]), float(self._w[k]), float(self._ts[k])

    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            m = sp.csr_matrix(
                (self._w, (self._u, self._i)), shape=(self.n_users, self.n_items)
            )
            m.sort_indices()  # guarantee alignment with the canonical entry order
            self._csr = m
        return self._csr

    def user_items(self, user: int) -> np.ndarray:
        """Item indices of one user's interactions, ascending."""
        m = self.csr()
        return m.indices[m.indptr[user] : m.indptr[user + 1]].astype(np.int64)

    def user_history(self, user: int) -> np.ndarray:
        """Item indices ordered by timestamp then item index.

        Entries without a timestamp sort after timestamped ones. Relies on
        the canonical (user, item) entry order matching CSR layout.
        """
        m = self.csr()
        lo, hi = m.indptr[user], m.indptr[user + 1]
        items = self._i[lo:hi]
        ts = self._ts[lo:hi]
        key_ts = np.where(np.isnan(ts), np.inf, ts)
        order = np.lexsort((items, key_ts))
        return items[order].astype(np.int64)

    def profile_lengths(self) -> np.ndarray:
        m = self.csr()
        return np.diff(m.indptr).astype(np.int64)

    def max_weight(self) -> float:
        return float(self._w.max())

    def binarized_dense(self) -> np.ndarray:
        """Dense 0/1 matrix of interaction presence (float64)."""
        out = np.zeros((self.n_users, self.n_items), dtype=np.float64)
        out[self._u, self._i] = 1.0
        return out

    def weighted_dense(self) -> np.ndarray:
        out = np.zeros((self.n_users, self.n_items), dtype=np.float64)
        out[self._u, self._i] = self._w
        return out

    # -- derived matrices ----------------------------------------------------

    def remove_users(self, user_indices: Iterable[int]) -> "InteractionMatrix":
        """New matrix without the given users; survivors keep relative order."""
        drop = set(int(x) for x in user_indices)
        keep = [u for u in range(self.n_users) if u not in drop]
        remap = {old: new for new, old in enumerate(keep)}
        mask = np.isin(self._u, keep)
        new_u = np.array([remap[int(x)] for x in self._u[mask]], dtype=np.int64)
        return InteractionMatrix(
            [self._user_ids[k] for k in keep],
            self._item_ids,
            new_u,
            self._i[mask],
            self._w[mask],
            self._ts[mask],
        )

    def _subset(self, mask: np.ndarray) -> "InteractionMatrix":
        return InteractionMatrix(
            self._user_ids, self._item_ids,
            self._u[mask], self._i[mask], self._w[mask], self._ts[mask],
        )

    # -- serialization -------------------------------------------------------

    def to_records(self) -> Iterator[tuple[str, str, float, float | None]]:
        for u, i, w, ts in self.entries():
            yield (
                self._user_ids[u],
                self._item_ids[i],
                w,
                None if math.isnan(ts) else ts,
            )

    def save_csv(self, path) -> None:
        with_ts = self.has_timestamps
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            header = list(INTERACTION_COLUMNS) + ([TIMESTAMP_COLUMN] if with_ts else [])
            writer.writerow(header)
            for user_id, item_id, w, ts in self.to_records():
                row = [user_id, item_id, _format_number(w)]
                if with_ts:
                    row.append("" if ts is None else _format_number(ts))
                writer.writerow(row)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionMatrix):
            return NotImplemented
        return (
            self._user_ids == other._user_ids
            and self._item_ids == other._item_ids
            and np.array_equal(self._u, other._u)
            and np.array_equal(self._i, other._i)
            and np.array_equal(self._w, other._w)
            and np.array_equal(self._ts, other._ts, equal_nan=True)
        )

    def __repr__(self) -> str:
        return (
            f"InteractionMatrix(n_users={self.n_users}, n_items={self.n_items}, "
            f"nnz={self.nnz})"
        )


def _format_number(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def load_interactions(path, format: str = "csv") -> InteractionMatrix:
    """Load interactions from a CSV (header required) or JSONL file.

    Rows with rating <= 0 binarize to "no interaction" and are dropped.
    Duplicate (user, item) rows keep the maximum weight.
    """
    if format == "csv":
        records = _read_interactions_csv(path)
    elif format == "jsonl":
        records = _read_interactions_jsonl(path)
    else:
        raise DatasetError(f"unknown interactions format: {format!r}")
    return InteractionMatrix.from_records(records)


def _read_interactions_csv(path) -> list[tuple[str, str, float, float | None]]:
    records = []
    dropped = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty dataset (no header row)") from None
        header = [h.strip() for h in header]
        for col in INTERACTION_COLUMNS:
            if col not in header:
                raise DatasetError(f"{path}: missing required column {col!r} in header")
        pos = {col: header.index(col) for col in header}
        has_ts = TIMESTAMP_COLUMN in pos
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(INTERACTION_COLUMNS):
                raise DatasetError(f"{path}:{lineno}: expected at least 3 fields, got {len(row)}")
            try:
                rating = float(row[pos["rating"]])
            except ValueError:
                raise DatasetError(
                    f"{path}:{lineno}: rating {row[pos['rating']]!r} is not a number"
                ) from None
            ts: float | None = None
            if has_ts and pos[TIMESTAMP_COLUMN] < len(row) and row[pos[TIMESTAMP_COLUMN]].strip():
                try:
                    ts = float(row[pos[TIMESTAMP_COLUMN]])
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: timestamp {row[pos[TIMESTAMP_COLUMN]]!r} is not a number"
                    ) from None
            if rating <= 0:
                dropped += 1
                continue
            records.append((row[pos["user_id"]].strip(), row[pos["item_id"]].strip(), rating, ts))
    if dropped:
        logger.warning("%s: dropped %d rows with rating <= 0", path, dropped)
    if not records:
        raise DatasetError(f"{path}: empty dataset (no rows with rating > 0)")
    return records


def _read_interactions_jsonl(path) -> list[tuple[str, str, float, float | None]]:
    records = []
    dropped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            for key in INTERACTION_COLUMNS:
                if key not in obj:
                    raise DatasetError(f"{path}:{lineno}: missing key {key!r}")
            try:
                rating = float(obj["rating"])
            except (TypeError, ValueError):
                raise DatasetError(f"{path}:{lineno}: rating {obj['rating']!r} is not a number") from None
            ts = obj.get(TIMESTAMP_COLUMN)
            if ts is not None:
                try:
                    ts = float(ts)
                except (TypeError, ValueError):
                    raise DatasetError(f"{path}:{lineno}: timestamp {ts!r} is not a number") from None
            if rating <= 0:
                dropped += 1
                continue
            records.append((str(obj["user_id"]), str(obj["item_id"]), rating, ts))
    if dropped:
        logger.warning("%s: dropped %d rows with rating <= 0", path, dropped)
    if not records:
        raise DatasetError(f"{path}: empty dataset (no rows with rating > 0)")
    return records


# -- item catalog ------------------------------------------------------------


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    description: str = ""
    extra_fields: dict[str, str] = field(default_factory=dict)


class ItemCatalog:
    """Item-side metadata keyed by external item id."""

    def __init__(self, records: Iterable[ItemRecord]):
        self._records: dict[str, ItemRecord] = {}
        for rec in records:
            if rec.item_id in self._records:
                raise DatasetError(f"duplicate catalog item id {rec.item_id!r}")
            if not rec.title:
                raise DatasetError(f"catalog item {rec.item_id!r} has an empty title")
            self._records[rec.item_id] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._records

    def get(self, item_id: str) -> ItemRecord:
        try:
            return self._records[item_id]
        except KeyError:
            raise DatasetError(f"item id {item_id!r} not present in catalog") from None

    def item_ids(self) -> list[str]:
        return list(self._records)

    def validate_against(self, matrix: InteractionMatrix) -> None:
        """Every item referenced by the matrix must resolve in the catalog."""
        missing = [iid for iid in matrix.item_ids if iid not in self._records]
        if missing:
            raise DatasetError(
                f"{len(missing)} matrix items missing from catalog, first: {missing[:5]}"
            )

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self._records.values():
                obj = {"id": rec.item_id, "title": rec.title, "description": rec.description}
                obj.update(rec.extra_fields)
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_item_catalog(path) -> ItemCatalog:
    """Load a JSONL catalog; unknown keys are preserved into extra_fields."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if "id" not in obj:
                raise DatasetError(f"{path}:{lineno}: record missing 'id'")
            item_id = str(obj["id"])
            title = obj.get("title")
            if not title:
                raise DatasetError(f"{path}:{lineno}: item {item_id!r} missing a non-empty title")
            extra = {
                k: v if isinstance(v, str) else json.dumps(v)
                for k, v in obj.items()
                if k not in ("id", "title", "description")
            }
            records.append(
                ItemRecord(
                    item_id=item_id,
                    title=str(title),
                    description=str(obj.get("description", "") or ""),
                    extra_fields=extra,
                )
            )
    return ItemCatalog(records)


# -- popularity ---------------------------------------------------------------


@dataclass(frozen=True)
class PopularityTable:
    """Per-item interaction counts plus the bottom-percentile item set.

    unpopular_set holds the ceil(percentile_cutoff * n_items) items with the
    lowest popularity; ties resolve by ascending item index.
    """

    pop: np.ndarray
    unpopular_set: frozenset[int]
    percentile_cutoff: float

    @property
    def n_items(self) -> int:
        return int(self.pop.size)

    def popular_pool(self, fraction: float) -> list[int]:
        """Top ceil(fraction * n_items) items by (popularity desc, index asc)."""
        if not 0 < fraction < 1:
            raise ValueError(f"fraction must be in (0, 1), got {fraction}")
        k = math.ceil(fraction * self.n_items)
        order = np.lexsort((np.arange(self.n_items), -self.pop))
        return [int(x) for x in order[:k]]


def compute_popularity(matrix: InteractionMatrix, percentile_cutoff: float = 0.2) -> PopularityTable:
    """Exact per-item interaction counts and the unpopular item set."""
    if not 0 < percentile_cutoff < 1:
        raise ValueError(f"percentile_cutoff must be in (0, 1), got {percentile_cutoff}")
    pop = np.zeros(matrix.n_items, dtype=np.int64)
    csr = matrix.csr()
    np.add.at(pop, csr.indices, 1)
    k = math.ceil(percentile_cutoff * matrix.n_items)
    order = np.lexsort((np.arange(matrix.n_items), pop))
    unpopular = frozenset(int(x) for x in order[:k])
    return PopularityTable(pop=pop, unpopular_set=unpopular, percentile_cutoff=percentile_cutoff)


# -- ground-truth labels -------------------------------------------------------


class UserLabel(Enum):
    GENUINE = "Genuine"
    FAKE = "Fake"


class LabeledUsers:
    """Ground-truth Genuine/Fake label per user index."""

    def __init__(self, n_users: int, fake_indices: Iterable[int]):
        self._is_fake = np.zeros(n_users, dtype=bool)
        for idx in fake_indices:
            if not 0 <= idx < n_users:
                raise DatasetError(f"fake user index {idx} out of range")
            self._is_fake[idx] = True

    @property
    def n_users(self) -> int:
        return int(self._is_fake.size)

    def label(self, user: int) -> UserLabel:
        return UserLabel.FAKE if self._is_fake[user] else UserLabel.GENUINE

    def is_fake(self, user: int) -> bool:
        return bool(self._is_fake[user])

    def fake_indices(self) -> list[int]:
        return [int(x) for x in np.flatnonzero(self._is_fake)]

    def genuine_indices(self) -> list[int]:
        return [int(x) for x in np.flatnonzero(~self._is_fake)]

    @property
    def n_fake(self) -> int:
        return int(self._is_fake.sum())

    @property
    def n_genuine(self) -> int:
        return self.n_users - self.n_fake

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledUsers):
            return NotImplemented
        return np.array_equal(self._is_fake, other._is_fake)


# -- train/test split -----------------------------------------------------------


class SplitResult(NamedTuple):
    train: InteractionMatrix
    test: InteractionMatrix
    report: dict


def split_train_test(
    matrix: InteractionMatrix,
    holdout: str | float = "leave-one-out",
    seed: int = 0,
) -> SplitResult:
    """Split interactions into train/test.

    holdout is either "leave-one-out" (one random interaction per user with
    >= 2 interactions goes to test; single-interaction users stay fully in
    train and are listed in the report) or a fraction in (0, 1) of entries
    sampled globally into test. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    nnz = matrix.nnz
    test_mask = np.zeros(nnz, dtype=bool)
    excluded: list[str] = []

    if holdout == "leave-one-out":
        indptr = matrix.csr().indptr
        for user in range(matrix.n_users):
            lo, hi = int(indptr[user]), int(indptr[user + 1])
            if hi - lo >= 2:
                test_mask[lo + int(rng.integers(hi - lo))] = True
            else:
                excluded.append(matrix.user_ids[user])
    else:
        try:
            frac = float(holdout)
        except (TypeError, ValueError):
            raise ValueError(f"holdout must be 'leave-one-out' or a fraction, got {holdout!r}") from None
        if not 0 < frac < 1:
            raise ValueError(f"holdout fraction must be in (0, 1), got {frac}")
        n_test = int(math.floor(frac * nnz + 0.5))
        picks = rng.choice(nnz, size=n_test, replace=False)
        test_mask[picks] = True
        users_in_test = {int(u) for u, m in zip(matrix._u, test_mask) if m}
        excluded = [matrix.user_ids[u] for u in range(matrix.n_users) if u not in users_in_test]

    train = matrix._subset(~test_mask)
    test = matrix._subset(test_mask)
    report = {
        "mode": "leave-one-out" if holdout == "leave-one-out" else "fraction",
        "holdout": holdout if holdout == "leave-one-out" else float(holdout),
        "seed": int(seed),
        "n_train": train.nnz,
        "n_test": test.nnz,
        "excluded_users": excluded,
    }
    return SplitResult(train=train, test=test, report=report)
