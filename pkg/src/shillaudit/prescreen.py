"""Stage-I behavioral pre-screening.

Two cheap filters run over the full interaction data: a PCA similarity
filter that flags users whose cosine similarity to any other user in the
projected space exceeds delta, and an unpopular-item ratio filter that
flags users whose fraction of bottom-percentile items reaches tau. The
candidate set is their union; everyone else bypasses Stage II.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import InteractionMatrix, PopularityTable, compute_popularity

logger = logging.getLogger(__name__)

# Row block size for the exact pairwise scan; bounds memory at
# block * n_users doubles while keeping the computation exact.
_SCAN_BLOCK = 2048

PCA_TRIGGER = "PCA"
UNPOP_TRIGGER = "UNPOP"


@dataclass(frozen=True)
class PcaProjection:
    """Top principal directions of mean-centered user vectors.

    components has shape (d, n_items) with orthonormal rows, eigenvalues
    descending; each component's largest-magnitude coordinate is positive.
    projected has shape (n_users, d).
    """

    components: np.ndarray
    mean: np.ndarray
    projected: np.ndarray
    eigenvalues: np.ndarray

    @property
    def d(self) -> int:
        return int(self.components.shape[0])


def pca_fit_project(matrix: InteractionMatrix, d: int, weighted: bool = False) -> PcaProjection:
    """Fit PCA on (binarized by default) user vectors and project all users.

    If d exceeds the numerical rank of the centered data, it is reduced to
    the rank with a logged warning.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if matrix.nnz == 0:
        raise ValueError("matrix has no interactions")
    X = matrix.weighted_dense() if weighted else matrix.binarized_dense()
    mean = X.mean(axis=0)
    Xc = X - mean

    # Economy SVD: right singular vectors are the principal directions.
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = max(Xc.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if d > rank:
        logger.warning("requested %d components but centered data has rank %d", d, rank)
        d = rank

    components = vt[:d].copy()
    # Sign convention: largest-magnitude coordinate of each component positive.
    for k in range(d):
        j = int(np.argmax(np.abs(components[k])))
        if components[k, j] < 0:
            components[k] = -components[k]
    projected = Xc @ components.T
    n = max(matrix.n_users - 1, 1)
    eigenvalues = (s[:d] ** 2) / n
    return PcaProjection(components=components, mean=mean, projected=projected, eigenvalues=eigenvalues)


def pairwise_max_cosine(projected: np.ndarray) -> np.ndarray:
    """Per-user maximum cosine similarity to any other user.

    Zero-norm projections have cosine 0 against everything. Users with no
    counterpart (n_users < 2) get 0.
    """
    n = projected.shape[0]
    out = np.zeros(n, dtype=np.float64)
    if n < 2 or projected.shape[1] == 0:
        return out
    norms = np.linalg.norm(projected, axis=1)
    nonzero = norms > 0.0
    unit = np.zeros_like(projected)
    unit[nonzero] = projected[nonzero] / norms[nonzero, None]
    best = np.full(n, -np.inf)
    for lo in range(0, n, _SCAN_BLOCK):
        hi = min(lo + _SCAN_BLOCK, n)
        sims = unit[lo:hi] @ unit.T
        sims[np.arange(lo, hi) - lo, np.arange(lo, hi)] = -np.inf
        best[lo:hi] = sims.max(axis=1)
    out[nonzero] = best[nonzero]
    # A zero-norm neighbor contributes cosine 0, which the matmul already
    # produced; zero-norm rows themselves stay at 0.
    return out


def pca_similarity_filter(proj: PcaProjection, delta: float) -> tuple[set[int], np.ndarray]:
    """Users whose max pairwise cosine in PCA space strictly exceeds delta."""
    if not 0 <= delta <= 1:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    max_sim = pairwise_max_cosine(proj.projected)
    flagged = {int(u) for u in np.flatnonzero(max_sim > delta)}
    return flagged, max_sim


def unpopular_ratio_filter(
    matrix: InteractionMatrix, unpopular_set: frozenset[int], tau: float
) -> tuple[set[int], np.ndarray]:
    """Users whose unpopular-item ratio is >= tau.

    Users with empty profiles are excluded from flagging (ratio reported
    as 0) with a warning.
    """
    if not 0 <= tau <= 1:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    lengths = matrix.profile_lengths().astype(np.float64)
    unpop_mask = np.zeros(matrix.n_items, dtype=bool)
    unpop_mask[list(unpopular_set)] = True
    csr = matrix.csr()
    hits = np.zeros(matrix.n_users, dtype=np.float64)
    for u in range(matrix.n_users):
        items = csr.indices[csr.indptr[u] : csr.indptr[u + 1]]
        hits[u] = unpop_mask[items].sum()
    empty = lengths == 0
    if empty.any():
        logger.warning("%d users with empty profiles excluded from the ratio filter", int(empty.sum()))
    ratios = np.zeros(matrix.n_users, dtype=np.float64)
    ratios[~empty] = hits[~empty] / lengths[~empty]
    flagged = {int(u) for u in np.flatnonzero((ratios >= tau) & ~empty)}
    return flagged, ratios


@dataclass(frozen=True)
class UserEvidence:
    pca_max_similarity: float
    unpop_ratio: float
    triggers: frozenset[str]


@dataclass(frozen=True)
class CandidateSet:
    """Stage-I output: suspicious users plus per-user trigger evidence."""

    users: frozenset[int]
    evidence: dict[int, UserEvidence] = field(default_factory=dict)

    def __post_init__(self):
        for u in self.users:
            ev = self.evidence.get(u)
            if ev is None or not ev.triggers:
                raise ValueError(f"candidate user {u} lacks trigger evidence")

    def sorted_users(self) -> list[int]:
        return sorted(self.users)

    def to_rows(self, matrix: InteractionMatrix) -> list[dict]:
        rows = []
        for u in self.sorted_users():
            ev = self.evidence[u]
            rows.append(
                {
                    "user_id": matrix.user_ids[u],
                    "triggers": sorted(ev.triggers),
                    "pca_max_similarity": ev.pca_max_similarity,
                    "unpop_ratio": ev.unpop_ratio,
                }
            )
        return rows


def build_candidate_set(
    s_pca: set[int],
    s_unpop: set[int],
    pca_max_sim: np.ndarray,
    unpop_ratios: np.ndarray,
) -> CandidateSet:
    """Union of the two filters with per-user evidence for every user."""
    n = len(pca_max_sim)
    evidence = {}
    for u in range(n):
        triggers = set()
        if u in s_pca:
            triggers.add(PCA_TRIGGER)
        if u in s_unpop:
            triggers.add(UNPOP_TRIGGER)
        evidence[u] = UserEvidence(
            pca_max_similarity=float(pca_max_sim[u]),
            unpop_ratio=float(unpop_ratios[u]),
            triggers=frozenset(triggers),
        )
    return CandidateSet(users=frozenset(s_pca | s_unpop), evidence=evidence)


@dataclass(frozen=True)
class PrescreenConfig:
    delta: float = 0.9
    tau: float = 0.6
    components: int = 3
    percentile_cutoff: float = 0.2
    weighted: bool = False

    def __post_init__(self):
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if self.components < 1:
            raise ValueError(f"components must be >= 1, got {self.components}")
        if not 0 < self.percentile_cutoff < 1:
            raise ValueError(f"percentile_cutoff must be in (0, 1), got {self.percentile_cutoff}")


def run_prescreen(
    matrix: InteractionMatrix,
    cfg: PrescreenConfig = PrescreenConfig(),
    pop: PopularityTable | None = None,
) -> CandidateSet:
    """Full Stage I: PCA filter plus unpopular-ratio filter, unioned."""
    if pop is None or not math.isclose(pop.percentile_cutoff, cfg.percentile_cutoff):
        pop = compute_popularity(matrix, percentile_cutoff=cfg.percentile_cutoff)
    proj = pca_fit_project(matrix, cfg.components, weighted=cfg.weighted)
    s_pca, max_sim = pca_similarity_filter(proj, cfg.delta)
    s_unpop, ratios = unpopular_ratio_filter(matrix, pop.unpopular_set, cfg.tau)
    return build_candidate_set(s_pca, s_unpop, max_sim, ratios)
