"""Desk-scale victim recommender and top-N ranking evaluation.

Embeddings live on a user-item bipartite graph: base vectors are propagated
through the symmetrically normalized adjacency for a fixed number of layers
and averaged, then optimized with a stochastic pairwise ranking loss over
(user, positive, negative) triplets with uniform negative sampling.
Gradients flow through the propagation, which is linear, so the backward
pass is the same sparse operator applied to the output gradient.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionMatrix
from .errors import TrainingDivergedError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class RecModelConfig:
    embedding_dim: int = 32
    n_layers: int = 2
    learning_rate: float = 0.01
    n_epochs: int = 30
    negative_samples: int = 1
    seed: int = 0
    batch_size: int = 1024
    l2_reg: float = 1e-4

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ValueError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.n_epochs < 1:
            raise ValueError(f"n_epochs must be >= 1, got {self.n_epochs}")
        if self.negative_samples < 1:
            raise ValueError(f"negative_samples must be >= 1, got {self.negative_samples}")


class TrainedRecommender:
    """Final (layer-averaged) embeddings plus the training interactions."""

    def __init__(
        self,
        user_embeddings: np.ndarray,
        item_embeddings: np.ndarray,
        train_indptr: np.ndarray,
        train_indices: np.ndarray,
        loss_curve: list[float],
        config: RecModelConfig,
    ):
        self.user_embeddings = user_embeddings
        self.item_embeddings = item_embeddings
        self._train_indptr = train_indptr
        self._train_indices = train_indices
        self.loss_curve = loss_curve
        self.config = config

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    def score_items(self, user: int) -> np.ndarray:
        return self.user_embeddings[user] @ self.item_embeddings.T

    def train_items(self, user: int) -> np.ndarray:
        return self._train_indices[self._train_indptr[user] : self._train_indptr[user + 1]]

    def save(self, path) -> None:
        np.savez(
            path,
            version=np.int64(CHECKPOINT_VERSION),
            user_embeddings=self.user_embeddings,
            item_embeddings=self.item_embeddings,
            train_indptr=self._train_indptr,
            train_indices=self._train_indices,
            loss_curve=np.asarray(self.loss_curve, dtype=np.float64),
            config_json=np.str_(json.dumps(asdict(self.config), sort_keys=True)),
        )

    @classmethod
    def load(cls, path) -> "TrainedRecommender":
        data = np.load(path, allow_pickle=False)
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return cls(
            user_embeddings=data["user_embeddings"],
            item_embeddings=data["item_embeddings"],
            train_indptr=data["train_indptr"],
            train_indices=data["train_indices"],
            loss_curve=[float(x) for x in data["loss_curve"]],
            config=RecModelConfig(**json.loads(str(data["config_json"]))),
        )


class PopularityRecommender:
    """Baseline scoring every item by its training interaction count."""

    def __init__(self, train: InteractionMatrix):
        counts = np.zeros(train.n_items, dtype=np.float64)
        csr = train.csr()
        np.add.at(counts, csr.indices, 1.0)
        self._scores = counts
        self._train_indptr = csr.indptr.copy()
        self._train_indices = csr.indices.astype(np.int64)
        self.n_users = train.n_users
        self.n_items = train.n_items

    def score_items(self, user: int) -> np.ndarray:
        return self._scores

    def train_items(self, user: int) -> np.ndarray:
        return self._train_indices[self._train_indptr[user] : self._train_indptr[user + 1]]


def _normalized_adjacency(matrix: InteractionMatrix) -> sp.csr_matrix:
    """Symmetrically normalized bipartite adjacency over users then items."""
    n_users, n_items = matrix.n_users, matrix.n_items
    csr = matrix.csr()
    rows = np.repeat(np.arange(n_users), np.diff(csr.indptr))
    cols = csr.indices + n_users
    data = np.ones(rows.size, dtype=np.float64)
    n = n_users + n_items
    upper = sp.coo_matrix((data, (rows, cols)), shape=(n, n))
    adj = (upper + upper.T).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d_mat = sp.diags(inv_sqrt)
    return (d_mat @ adj @ d_mat).tocsr()


def _propagate(e0: np.ndarray, adj: sp.csr_matrix, n_layers: int) -> np.ndarray:
    out = e0.copy()
    emb = e0
    for _ in range(n_layers):
        emb = adj @ emb
        out += emb
    return out / (n_layers + 1)


def train_recommender(matrix: InteractionMatrix, cfg: RecModelConfig) -> TrainedRecommender:
    """Train embeddings on implicit interactions; deterministic per seed."""
    if matrix.nnz == 0:
        raise ValueError("matrix has no interactions")
    lengths = matrix.profile_lengths()
    if (lengths == 0).any():
        logger.warning("%d users have no training interactions", int((lengths == 0).sum()))
    csr = matrix.csr()
    item_deg = np.zeros(matrix.n_items, dtype=np.int64)
    np.add.at(item_deg, csr.indices, 1)
    if (item_deg == 0).any():
        logger.warning("%d items have no training interactions", int((item_deg == 0).sum()))

    n_users, n_items = matrix.n_users, matrix.n_items
    n = n_users + n_items
    adj = _normalized_adjacency(matrix)
    rng = np.random.default_rng(cfg.seed)
    e0 = rng.normal(0.0, 0.1, size=(n, cfg.embedding_dim))

    pos_u = np.repeat(np.arange(n_users), np.diff(csr.indptr))
    pos_i = csr.indices.astype(np.int64)
    positive = np.zeros((n_users, n_items), dtype=bool)
    positive[pos_u, pos_i] = True

    # Adam on the base embeddings; batch-mean gradients alone would shrink
    # per-row sparse updates by the batch size.
    adam_m = np.zeros_like(e0)
    adam_v = np.zeros_like(e0)
    adam_b1, adam_b2, adam_eps = 0.9, 0.999, 1e-8
    step = 0

    loss_curve: list[float] = []
    for epoch in range(cfg.n_epochs):
        order = rng.permutation(pos_u.size)
        if cfg.negative_samples > 1:
            order = np.tile(order, cfg.negative_samples)
        epoch_loss = 0.0
        n_seen = 0
        for lo in range(0, order.size, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            bu = pos_u[batch]
            bi = pos_i[batch]
            neg = rng.integers(0, n_items, size=batch.size)
            bad = positive[bu, neg]
            tries = 0
            while bad.any():
                neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
                bad = positive[bu, neg]
                tries += 1
                if tries > 1000:
                    raise ValueError("negative sampling failed: users interact with all items")

            ef = _propagate(e0, adj, cfg.n_layers)
            eu = ef[bu]
            ep = ef[n_users + bi]
            en = ef[n_users + neg]
            x = np.sum(eu * (ep - en), axis=1)
            # -log sigmoid(x), numerically stable
            batch_loss = np.logaddexp(0.0, -x)
            epoch_loss += float(batch_loss.sum())
            n_seen += batch.size

            g = 1.0 / (1.0 + np.exp(x))  # sigmoid(-x)
            grad_f = np.zeros_like(ef)
            np.add.at(grad_f, bu, g[:, None] * (en - ep))
            np.add.at(grad_f, n_users + bi, -g[:, None] * eu)
            np.add.at(grad_f, n_users + neg, g[:, None] * eu)
            grad_f /= batch.size

            # Backward through the layer average: the propagation operator is
            # symmetric, so its transpose is itself.
            grad0 = grad_f.copy()
            tmp = grad_f
            for _ in range(cfg.n_layers):
                tmp = adj @ tmp
                grad0 += tmp
            grad0 /= cfg.n_layers + 1
            grad0 += cfg.l2_reg * e0

            step += 1
            adam_m = adam_b1 * adam_m + (1 - adam_b1) * grad0
            adam_v = adam_b2 * adam_v + (1 - adam_b2) * grad0**2
            m_hat = adam_m / (1 - adam_b1**step)
            v_hat = adam_v / (1 - adam_b2**step)
            e0 -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)

        mean_loss = epoch_loss / max(n_seen, 1)
        if not math.isfinite(mean_loss):
            raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
        loss_curve.append(mean_loss)

    final = _propagate(e0, adj, cfg.n_layers)
    return TrainedRecommender(
        user_embeddings=final[:n_users],
        item_embeddings=final[n_users:],
        train_indptr=csr.indptr.copy(),
        train_indices=csr.indices.astype(np.int64),
        loss_curve=loss_curve,
        config=cfg,
    )


def recommend_topn(model, user: int, n: int, exclude_train: bool = True) -> np.ndarray:
    """Top-n item indices by score descending, ties broken by item index."""
    if not 0 <= user < model.n_users:
        raise ValueError(f"user {user} not in model")
    scores = np.asarray(model.score_items(user), dtype=np.float64).copy()
    available = scores.size
    if exclude_train:
        train = model.train_items(user)
        scores[train] = -np.inf
        available -= train.size
    if n > available:
        logger.warning("requested top-%d but only %d items available", n, available)
        n = available
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:n]


@dataclass(frozen=True)
class RankingMetrics:
    hr: float  # percentage
    ndcg: float  # percentage
    n_pairs: int
    n: int

    def to_dict(self) -> dict:
        return {"hr": self.hr, "ndcg": self.ndcg, "n_pairs": self.n_pairs, "N": self.n}


def rank_metrics(model, test: InteractionMatrix, n: int) -> RankingMetrics:
    """HR@n and NDCG@n over held-out (user, item) pairs, as percentages.

    Training items are excluded from each user's ranking; a held-out item at
    1-based rank r contributes 1/log2(r+1) to NDCG if r <= n, else 0.
    """
    if test.nnz == 0:
        raise ValueError("test matrix has no interactions")
    csr = test.csr()
    hr_sum = 0.0
    ndcg_sum = 0.0
    pairs = 0
    rank_of = np.empty(model.n_items, dtype=np.int64)
    for user in range(test.n_users):
        items = csr.indices[csr.indptr[user] : csr.indptr[user + 1]]
        if items.size == 0:
            continue
        if user >= model.n_users:
            raise ValueError(f"test user {user} not present in model")
        scores = np.asarray(model.score_items(user), dtype=np.float64).copy()
        scores[model.train_items(user)] = -np.inf
        order = np.lexsort((np.arange(scores.size), -scores))
        rank_of[order] = np.arange(1, scores.size + 1)
        for item in items:
            rank = int(rank_of[item])
            pairs += 1
            if rank <= n:
                hr_sum += 1.0
                ndcg_sum += 1.0 / math.log2(rank + 1)
    return RankingMetrics(
        hr=100.0 * hr_sum / pairs,
        ndcg=100.0 * ndcg_sum / pairs,
        n_pairs=pairs,
        n=n,
    )


def target_exposure(model, targets: frozenset[int], n: int, eval_users) -> float:
    """Fraction of eval users whose top-n list contains at least one target."""
    if not targets:
        raise ValueError("targets must be nonempty")
    users = list(eval_users)
    if not users:
        raise ValueError("eval_users must be nonempty")
    if n <= 0:
        return 0.0
    hits = 0
    for user in users:
        topn = recommend_topn(model, int(user), n, exclude_train=True)
        if targets.intersection(int(x) for x in topn):
            hits += 1
    return hits / len(users)
