"""Synthetic interaction data and item catalogs for tests and demos.

Two generators are provided: a popularity-driven model (independent users,
long-tailed item popularity) used for detection experiments, and a planted
block model (users and items partitioned into aligned groups) used for
recommender sanity checks.
"""

from __future__ import annotations

import numpy as np

from .dataset import InteractionMatrix, ItemCatalog, ItemRecord

_ADJECTIVES = (
    "Silent", "Crimson", "Golden", "Hidden", "Broken", "Distant", "Electric",
    "Frozen", "Midnight", "Lonely", "Rapid", "Ancient", "Velvet", "Burning",
)
_NOUNS = {
    "movies": ("Voyage", "Harbor", "Empire", "Garden", "Signal", "Mirror", "Summit"),
    "news": ("Report", "Brief", "Dispatch", "Update", "Analysis", "Profile", "Digest"),
    "clothing": ("Jacket", "Sneaker", "Scarf", "Denim", "Parka", "Loafer", "Cardigan"),
}
_GENRES = {
    "movies": ("drama", "comedy", "thriller", "documentary", "animation"),
    "news": ("politics", "sports", "finance", "technology", "health"),
    "clothing": ("outerwear", "footwear", "accessories", "denim", "knitwear"),
}


def synthetic_catalog(n_items: int, seed: int = 0, domain: str = "movies") -> ItemCatalog:
    """Catalog of n_items with generated titles, descriptions, and a genre."""
    nouns = _NOUNS.get(domain, _NOUNS["movies"])
    genres = _GENRES.get(domain, _GENRES["movies"])
    rng = np.random.default_rng(seed)
    records = []
    for k in range(n_items):
        adj = _ADJECTIVES[int(rng.integers(len(_ADJECTIVES)))]
        noun = nouns[int(rng.integers(len(nouns)))]
        genre = genres[int(rng.integers(len(genres)))]
        records.append(
            ItemRecord(
                item_id=f"i{k:05d}",
                title=f"{adj} {noun} {k}",
                description=f"A {genre} pick featuring {adj.lower()} {noun.lower()} themes.",
                extra_fields={"genre": genre},
            )
        )
    return ItemCatalog(records)


def _profile_lengths(rng: np.random.Generator, n_users: int, mean_len: float, min_len: int) -> np.ndarray:
    lengths = rng.poisson(mean_len, size=n_users)
    return np.maximum(lengths, min_len)


def synthetic_interactions(
    n_users: int,
    n_items: int,
    mean_profile_len: float = 30.0,
    seed: int = 0,
    popularity_exponent: float = 1.0,
    min_profile_len: int = 5,
) -> InteractionMatrix:
    """Popularity-driven implicit feedback with ratings in 1..5.

    Item popularity follows a shuffled power law with the given exponent;
    each user samples a Poisson-sized profile without replacement,
    proportionally to popularity.
    """
    rng = np.random.default_rng(seed)
    ranks = rng.permutation(n_items) + 1
    weights = ranks.astype(np.float64) ** (-popularity_exponent)
    probs = weights / weights.sum()
    lengths = _profile_lengths(rng, n_users, mean_profile_len, min_profile_len)
    lengths = np.minimum(lengths, n_items)

    records = []
    for u in range(n_users):
        items = rng.choice(n_items, size=int(lengths[u]), replace=False, p=probs)
        ratings = rng.integers(1, 6, size=items.size)
        uid = f"u{u:05d}"
        for item, rating in zip(items, ratings):
            records.append((uid, f"i{int(item):05d}", float(rating), None))
    return InteractionMatrix.from_records(records)


def block_interactions(
    n_users: int,
    n_items: int,
    n_blocks: int = 4,
    in_block_prob: float = 0.9,
    mean_profile_len: float = 20.0,
    seed: int = 0,
    min_profile_len: int = 5,
) -> InteractionMatrix:
    """Planted block structure: user block b prefers the matching item block."""
    if n_items % n_blocks:
        raise ValueError("n_items must be divisible by n_blocks")
    rng = np.random.default_rng(seed)
    items_per_block = n_items // n_blocks
    lengths = _profile_lengths(rng, n_users, mean_profile_len, min_profile_len)
    lengths = np.minimum(lengths, n_items)

    records = []
    for u in range(n_users):
        block = u % n_blocks
        in_pool = np.arange(block * items_per_block, (block + 1) * items_per_block)
        out_pool = np.setdiff1d(np.arange(n_items), in_pool)
        picked: set[int] = set()
        while len(picked) < int(lengths[u]):
            pool = in_pool if rng.random() < in_block_prob else out_pool
            picked.add(int(pool[int(rng.integers(pool.size))]))
        uid = f"u{u:05d}"
        for item in sorted(picked):
            records.append((uid, f"i{item:05d}", float(rng.integers(1, 6)), None))
    return InteractionMatrix.from_records(records)


def _main(argv=None) -> int:
    """Write a demo dataset (interactions CSV + catalog JSONL) to a directory."""
    import argparse
    from pathlib import Path

    parser = argparse.ArgumentParser(description=_main.__doc__)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--users", type=int, default=500)
    parser.add_argument("--items", type=int, default=400)
    parser.add_argument("--mean-profile-len", type=float, default=25.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--domain", default="movies")
    args = parser.parse_args(argv)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    matrix = synthetic_interactions(
        args.users, args.items, mean_profile_len=args.mean_profile_len, seed=args.seed
    )
    matrix.save_csv(args.out_dir / "interactions.csv")
    synthetic_catalog(args.items, seed=args.seed, domain=args.domain).save_jsonl(
        args.out_dir / "catalog.jsonl"
    )
    print(f"wrote {matrix.nnz} interactions for {matrix.n_users} users to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(_main())
