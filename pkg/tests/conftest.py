import numpy as np
import pytest

from shillaudit.dataset import InteractionMatrix, ItemCatalog, ItemRecord


@pytest.fixture
def tiny_matrix() -> InteractionMatrix:
    # 3 users x 4 items with one timestamped row
    return InteractionMatrix.from_records(
        [
            ("u1", "i1", 5.0, 100.0),
            ("u1", "i2", 3.0, 50.0),
            ("u2", "i2", 4.0, None),
            ("u2", "i3", 2.0, None),
            ("u3", "i1", 1.0, None),
            ("u3", "i4", 5.0, None),
        ]
    )


@pytest.fixture
def tiny_catalog() -> ItemCatalog:
    return ItemCatalog(
        [
            ItemRecord("i1", "First Item", "a short description", {"genre": "drama"}),
            ItemRecord("i2", "Second Item", "", {"genre": "comedy"}),
            ItemRecord("i3", "Third Item", "another description", {}),
            ItemRecord("i4", "Fourth Item", "", {"year": "1999"}),
        ]
    )


def random_matrix(rng: np.random.Generator, n_users: int, n_items: int, density: float = 0.15) -> InteractionMatrix:
    """Random implicit-feedback matrix where every user has >= 1 interaction."""
    records = []
    for u in range(n_users):
        size = max(1, rng.binomial(n_items, density))
        items = rng.choice(n_items, size=size, replace=False)
        for i in items:
            records.append((f"u{u:04d}", f"i{int(i):04d}", float(rng.integers(1, 6)), None))
    return InteractionMatrix.from_records(records)
