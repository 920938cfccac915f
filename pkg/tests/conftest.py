from __future__ import annotations

import numpy as np
import pytest

from specdraft import datastore


@pytest.fixture
def walkthrough_corpus() -> list[int]:
    """Tiny corpus whose suffix array and query results are known by hand."""
    return [5, 6, 7, 5, 6, 8, 5, 6, 7, 9]


@pytest.fixture
def walkthrough_store(walkthrough_corpus) -> datastore.Datastore:
    return datastore.build(walkthrough_corpus)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0xC0FFEE)
