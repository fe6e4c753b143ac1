import itertools
import random

import pytest

from tcamssd.backend import Backend, SsdConfig
from tcamssd.ftl import SearchManager
from tcamssd.nvme import NvmeController


def brute_match(key: str, element: str) -> bool:
    """Independent ternary comparison used as the oracle throughout the tests."""
    for k, e in itertools.zip_longest(key, element):
        if k is None or e is None or k in "Xx":
            continue
        if k != e:
            return False
    return True


def random_bits(rng: random.Random, width: int) -> str:
    return "".join(rng.choice("01") for _ in range(width))


def random_key(rng: random.Random, width: int, p_x: float = 0.5) -> str:
    return "".join("X" if rng.random() < p_x else rng.choice("01") for _ in range(width))


# 256 bitlines per block, 97-bit native size; small enough to simulate freely
SMALL = SsdConfig(page_size=32, pages_per_block=196, blocks_per_plane=64, burst_bytes=8)
TINY = SsdConfig(page_size=8, pages_per_block=20, blocks_per_plane=32, burst_bytes=4)


@pytest.fixture
def small_mgr():
    return SearchManager(Backend(SMALL))


@pytest.fixture
def tiny_mgr():
    return SearchManager(Backend(TINY))


@pytest.fixture
def ctrl():
    return NvmeController(SearchManager(Backend(TINY)))
