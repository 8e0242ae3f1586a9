import functools

import numpy as np
import pytest

from hdgch.hdgops import build_blocks
from hdgch.mesh import build_structured_mesh
from hdgch.polybasis import make_bases


@functools.lru_cache(maxsize=None)
def mesh_of(level):
    return build_structured_mesh(level)


@functools.lru_cache(maxsize=None)
def bases_of(k):
    return make_bases(k)


@functools.lru_cache(maxsize=None)
def blocks_of(level, k, alpha=10.0):
    return build_blocks(mesh_of(level), bases_of(k), alpha)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
