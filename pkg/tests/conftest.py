"""Shared fixtures: frozen benchmark profiles and lazily-built datasets.

The big suites are session-scoped and built once; unit tests use the tiny
ones. Profiles are frozen — tests assert against these exact configurations.
"""
import math
import os

import numpy as np
import pytest

from zspose.evaluation import load_pairs
from zspose.features import FeatureGrid, normalize_grid
from zspose.io import Dataset
from zspose.synth import SynthRenderConfig, gen_benchmark

# Benchmark profiles. CLEAN is the all-defaults zero-noise world; NOISY adds
# descriptor noise plus instance-level shape gap (part jitter, satellite
# orientation, depth noise) and is the suite the baseline comparisons run on.
# FINE is CLEAN at doubled grid resolution for the sub-degree check.
CLEAN_CFG = SynthRenderConfig()
NOISY_CFG = SynthRenderConfig(
    feat_noise=0.1, shape_sigma=0.05, depth_noise=0.01, sat_tilt=math.pi
)
FINE_CFG = SynthRenderConfig(cells=64)

# small-but-complete world for structural tests; keeps renders cheap
SMALL_CFG = SynthRenderConfig(
    cells=16, dim=16, parts=12, satellites=4, symmetry=4, image_size=80, focal=75.0
)

JOBS = min(8, os.cpu_count() or 1)


def make_grid(data, foreground=None, saliency=None) -> FeatureGrid:
    """Hand-built grid with all-true foreground / foreground-copy saliency
    defaults."""
    data = np.asarray(data, dtype=np.float32)
    h, w, _ = data.shape
    if foreground is None:
        foreground = np.ones((h, w), dtype=bool)
    foreground = np.asarray(foreground, dtype=bool)
    if saliency is None:
        saliency = foreground.astype(np.float32)
    return FeatureGrid(data, foreground, np.asarray(saliency, dtype=np.float32))


def basis_grid(h: int, w: int, dim=None, offset: int = 0) -> FeatureGrid:
    """Grid whose cell (r, c) holds the unit basis vector e_{offset + r*w+c}."""
    dim = dim if dim is not None else h * w + offset
    data = np.zeros((h, w, dim), dtype=np.float32)
    for i in range(h * w):
        data[i // w, i % w, offset + i] = 1.0
    return make_grid(data)


def random_grid(seed: int, h: int = 6, w: int = 6, dim: int = 8, fg_prob: float = 1.0) -> FeatureGrid:
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(h, w, dim)).astype(np.float32)
    fg = rng.random((h, w)) < fg_prob
    fg[0, 0] = True  # never fully background
    sal = rng.random((h, w)).astype(np.float32)
    return normalize_grid(FeatureGrid(data, fg, sal))


def build_benchmark(root, cfg, categories, pairs, views=5, seed=0):
    gen_benchmark(
        root,
        categories=categories,
        pairs_per_category=pairs,
        n_views=views,
        cfg=cfg,
        seed=seed,
    )
    return load_pairs(root / "pairs.jsonl"), Dataset(root)


@pytest.fixture(scope="session")
def tiny_clean(tmp_path_factory):
    """1 category x 2 pairs, zero noise: cheap structural/smoke checks."""
    root = tmp_path_factory.mktemp("tiny_clean")
    return build_benchmark(root, CLEAN_CFG, categories=1, pairs=2)


@pytest.fixture(scope="session")
def clean_suite(tmp_path_factory):
    """The acceptance-scale zero-noise suite: 5 categories x 100 pairs."""
    root = tmp_path_factory.mktemp("clean_suite")
    return build_benchmark(root, CLEAN_CFG, categories=5, pairs=100)


@pytest.fixture(scope="session")
def noisy_suite(tmp_path_factory):
    """The acceptance-scale noisy suite: 5 categories x 100 pairs."""
    root = tmp_path_factory.mktemp("noisy_suite")
    return build_benchmark(root, NOISY_CFG, categories=5, pairs=100)


@pytest.fixture(scope="session")
def fine_suite(tmp_path_factory):
    """100 zero-noise pairs at 64-cell grids for the sub-degree check."""
    root = tmp_path_factory.mktemp("fine_suite")
    return build_benchmark(root, FINE_CFG, categories=2, pairs=50)
