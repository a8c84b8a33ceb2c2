import os
import sys

import numpy as np
import pytest

# allow running the suite from a fresh checkout without installing
_SRC = os.path.join(os.path.dirname(__file__), os.pardir, "src")
try:
    import modt  # noqa: F401
except ImportError:
    sys.path.insert(0, os.path.abspath(_SRC))

from modt.data import generate_dataset  # noqa: E402
from modt.losses import LossWeights  # noqa: E402
from modt.model import DecisionModel, ModelConfig  # noqa: E402
from modt.regions import RegionSpec, encode_actions  # noqa: E402
from modt.tokens import collate, layout_tokens  # noqa: E402


def tiny_config(variant="modt", **kw):
    base = dict(state_dim=3, action_dim=2, variant=variant, num_layers=2,
                num_heads=2, embed_dim=8, context_len_K=4, dropout_rate=0.0,
                region_bins=3)
    base.update(kw)
    return ModelConfig(**base)


def make_windows(cfg, n, k, seed=0, partial=False):
    rng = np.random.default_rng(seed)
    spec = RegionSpec(bins=cfg.region_bins, action_dim=cfg.action_dim,
                      low=-np.ones(cfg.action_dim), high=np.ones(cfg.action_dim))
    wins = []
    for _ in range(n):
        na = k - 1 if partial else k
        acts = rng.uniform(-1, 1, size=(na, cfg.action_dim))
        wins.append(layout_tokens(
            returns=rng.normal(size=k),
            states=rng.normal(size=(k, cfg.state_dim)),
            actions=acts,
            variant=cfg.variant,
            regions=encode_actions(acts, spec) if cfg.variant == "motrdt" else None,
            partial_last_step=partial))
    return wins


def tiny_batch(cfg, n=2, k=3, seed=0):
    return collate(make_windows(cfg, n, k, seed))


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(
        [("random", 0.4), ("pd_weak", 0.3), ("expert", 0.3)], 40, seed=11)


@pytest.fixture
def f64_model():
    cfg = tiny_config()
    return DecisionModel(cfg, seed=1, dtype=np.float64), cfg


def uniform_weights(variant):
    return LossWeights.uniform(variant)
