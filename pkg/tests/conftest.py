"""Shared fixtures: tiny synthetic corpora and training recipes.

The "overfit" recipe (noiseless features, planted linear labels, small
encoder) is shared by the trainer tests and the acceptance gate; it is the
cheapest configuration that still exercises every module end to end.
"""

from __future__ import annotations

import numpy as np
import pytest

from affectseq.config import TrainConfig
from affectseq.losses import FocalConfig
from affectseq.masking import MaskConfig
from affectseq.model import ModelConfig
from affectseq.optim import AdamWConfig
from affectseq.synth import SynthSpec, generate

OVERFIT_SPEC = SynthSpec(
    task="EXPR",
    n_videos=1,
    frames=1000,
    dim=16,
    seed=7,
    snr=float("inf"),
    temporal_smoothness=10,
    sentinel_rate=0.0,
)


def overfit_train_config(train_dir, ckpt_dir, *, epochs=100, seed=0, **kw) -> TrainConfig:
    """1 video x 1000 frames, T=100, batch 10 -> exactly one step per epoch."""
    defaults = dict(
        task="EXPR",
        batch_size=10,
        T=100,
        epochs=epochs,
        eval_every=10_000,
        seed=seed,
        mask=MaskConfig(p=0.0),
        model=ModelConfig(task="EXPR", dim_in=16, d_model=32, n_heads=2,
                          n_layers=2, dropout=0.0, t_max=100),
        optim=AdamWConfig(lr=3e-3),
        loss=FocalConfig(),
        train_dir=str(train_dir),
        ckpt_dir=str(ckpt_dir),
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def overfit_corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("overfit_corpus")
    generate(OVERFIT_SPEC, d)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(0)
