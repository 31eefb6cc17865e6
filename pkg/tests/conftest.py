"""Session fixtures shared across test modules.

The overfit toy model takes a few minutes of CPU training, so it is built
once per session and reused by every test that needs a trained decoder.
"""

import time

import pytest

from tabmark import synth
from tabmark.model import ModelConfig, TableModel
from tabmark.training import TrainConfig, train

# Smallest configuration observed to memorize the 100-table wide corpus
# (structural similarity 1.0, total 0.99+) in a couple of CPU minutes.
TOY_MODEL = dict(
    image_side=128,
    d=48,
    heads=4,
    html_blocks=1,
    cell_blocks=1,
    refiner_blocks=1,
    ffn_mult=2,
    enc_channels=(8, 16, 32),
    seed=0,
)
TOY_TRAIN = dict(epochs=200, batch_size=8, seed=0)


@pytest.fixture(scope="session")
def wide_corpus():
    """100 wide-preset tables, seeds 0..99; the toy model's training set."""
    spec = synth.PRESETS["wide"]
    return [(f"t{i}", synth.generate(spec, seed=i)) for i in range(100)]


@pytest.fixture(scope="session")
def trained_toy(wide_corpus):
    """(model, train_seconds): toy decoder overfit on wide_corpus."""
    model = TableModel(ModelConfig(**TOY_MODEL))
    t0 = time.perf_counter()
    train(model, wide_corpus, TrainConfig(**TOY_TRAIN))
    return model, time.perf_counter() - t0
