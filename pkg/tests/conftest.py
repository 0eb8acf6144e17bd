import os
import sys

import numpy as np
import pytest
from hypothesis import settings

from glabigru.corpus import Example, LabelSet, build_vocab, prepare
from glabigru.model import ModelConfig, init_params
from glabigru.numcore import make_rng

sys.path.insert(0, os.path.dirname(__file__))

# PASS/FAIL lines from test_acceptance.py, echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda x: int(x.split()[1])):
            terminalreporter.write_line(line)


settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# His niece moved into this apartment last month .   (moved is the root)
NIECE = Example(
    id=1,
    tokens=["His", "niece", "moved", "into", "this", "apartment", "last", "month", "."],
    e1=1,
    e2=5,
    label="Entity-Destination(e1,e2)",
    heads=[1, 2, -1, 2, 5, 3, 7, 2, 2],
)
NIECE_SDP = [0, 1, 1, 1, 0, 1, 0, 0, 0]


def tiny_model(mode="hard", seed=0, gamma=0.5, ex=NIECE, std=0.5, **overrides):
    """A small random model and one prepared example, dropout off."""
    labels = LabelSet.semeval()
    vocab, _ = build_vocab([ex])
    overrides.setdefault("dropout", 0.0)
    cfg = ModelConfig(d_e=8, d_p=3, d_h=6, mode=mode, gamma=gamma, clip=5,
                      n_classes=len(labels), init_std=std, **overrides)
    params = init_params(cfg, len(vocab), make_rng(seed))
    rng = make_rng(seed + 100)
    for name, w in params.items():
        if ".b" in name:  # non-zero biases so their gradients are exercised
            w[...] = rng.normal(0.0, 0.2, w.shape)
    return prepare(ex, vocab, labels, cfg.clip), params, cfg


@pytest.fixture
def niece():
    return NIECE


@pytest.fixture
def labels():
    return LabelSet.semeval()


def random_tree(rng: np.random.Generator, n: int) -> list[int]:
    """Uniform-ish random tree: each node after a random root picks an earlier one."""
    order = rng.permutation(n)
    heads = [0] * n
    heads[order[0]] = -1
    for k in range(1, n):
        heads[order[k]] = int(order[rng.integers(k)])
    return heads
