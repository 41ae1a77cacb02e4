from __future__ import annotations

import numpy as np
import pytest

from srfm.config import ModelConfig, OptimConfig, TrainConfig
from srfm.data.records import Dataset
from srfm.data.synth import SynthConfig, generate_records
from srfm.pipeline import pretrain

SMALL_SYNTH = dict(users_per_domain=20, items_per_domain=20, vocab_size=40, sessions=40,
                   impressions_per_session=3, queries_per_domain=6, history_len=3,
                   sparse_per_domain=4)


def small_synth(**overrides):
    return SynthConfig(**{**SMALL_SYNTH, **overrides})


def small_model_config(sc: SynthConfig, **overrides):
    base = dict(embed_dim=4, hidden_dim=4, num_domains=sc.num_domains, L_q_max=4, L_i_max=6,
                behavior_max=3, vocab_size=64, user_vocab=sc.users_per_domain + 2,
                query_vocab=16, item_vocab=sc.n_items + 2, sparse_vocab=sc.n_sparse + 2,
                expert_count=2, trunk_width=8, head_width=4)
    return ModelConfig(**{**base, **overrides})


def split(corpus, name, domains):
    return Dataset([r for k in domains for r in corpus[(k, name)]])


@pytest.fixture(scope="session")
def small_corpus():
    sc = small_synth()
    return sc, generate_records(sc)


@pytest.fixture(scope="session")
def small_checkpoint(small_corpus):
    sc, corpus = small_corpus
    domains = range(1, sc.num_domains + 1)
    tcfg = TrainConfig(epochs=2, batch_size=32, seed=0, optim=OptimConfig(lr=3e-3))
    return pretrain(small_model_config(sc), split(corpus, "train", domains),
                    split(corpus, "eval", domains), tcfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
