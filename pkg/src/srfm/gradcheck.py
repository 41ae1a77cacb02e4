"""End-to-end gradient check of the model loss on a tiny configuration."""

from __future__ import annotations

import itertools

import numpy as np

from .config import ModelConfig
from .data.batching import DomainBatch
from .data.synth import SynthConfig, generate_records
from .features import build_query_vocab
from .model import Foundation
from .numerics import grad_check

STRATEGIES = ("mean", "cls", "domain")
DIVERGENCES = ("js", "mmd", "none")
TRUNKS = ("mlp", "shared_bottom", "mmoe")

# small enough that every coordinate of every tensor can be checked
TINY = dict(embed_dim=2, hidden_dim=3, num_domains=3, L_q_max=3, L_i_max=3, behavior_max=2,
            vocab_size=8, user_vocab=6, query_vocab=5, item_vocab=8, sparse_vocab=8,
            expert_count=2, trunk_width=4, head_width=3)


def tiny_config(**overrides):
    return ModelConfig(**{**TINY, **overrides})


def tiny_records(seed=0, per_domain=2):
    """A handful of records covering every domain kind and both labels."""
    synth = SynthConfig(num_domains=3, users_per_domain=4, items_per_domain=5, vocab_size=6,
                        sessions=4, impressions_per_session=2, queries_per_domain=3,
                        history_len=2, sparse_per_domain=2, seed=seed)
    corpus = generate_records(synth)
    out = []
    for k in range(1, synth.num_domains + 1):
        pool = corpus[(k, "train")] + corpus[(k, "eval")] + corpus[(k, "test")]
        out.extend(pool[:per_domain])
    return out


def model_grad_check(config: ModelConfig, records, seed=0, eps=1e-5):
    """Max relative error of the total loss gradient over every trainable coordinate."""
    model = Foundation.initialize(config, seed, build_query_vocab(records, config.query_vocab))
    # zero-initialized biases can park relu inputs exactly on the kink
    rng = np.random.default_rng(seed)
    for name, entry in model.store.items():
        entry.value += rng.normal(0.0, 0.05, size=entry.value.shape)
    batch = DomainBatch.from_records(records)

    def build():
        g, loss, _, _ = model.loss(batch)
        return g, loss

    return grad_check(build, eps=eps)


def sweep(seeds=(0,), eps=1e-5):
    """``{(strategy, divergence, trunk, seed): error}`` over the full grid."""
    results = {}
    for seed in seeds:
        records = tiny_records(seed)
        for combo in itertools.product(STRATEGIES, DIVERGENCES, TRUNKS):
            cfg = tiny_config(gating_strategy=combo[0], divergence=combo[1], mtl_kind=combo[2])
            results[(*combo, seed)] = model_grad_check(cfg, records, seed, eps)
    return results
