"""Aspect gating fusion: convex combination of a tower's (ID, text, sparse) aspects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .towers import ParamSpec

ASPECTS = ("ID", "TEXT", "SPARSE")
_SELECTORS = [np.eye(3)[:, [a]] for a in range(3)]


@dataclass
class GatingContext:
    """What the gate may consult.

    ``cls`` is the tower's (1, H) CLS node; ``domain_emb`` the (K, H) domain
    embedding node and ``domain_index`` the 0-based row of each batch record.
    """

    strategy: str
    cls: object = None
    domain_emb: object = None
    domain_index: np.ndarray | None = None


def param_specs(cfg):
    if cfg.gating_strategy == "cls":
        yield ParamSpec("gate.cls_query", (1, cfg.hidden_dim), "L0", "domain")
        yield ParamSpec("gate.cls_item", (1, cfg.hidden_dim), "L0", "domain")


def context(strategy, param, tower, domain_emb, domain_index):
    """Context carrying only what ``strategy`` consults."""
    if strategy == "cls":
        return GatingContext(strategy, cls=param(f"gate.cls_{tower}"))
    if strategy == "domain":
        return GatingContext(strategy, domain_emb=domain_emb, domain_index=domain_index)
    return GatingContext(strategy)


def gating_logits(g, aspects, ctx: GatingContext):
    parts = aspects.as_list()
    if ctx.strategy == "cls":
        logits = [g.matmul(e, ctx.cls, transpose_b=True) for e in parts]
    elif ctx.strategy == "domain":
        idx = np.asarray(ctx.domain_index, dtype=np.int64)
        n_domains = ctx.domain_emb.value.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= n_domains):
            raise ValueError(f"domain index out of range 1..{n_domains}")
        rows = g.embedding_lookup(ctx.domain_emb, idx)
        logits = [g.sum(g.mul(rows, e), axis=1) for e in parts]
    else:
        raise ValueError(f"strategy {ctx.strategy!r} has no logits")
    return g.concat(logits, axis=1)


def gating_weights(g, aspects, ctx: GatingContext):
    """(B, 3) aspect weights; every row is a probability vector."""
    if ctx.strategy == "mean":
        batch = aspects.e_id.value.shape[0]
        return g.const(np.full((batch, 3), 1.0 / 3.0))
    if ctx.strategy not in ("cls", "domain"):
        raise ValueError(f"unknown gating strategy {ctx.strategy!r}")
    return g.softmax(gating_logits(g, aspects, ctx))


def fuse(g, aspects, weights):
    """E = w_ID·e_id + w_TEXT·e_lm + w_SPARSE·e_s, row by row."""
    out = None
    for sel, e in zip(_SELECTORS, aspects.as_list()):
        term = g.mul(g.matmul(weights, g.const(sel)), e)
        out = term if out is None else g.add(out, term)
    return out
