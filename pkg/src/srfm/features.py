"""Turn records into the index arrays and pooling matrices the towers consume."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data.tokenizer import normalize, tokenize

EMPTY_ROW = 0
OOV_ROW = 1
TYPE_ROWS = {"S": 2, "R": 3}


def id_row(raw_id, vocab):
    row = int(raw_id) + 2
    return row if row < vocab else OOV_ROW


def _pool(lengths):
    """Row-stochastic matrix averaging consecutive column groups of the given lengths."""
    lengths = np.asarray(lengths, dtype=np.int64)
    m = np.zeros((len(lengths), int(lengths.sum())))
    rows = np.repeat(np.arange(len(lengths)), lengths)
    m[rows, np.arange(len(rows))] = 1.0 / lengths[rows]
    return m


@dataclass
class TextInputs:
    token_ids: np.ndarray   # (n_tok,)
    segments: np.ndarray    # (n_tok,) owning row per token
    pool: np.ndarray        # (B, n_tok)


@dataclass
class SideInputs:
    """Query- or item-tower inputs for a batch."""

    id_rows: np.ndarray
    text: TextInputs
    sparse_rows: np.ndarray
    sparse_pool: np.ndarray


@dataclass
class UserInputs:
    id_rows: np.ndarray
    ev_item_rows: np.ndarray
    ev_type_rows: np.ndarray
    ev_attr_rows: np.ndarray
    ev_attr_pool: np.ndarray   # (n_ev, n_attr)
    ev_pool: np.ndarray        # (B, n_ev)
    empty: np.ndarray          # (B, 1) 1.0 where the history is empty


def text_inputs(token_lists):
    ids, lengths = [], []
    for toks in token_lists:
        toks = list(toks) or [EMPTY_ROW]
        lengths.append(len(toks))
        ids.extend(toks)
    segs = np.repeat(np.arange(len(lengths)), lengths)
    return TextInputs(np.array(ids, dtype=np.int64), segs, _pool(lengths))


def sparse_inputs(id_lists, vocab):
    rows, lengths = [], []
    for ids in id_lists:
        cur = [id_row(i, vocab) for i in ids] or [EMPTY_ROW]
        lengths.append(len(cur))
        rows.extend(cur)
    return np.array(rows, dtype=np.int64), _pool(lengths)


def query_tokens(record, cfg):
    if not record.has_query:
        return []
    return tokenize(record.query_text, cfg.vocab_size)[: cfg.L_q_max]


def item_tokens(record, cfg):
    return tokenize(record.item_title, cfg.vocab_size)[: cfg.L_i_max]


def query_side(records, cfg, query_vocab):
    id_rows, toks, sparse = [], [], []
    for r in records:
        if r.has_query:
            key = normalize(r.query_text)
            id_rows.append(query_vocab.get(key, OOV_ROW) if key else EMPTY_ROW)
            toks.append(query_tokens(r, cfg))
            sparse.append(r.query_sparse)
        else:
            # recommendation sample: every query field is the empty default
            id_rows.append(EMPTY_ROW)
            toks.append([])
            sparse.append(())
    sp_rows, sp_pool = sparse_inputs(sparse, cfg.sparse_vocab)
    return SideInputs(np.array(id_rows, dtype=np.int64), text_inputs(toks), sp_rows, sp_pool)


def item_side(records, cfg):
    id_rows = [id_row(r.item_id, cfg.item_vocab) for r in records]
    sp_rows, sp_pool = sparse_inputs([r.item_sparse for r in records], cfg.sparse_vocab)
    return SideInputs(np.array(id_rows, dtype=np.int64),
                      text_inputs([item_tokens(r, cfg) for r in records]), sp_rows, sp_pool)


@lru_cache(maxsize=1 << 14)
def _history_rows(history, behavior_max, item_vocab, sparse_vocab):
    # keep the most recent events
    hist = history[-behavior_max:]
    items = [id_row(ev.item_id, item_vocab) for ev in hist]
    types = [TYPE_ROWS[ev.behavior_type] for ev in hist]
    attrs = [[id_row(a, sparse_vocab) for a in ev.attr_ids] or [EMPTY_ROW] for ev in hist]
    return items, types, [len(a) for a in attrs], [a for cur in attrs for a in cur]


def user_side(records, cfg):
    items, types, attr_lengths, attr_rows, ev_lengths = [], [], [], [], []
    for r in records:
        it, ty, al, ar = _history_rows(tuple(r.history), cfg.behavior_max, cfg.item_vocab,
                                       cfg.sparse_vocab)
        ev_lengths.append(len(it))
        items.extend(it)
        types.extend(ty)
        attr_lengths.extend(al)
        attr_rows.extend(ar)
    empty = np.array(ev_lengths) == 0
    return UserInputs(
        id_rows=np.array([id_row(r.user_id, cfg.user_vocab) for r in records], dtype=np.int64),
        ev_item_rows=np.array(items, dtype=np.int64),
        ev_type_rows=np.array(types, dtype=np.int64),
        ev_attr_rows=np.array(attr_rows, dtype=np.int64),
        ev_attr_pool=_pool(attr_lengths),
        ev_pool=_pool(ev_lengths),
        empty=empty.astype(np.float64).reshape(-1, 1),
    )


def build_query_vocab(records, capacity):
    """Most frequent normalized query strings -> rows 2..capacity-1."""
    counts: dict[str, int] = {}
    for r in records:
        if r.has_query:
            key = normalize(r.query_text)
            if key:
                counts[key] = counts.get(key, 0) + 1
    ranked = sorted(counts, key=lambda q: (-counts[q], q))[: capacity - 2]
    return {q: i + 2 for i, q in enumerate(ranked)}
