"""User, query and item encoders producing per-tower aspect triples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import EMPTY_ROW

FROZEN_TABLE_MAGIC = "srfm-emb"
FROZEN_TABLE_VERSION = "v1"


@dataclass
class TowerAspects:
    """(E_ID, E_lm, E_S) for a batch, each an (B, H) graph node."""

    e_id: object
    e_lm: object
    e_s: object

    def as_list(self):
        return [self.e_id, self.e_lm, self.e_s]


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    level: str
    init: str  # "emb" | "dense" | "zeros" | "domain" | "table"


def read_frozen_table(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != FROZEN_TABLE_MAGIC or header[1] != FROZEN_TABLE_VERSION:
            raise ValueError(f"{path}: bad frozen table header {' '.join(header)!r}")
        vocab, width = int(header[2]), int(header[3])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != vocab:
        raise ValueError(f"{path}: header declares {vocab} rows, found {len(rows)}")
    table = np.array([[float(x) for x in row] for row in rows], dtype=np.float64).reshape(vocab, -1)
    if table.shape[1] != width:
        raise ValueError(f"{path}: rows have {table.shape[1]} values, header says {width}")
    return table


def write_frozen_table(path, table):
    table = np.asarray(table, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{FROZEN_TABLE_MAGIC} {FROZEN_TABLE_VERSION} {table.shape[0]} {table.shape[1]}\n")
        for row in table:
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write("\n")


class TextEncoderPlugin:
    """Token-level text encoder standing in for a pretrained language model.

    ``mean_pool`` returns trainable token embeddings unchanged,
    ``toy_transformer`` runs ``layer_count`` single-head attention blocks over
    them, and ``frozen_table`` looks tokens up in a fixed table read from disk.
    Every kind emits embed_dim values per token position.
    """

    def __init__(self, kind, embed_dim, vocab_size, layer_count=1, table=None):
        if kind not in ("mean_pool", "toy_transformer", "frozen_table"):
            raise ValueError(f"unknown text encoder {kind!r}")
        self.kind = kind
        self.embed_dim = embed_dim
        self.vocab_size = vocab_size
        self.layer_count = layer_count
        self.table = None
        if kind == "frozen_table":
            if table is None:
                raise ValueError("frozen_table plugin needs a table")
            table = np.asarray(table, dtype=np.float64)
            if table.ndim != 2 or table.shape[1] != embed_dim:
                raise ValueError(f"frozen table width {table.shape[-1]} != embed_dim={embed_dim}")
            if table.shape[0] != vocab_size:
                raise ValueError(f"frozen table has {table.shape[0]} rows, vocab_size is {vocab_size}")
            self.table = table

    @classmethod
    def from_config(cls, cfg):
        table = read_frozen_table(cfg.frozen_table_path) if cfg.text_encoder == "frozen_table" else None
        return cls(cfg.text_encoder, cfg.embed_dim, cfg.vocab_size, cfg.text_layers, table)

    @property
    def table_name(self):
        return "text.frozen_table" if self.kind == "frozen_table" else "emb.token"

    def param_specs(self):
        dim = self.embed_dim
        if self.kind == "frozen_table":
            yield ParamSpec("text.frozen_table", (self.vocab_size, dim), "L0", "table")
            return
        yield ParamSpec("emb.token", (self.vocab_size, dim), "L0", "emb")
        if self.kind == "toy_transformer":
            for l in range(self.layer_count):
                for w in ("Wq", "Wk", "Wv", "W1", "W2"):
                    yield ParamSpec(f"text.layer{l}.{w}", (dim, dim), "L1", "dense")
                for b in ("b1", "b2"):
                    yield ParamSpec(f"text.layer{l}.{b}", (1, dim), "L1", "zeros")

    def embed(self, g, param, token_ids):
        """e^Token rows for a flat token id array."""
        return g.embedding_lookup(param(self.table_name), token_ids)

    def encode(self, g, param, token_ids, segments):
        x = self.embed(g, param, token_ids)
        if self.kind != "toy_transformer":
            return x
        # block-diagonal attention: tokens only attend within their own text
        mask = np.where(segments[:, None] == segments[None, :], 0.0, -1e4)
        mask_node = g.const(mask)
        inv = 1.0 / np.sqrt(self.embed_dim)
        for l in range(self.layer_count):
            q = g.matmul(x, param(f"text.layer{l}.Wq"))
            k = g.matmul(x, param(f"text.layer{l}.Wk"))
            v = g.matmul(x, param(f"text.layer{l}.Wv"))
            att = g.softmax(g.add(g.scale(g.matmul(q, k, transpose_b=True), inv), mask_node))
            x = g.add(x, g.matmul(att, v))
            hidden = g.relu(g.linear(x, param(f"text.layer{l}.W1"), param(f"text.layer{l}.b1")))
            x = g.add(x, g.linear(hidden, param(f"text.layer{l}.W2"), param(f"text.layer{l}.b2")))
        return x


def param_specs(cfg):
    dim, hidden = cfg.embed_dim, cfg.hidden_dim
    yield ParamSpec("emb.user_id", (cfg.user_vocab, dim), "L0", "emb")
    yield ParamSpec("emb.query_id", (cfg.query_vocab, dim), "L0", "emb")
    yield ParamSpec("emb.item_id", (cfg.item_vocab, dim), "L0", "emb")
    yield ParamSpec("emb.behavior_type", (4, dim), "L0", "emb")
    yield ParamSpec("emb.query_sparse", (cfg.sparse_vocab, dim), "L0", "emb")
    yield ParamSpec("emb.item_sparse", (cfg.sparse_vocab, dim), "L0", "emb")
    yield ParamSpec("behavior.W", (3 * dim, hidden), "L1", "dense")
    yield ParamSpec("behavior.b", (1, hidden), "L1", "zeros")
    yield ParamSpec("user.W_id", (dim, hidden), "L1", "dense")
    yield ParamSpec("user.W", (2 * hidden, hidden), "L1", "dense")
    yield ParamSpec("user.b", (1, hidden), "L1", "zeros")
    yield ParamSpec("user.empty_history", (1, hidden), "L1", "emb")
    yield ParamSpec("query.W_id", (dim, hidden), "L1", "dense")
    yield ParamSpec("item.W_id", (dim, hidden), "L1", "dense")
    yield ParamSpec("text.W_lm", (dim, hidden), "L1", "dense")
    for side in ("query", "item"):
        yield ParamSpec(f"{side}.sparse.W1", (dim, hidden), "L1", "dense")
        yield ParamSpec(f"{side}.sparse.b1", (1, hidden), "L1", "zeros")
        yield ParamSpec(f"{side}.sparse.W2", (hidden, hidden), "L1", "dense")
        yield ParamSpec(f"{side}.sparse.b2", (1, hidden), "L1", "zeros")


def encode_behavior(g, param, u):
    """x_s = FC(e_ID ⊕ e_type ⊕ mean(e_attr)) for every event of the batch."""
    e_item = g.embedding_lookup(param("emb.item_id"), u.ev_item_rows)
    e_type = g.embedding_lookup(param("emb.behavior_type"), u.ev_type_rows)
    e_attr = g.matmul(g.const(u.ev_attr_pool), g.embedding_lookup(param("emb.item_sparse"), u.ev_attr_rows))
    return g.linear(g.concat([e_item, e_type, e_attr]), param("behavior.W"), param("behavior.b"))


def encode_user(g, param, u):
    """E(U) = FC(W_id·e_u ⊕ mean of behavior encodings); empty history uses a learned vector."""
    e_id = g.matmul(g.embedding_lookup(param("emb.user_id"), u.id_rows), param("user.W_id"))
    fallback = g.matmul(g.const(u.empty), param("user.empty_history"))
    if len(u.ev_item_rows):
        pooled = g.add(g.matmul(g.const(u.ev_pool), encode_behavior(g, param, u)), fallback)
    else:
        pooled = fallback
    return g.linear(g.concat([e_id, pooled]), param("user.W"), param("user.b"))


def encode_text(g, param, plugin, text):
    """E_lm = W_lm · mean over positions of the plugin's token states."""
    states = plugin.encode(g, param, text.token_ids, text.segments)
    return g.matmul(g.matmul(g.const(text.pool), states), param("text.W_lm"))


def encode_sparse(g, param, side, which):
    pooled = g.matmul(g.const(side.sparse_pool),
                      g.embedding_lookup(param(f"emb.{which}_sparse"), side.sparse_rows))
    hidden = g.relu(g.linear(pooled, param(f"{which}.sparse.W1"), param(f"{which}.sparse.b1")))
    return g.linear(hidden, param(f"{which}.sparse.W2"), param(f"{which}.sparse.b2"))


def _encode_side(g, param, plugin, side, which):
    e_id = g.matmul(g.embedding_lookup(param(f"emb.{which}_id"), side.id_rows), param(f"{which}.W_id"))
    return TowerAspects(e_id, encode_text(g, param, plugin, side.text), encode_sparse(g, param, side, which))


def encode_query(g, param, plugin, side):
    return _encode_side(g, param, plugin, side, "query")


def encode_item(g, param, plugin, side):
    return _encode_side(g, param, plugin, side, "item")


def tokenize_and_embed(g, param, plugin, token_ids):
    """(L, D) token matrix; an empty id list yields the single EMPTY row."""
    ids = np.asarray(list(token_ids) or [EMPTY_ROW], dtype=np.int64)
    return plugin.embed(g, param, ids)
