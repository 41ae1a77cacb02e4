"""The foundation model: parameters plus the batched forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import adapt, features, fusion, towers
from .config import ModelConfig
from .data.batching import DomainBatch
from .numerics import Graph
from .params import Binder, ParameterStore
from .towers import TextEncoderPlugin


@dataclass
class Outputs:
    e_user: object
    q_aspects: towers.TowerAspects
    i_aspects: towers.TowerAspects
    w_query: object
    w_item: object
    e_query: object
    e_item: object
    x: object
    x_hat: object
    blocks: dict
    ctr_logits: object
    sim_rows: np.ndarray
    sim_logits: object = None
    reg: object = None


def _init_value(spec, rng, cfg, plugin):
    shape = spec.shape
    if spec.init == "zeros":
        return np.zeros(shape)
    if spec.init == "emb":
        return rng.normal(0.0, cfg.init_scale, size=shape)
    if spec.init == "domain":
        return rng.normal(0.0, 1.0 / np.sqrt(cfg.hidden_dim), size=shape)
    if spec.init == "dense":
        return rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
    if spec.init == "table":
        return plugin.table.copy()
    raise ValueError(f"unknown init {spec.init!r}")


def param_specs(cfg, plugin, n_domains=None):
    yield from towers.param_specs(cfg)
    yield from plugin.param_specs()
    yield from fusion.param_specs(cfg)
    yield from adapt.param_specs(cfg, n_domains)


@dataclass
class Foundation:
    """Config, parameters, query vocabulary and the raw domain id of each model domain."""

    config: ModelConfig
    store: ParameterStore
    query_vocab: dict = field(default_factory=dict)
    domains: list = field(default_factory=list)
    plugin: TextEncoderPlugin | None = None

    def __post_init__(self):
        if not self.domains:
            self.domains = list(range(1, self.config.num_domains + 1))
        if self.plugin is None:
            table = self.store["text.frozen_table"] if "text.frozen_table" in self.store else None
            cfg = self.config
            self.plugin = TextEncoderPlugin(cfg.text_encoder, cfg.embed_dim, cfg.vocab_size,
                                            cfg.text_layers, table)

    @classmethod
    def initialize(cls, config: ModelConfig, seed=0, query_vocab=None, domains=None, plugin=None):
        plugin = plugin or TextEncoderPlugin.from_config(config)
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        for spec in param_specs(config, plugin):
            store.add(spec.name, _init_value(spec, rng, config, plugin), spec.level)
        return cls(config, store, dict(query_vocab or {}), list(domains or []), plugin)

    @property
    def n_domains(self):
        return len(self.domains)

    def domain_index(self, domain_ids):
        lookup = {d: i for i, d in enumerate(self.domains)}
        try:
            return np.array([lookup[int(d)] for d in domain_ids], dtype=np.int64)
        except KeyError as err:
            raise ValueError(f"unknown domain id {err.args[0]}") from None

    def domain_embedding(self, g, param):
        parts = [param("domain.E")]
        for k in range(self.config.num_domains + 1, self.n_domains + 1):
            parts.append(param(f"domain.E.{k}"))
        return parts[0] if len(parts) == 1 else g.concat(parts, axis=0)

    def binder(self, g):
        return Binder(g, self.store)

    # forward

    def forward(self, g: Graph, batch: DomainBatch, with_sim=True, regularize=True):
        cfg = self.config
        param = self.binder(g)
        records = batch.records
        dom = self.domain_index(r.domain_id for r in records)
        e_d = self.domain_embedding(g, param)

        e_user = towers.encode_user(g, param, features.user_side(records, cfg))
        q_aspects = towers.encode_query(g, param, self.plugin, features.query_side(records, cfg, self.query_vocab))
        i_aspects = towers.encode_item(g, param, self.plugin, features.item_side(records, cfg))

        ctx_q = fusion.context(cfg.gating_strategy, param, "query", e_d, dom)
        ctx_i = fusion.context(cfg.gating_strategy, param, "item", e_d, dom)
        w_q = fusion.gating_weights(g, q_aspects, ctx_q)
        w_i = fusion.gating_weights(g, i_aspects, ctx_i)
        e_query = fusion.fuse(g, q_aspects, w_q)
        e_item = fusion.fuse(g, i_aspects, w_i)

        x = g.concat([e_user, e_query, e_item])
        x_hat, blocks = adapt.domain_adapt(g, param, cfg, x, dom, e_d)
        ctr_logits = adapt.head(g, param, "ctr", adapt.trunk(g, param, cfg, x_hat, "ctr"))

        out = Outputs(e_user, q_aspects, i_aspects, w_q, w_i, e_query, e_item, x, x_hat,
                      blocks, ctr_logits, np.zeros(0, dtype=np.int64))
        if with_sim:
            sim_rows = np.flatnonzero(batch.sim_mask) if with_sim == "labelled" else np.arange(len(records))
            if len(sim_rows):
                out.sim_rows = sim_rows
                out.sim_logits = self.relevance_logits(g, param, e_query, e_item, dom, e_d, sim_rows)
        if regularize and cfg.divergence != "none":
            out.reg = adapt.domain_reg(g, blocks, cfg.divergence, cfg.mmd_bandwidth)
        return out

    def relevance_logits(self, g, param, e_query, e_item, dom, e_d, rows):
        """f_phi(q, i): the user slot of the adapted input is zeroed."""
        cfg = self.config
        if len(rows) != e_query.value.shape[0]:
            e_query = g.embedding_lookup(e_query, rows)
            e_item = g.embedding_lookup(e_item, rows)
        x_qi = g.concat([g.const(np.zeros((len(rows), cfg.hidden_dim))), e_query, e_item])
        x_hat, _ = adapt.domain_adapt(g, param, cfg, x_qi, dom[rows], e_d)
        return adapt.head(g, param, "sim", adapt.trunk(g, param, cfg, x_hat, "sim"))

    def loss(self, batch: DomainBatch, g: Graph | None = None):
        g = g or Graph()
        out = self.forward(g, batch, with_sim="labelled")
        loss, breakdown = adapt.total_loss(g, out, batch, self.config)
        return g, loss, breakdown, out

    # inference helpers

    def predict(self, records, batch_size=512):
        """CTR and relevance probabilities plus adapted vectors, as arrays."""
        ctr, sim, xh = [], [], []
        for start in range(0, len(records), batch_size):
            chunk = DomainBatch.from_records(records[start:start + batch_size])
            g = Graph()
            out = self.forward(g, chunk, with_sim=True, regularize=False)
            ctr.append(_sigmoid(out.ctr_logits.value[:, 0]))
            sim.append(_sigmoid(out.sim_logits.value[:, 0]))
            xh.append(out.x_hat.value)
        if not ctr:
            return np.zeros(0), np.zeros(0), np.zeros((0, self.config.hidden_dim))
        return np.concatenate(ctr), np.concatenate(sim), np.vstack(xh)

    def copy(self):
        return Foundation(self.config, self.store.copy(), dict(self.query_vocab),
                          list(self.domains), self.plugin)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
