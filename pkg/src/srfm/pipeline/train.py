"""Pretraining, cold-start finetuning, evaluation and embedding export."""

from __future__ import annotations

import json
import logging
from itertools import combinations
from pathlib import Path

import numpy as np

from .. import adapt
from ..config import ModelConfig, TrainConfig
from ..data.batching import DomainBatch, make_batches
from ..data.records import Dataset
from ..features import build_query_vocab
from ..model import Foundation, _sigmoid
from ..numerics import GraphError
from .checkpoint import Checkpoint
from .metrics import auc, centroid_spread
from .optim import AdamState, NonFiniteGradient, adam_step

log = logging.getLogger(__name__)

SPLITS = {"freeze_L0": ("L0",), "freeze_L0_L1": ("L0", "L1"), "freeze_none": ()}
SIM_ONLY_PREFIXES = ("head.sim.", "trunk.gate.sim.", "trunk.sim.")


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss or gradient; carries the last good checkpoint."""

    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def _as_dataset(data):
    if data is None or isinstance(data, Dataset):
        return data
    return Dataset(list(data))


def _epoch_seed(seed, epoch):
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _fit(model, train, eval_data, tcfg: TrainConfig, select_domains=None, metrics=None):
    """Shared training loop. Returns (best model, meta)."""
    opt = AdamState(tcfg.optim.lr, tcfg.optim.beta1, tcfg.optim.beta2, tcfg.optim.eps)
    best, best_score, best_epoch = model.copy(), -np.inf, 0
    history = []

    def checkpoint_eval(epoch):
        nonlocal best, best_score, best_epoch
        if eval_data is None or not len(eval_data):
            return
        report = evaluate(model, eval_data)
        rows = report_rows(report, step=opt.step)
        if metrics is not None:
            metrics.extend(rows)
        aucs = [v["ctr_auc"] for d, v in report["domains"].items()
                if v.get("ctr_auc") is not None and (select_domains is None or d in select_domains)]
        score = float(np.mean(aucs)) if aucs else -np.inf
        history.append({"epoch": epoch, "score": score, "alignment_js": report["alignment_js"]})
        log.info("epoch %d step %d eval mean ctr auc %.4f alignment js %s",
                 epoch, opt.step, score, report["alignment_js"])
        if epoch > 0 and score > best_score:
            best, best_score, best_epoch = model.copy(), score, epoch

    checkpoint_eval(0)
    for epoch in range(1, tcfg.epochs + 1):
        sums, count = {}, 0
        for batch in make_batches(train, tcfg.batch_size, _epoch_seed(tcfg.seed, epoch)):
            try:
                g, loss, breakdown, _ = model.loss(batch)
                grads = g.backward(loss)
                adam_step(model.store, grads, opt)
            except (GraphError, NonFiniteGradient) as err:
                last = best if best_epoch else model
                raise TrainingDiverged(f"training diverged at step {opt.step}: {err}",
                                       Checkpoint(last, {"step": opt.step, "seed": tcfg.seed})) from err
            for k, v in breakdown.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
        means = {k: v / max(count, 1) for k, v in sums.items()}
        if metrics is not None:
            metrics.extend({"domain": None, "task": "train", "metric": f"loss_{k}", "value": v,
                            "step": opt.step} for k, v in sorted(means.items()))
        log.info("epoch %d train loss %s", epoch, {k: round(v, 5) for k, v in means.items()})
        checkpoint_eval(epoch)
    if eval_data is None or not len(eval_data) or best_epoch == 0:
        best, best_epoch = model.copy(), tcfg.epochs
    meta = {"step": opt.step, "seed": tcfg.seed, "best_epoch": best_epoch,
            "best_eval_auc": None if not np.isfinite(best_score) else best_score,
            "history": history}
    return best, meta


def pretrain(config: ModelConfig, train, eval_data=None, tcfg: TrainConfig | None = None,
             metrics=None) -> Checkpoint:
    """Jointly train all K domains; returns the best-eval checkpoint."""
    tcfg = tcfg or TrainConfig()
    train, eval_data = _as_dataset(train), _as_dataset(eval_data)
    present = train.domains()
    expected = list(range(1, config.num_domains + 1))
    if present != expected:
        raise ValueError(f"pretraining data must cover domains {expected}, found {present}")
    vocab = build_query_vocab(train.records, config.query_vocab)
    model = Foundation.initialize(config, tcfg.seed, vocab)
    best, meta = _fit(model, train, eval_data, tcfg, metrics=metrics)
    return Checkpoint(best, meta)


def train_scratch(config: ModelConfig, train, eval_data=None, tcfg: TrainConfig | None = None,
                  metrics=None) -> Checkpoint:
    """Single-domain model trained from random init (the cold-start baseline)."""
    tcfg = tcfg or TrainConfig()
    train, eval_data = _as_dataset(train), _as_dataset(eval_data)
    ids = train.domains()
    if len(ids) != 1:
        raise ValueError(f"scratch training takes exactly one domain, found {ids}")
    config = config.replace(num_domains=1)
    vocab = build_query_vocab(train.records, config.query_vocab)
    model = Foundation.initialize(config, tcfg.seed, vocab, domains=ids)
    best, meta = _fit(model, train, eval_data, tcfg, metrics=metrics)
    return Checkpoint(best, meta)


def attach_domain(model: Foundation, domain_id, rng):
    """Copy of ``model`` with a fresh, randomly initialized slot for ``domain_id``."""
    if domain_id in model.domains:
        raise ValueError(f"domain id {domain_id} collides with pretrained domains {model.domains}")
    new = model.copy()
    cfg = new.config
    k = new.n_domains + 1
    new.store.add(f"domain.E.{k}", rng.normal(0.0, 1.0 / np.sqrt(cfg.hidden_dim), size=(1, cfg.hidden_dim)), "L2plus")
    if cfg.domain_adaptive:
        new.store.add(f"adapt.W.{k}", rng.normal(0.0, 1.0 / np.sqrt(4 * cfg.hidden_dim), size=(4 * cfg.hidden_dim, cfg.hidden_dim)),
                      "L2plus")
    new.domains.append(int(domain_id))
    return new


def finetune(checkpoint: Checkpoint, split, cold, eval_data=None, tcfg: TrainConfig | None = None,
             metrics=None) -> Checkpoint:
    """Restore, attach the cold domain, freeze at ``split``, train on the cold data only."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {sorted(SPLITS)}")
    tcfg = tcfg or TrainConfig()
    cold, eval_data = _as_dataset(cold), _as_dataset(eval_data)
    ids = cold.domains()
    if len(ids) != 1:
        raise ValueError(f"cold dataset must hold exactly one domain, found {ids}")
    model = attach_domain(checkpoint.model, ids[0], np.random.default_rng(tcfg.seed))
    model.store.freeze_levels(SPLITS[split])
    # tensors the cold domain cannot reach stay as pretrained
    unreachable = [f"adapt.W.{k}" for k in range(1, model.n_domains) if f"adapt.W.{k}" in model.store]
    if not any(r.y_sim is not None for r in cold.records):
        unreachable += [n for n in model.store if n.startswith(SIM_ONLY_PREFIXES)]
    model.store.freeze(unreachable)
    best, meta = _fit(model, cold, eval_data, tcfg, metrics=metrics)
    meta.update(split=split, cold_domain=ids[0], parent=checkpoint.meta.get("seed"))
    return Checkpoint(best, meta)


def _pairwise_js(xh, dom):
    probs = {}
    for d in np.unique(dom):
        z = xh[dom == d]
        e = np.exp(z - z.max(axis=1, keepdims=True))
        probs[int(d)] = (e / e.sum(axis=1, keepdims=True)).mean(axis=0)
    pairs = [adapt.jensen_shannon(probs[a], probs[b]) for a, b in combinations(sorted(probs), 2)]
    return float(np.mean(pairs)) if pairs else None


def evaluate(model, dataset, batch_size=512):
    """Per-domain CTR / relevance AUC, loss breakdown and the cross-domain alignment JS."""
    model = model.model if isinstance(model, Checkpoint) else model
    records = dataset.records if isinstance(dataset, Dataset) else list(dataset)
    ctr_p, sim_p, sim_pos, xh, losses, weights = [], [], [], [], {}, {}
    for start in range(0, len(records), batch_size):
        batch = DomainBatch.from_records(records[start:start + batch_size])
        g, _, breakdown, out = model.loss(batch)
        ctr_p.append(_sigmoid(out.ctr_logits.value[:, 0]))
        if out.sim_logits is not None:
            sim_p.append(_sigmoid(out.sim_logits.value[:, 0]))
            sim_pos.append(start + out.sim_rows)
        xh.append(out.x_hat.value)
        counts = {"ctr": int(batch.ctr_mask.sum()), "sim": len(out.sim_rows)}
        for k in ("ctr", "sim"):
            losses[k] = losses.get(k, 0.0) + breakdown[k] * counts[k]
            weights[k] = weights.get(k, 0) + counts[k]
    if not records:
        return {"domains": {}, "loss": {}, "alignment_js": None, "centroid_spread": None}
    ctr_p = np.concatenate(ctr_p)
    xh = np.vstack(xh)
    sim_full = np.full(len(records), np.nan)
    if sim_p:
        sim_full[np.concatenate(sim_pos)] = np.concatenate(sim_p)
    dom = np.array([r.domain_id for r in records])
    domains = {}
    for d in sorted(set(dom.tolist())):
        idx = np.flatnonzero(dom == d)
        y = np.array([records[i].y_ctr if records[i].y_ctr is not None else -1 for i in idx])
        has = y >= 0
        entry = {"n": int(len(idx)),
                 "ctr_auc": auc(ctr_p[idx][has], y[has]) if has.any() else None}
        ys = np.array([records[i].y_sim if records[i].y_sim is not None else -1 for i in idx])
        if (ys >= 0).any():
            entry["sim_auc"] = auc(sim_full[idx][ys >= 0], ys[ys >= 0])
        domains[int(d)] = entry
    loss = {k: losses[k] / weights[k] for k in losses if weights[k]}
    return {"domains": domains, "loss": loss,
            "alignment_js": _pairwise_js(xh, dom),
            "centroid_spread": centroid_spread(xh, dom) if len(set(dom.tolist())) > 1 else None}


def report_rows(report, step=None):
    """Flatten an evaluation report into (domain, task, metric, value, step) rows."""
    rows = []
    for d, entry in report["domains"].items():
        rows.append({"domain": d, "task": "ctr", "metric": "auc", "value": entry["ctr_auc"], "step": step})
        if "sim_auc" in entry:
            rows.append({"domain": d, "task": "sim", "metric": "auc", "value": entry["sim_auc"], "step": step})
    for k, v in sorted(report["loss"].items()):
        rows.append({"domain": None, "task": k, "metric": "loss", "value": v, "step": step})
    for key in ("alignment_js", "centroid_spread"):
        rows.append({"domain": None, "task": "adapt", "metric": key, "value": report[key], "step": step})
    return rows


def write_metrics(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def export_embeddings(model, dataset, path, batch_size=512):
    """Write ``domain_id x_1 ... x_H`` per record; returns the row count."""
    model = model.model if isinstance(model, Checkpoint) else model
    records = dataset.records if isinstance(dataset, Dataset) else list(dataset)
    _, _, xh = model.predict(records, batch_size)
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r, v in zip(records, xh):
                fh.write(" ".join([str(r.domain_id)] + [repr(float(x)) for x in v]))
                fh.write("\n")
    except OSError as err:
        raise OSError(f"cannot write embeddings to {path}: {err.strerror}") from err
    return len(records)


def read_embeddings(path):
    dom, vecs = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            dom.append(int(parts[0]))
            vecs.append([float(x) for x in parts[1:]])
    return np.array(dom), np.array(vecs)
