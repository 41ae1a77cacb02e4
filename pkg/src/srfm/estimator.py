"""scikit-learn style facade: fit / predict_proba / transform over the pipeline."""

from __future__ import annotations

import copy
import dataclasses
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig, OptimConfig, TrainConfig
from .data.records import Dataset, InteractionRecord, ParseError, read_records, record_from_dict
from .pipeline import evaluate, finetune, load_checkpoint, pretrain, save_checkpoint


def check_records(X, *, name="X", allow_empty=False):
    """Coerce ``X`` to a list of validated :class:`InteractionRecord`.

    Accepts a Dataset, an iterable of records or plain dicts, or a path to a
    JSONL file.
    """
    if isinstance(X, (str, Path)):
        records = read_records(X)
    elif isinstance(X, Dataset):
        records = list(X.records)
    elif isinstance(X, InteractionRecord):
        raise TypeError(f"{name} must be a collection of records, got a single record")
    else:
        try:
            items = list(X)
        except TypeError:
            raise TypeError(f"{name} must be records, dicts, a Dataset or a path; "
                            f"got {type(X).__name__}") from None
        records = []
        for i, item in enumerate(items):
            if isinstance(item, InteractionRecord):
                item.validate()
                records.append(item)
            elif isinstance(item, dict):
                try:
                    records.append(record_from_dict(item))
                except ParseError as err:
                    raise ValueError(f"{name}[{i}]: {err.message}") from None
            else:
                raise TypeError(f"{name}[{i}] is {type(item).__name__}, expected a record or dict")
    if not records and not allow_empty:
        raise ValueError(f"{name} holds no records")
    return records


def check_labels(records, y=None, *, name="y"):
    """Attach ``y`` as CTR labels, or check that every record already carries one."""
    if y is None:
        missing = sum(r.y_ctr is None for r in records)
        if missing == len(records):
            raise ValueError("no CTR labels: pass y or records with y_ctr")
        return records
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(records):
        raise ValueError(f"{name} must be 1-d with {len(records)} entries, got shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError(f"{name} must be binary 0/1")
    return [dataclasses.replace(r, y_ctr=int(v)) for r, v in zip(records, y)]


class SRFoundationModel(ClassifierMixin, BaseEstimator):
    """Multi-domain CTR model.

    ``X`` is a collection of interaction records (see :func:`check_records`).
    Domain ids in the training data must be exactly ``1..num_domains``.
    ``model_params`` passes any further :class:`ModelConfig` field.
    """

    def __init__(self, embed_dim=16, hidden_dim=16, gating_strategy="domain", divergence="js",
                 lambda_reg=1.0, mtl_kind="mmoe", domain_adaptive=True, expert_count=4,
                 text_encoder="mean_pool", epochs=5, batch_size=128, learning_rate=1e-3,
                 random_state=0, model_params=None):
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.gating_strategy = gating_strategy
        self.divergence = divergence
        self.lambda_reg = lambda_reg
        self.mtl_kind = mtl_kind
        self.domain_adaptive = domain_adaptive
        self.expert_count = expert_count
        self.text_encoder = text_encoder
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.model_params = model_params

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.random_state,
                           optim=OptimConfig(lr=self.learning_rate))

    def _model_config(self, num_domains):
        return ModelConfig(
            embed_dim=self.embed_dim, hidden_dim=self.hidden_dim, num_domains=num_domains,
            gating_strategy=self.gating_strategy, divergence=self.divergence,
            lambda_reg=self.lambda_reg, mtl_kind=self.mtl_kind,
            domain_adaptive=self.domain_adaptive, expert_count=self.expert_count,
            text_encoder=self.text_encoder, **(self.model_params or {}))

    def fit(self, X, y=None, eval_set=None):
        records = check_labels(check_records(X), y)
        eval_records = check_records(eval_set, name="eval_set") if eval_set is not None else None
        domains = sorted({r.domain_id for r in records})
        self.checkpoint_ = pretrain(self._model_config(len(domains)), records, eval_records,
                                    self._train_config())
        self._set_fitted_attrs()
        return self

    def finetune(self, X, y=None, split="freeze_L0_L1", eval_set=None):
        """A new fitted estimator adapted to the single cold domain in ``X``."""
        check_is_fitted(self, "checkpoint_")
        records = check_labels(check_records(X), y)
        eval_records = check_records(eval_set, name="eval_set") if eval_set is not None else None
        out = copy.copy(self)
        out.checkpoint_ = finetune(self.checkpoint_, split, records, eval_records,
                                   self._train_config())
        out._set_fitted_attrs()
        return out

    def _set_fitted_attrs(self):
        self.classes_ = np.array([0, 1])
        self.domains_ = list(self.checkpoint_.model.domains)
        self.n_params_ = self.checkpoint_.store.n_scalars()

    def _predict_all(self, X):
        check_is_fitted(self, "checkpoint_")
        records = check_records(X, allow_empty=True)
        unknown = sorted({r.domain_id for r in records} - set(self.domains_))
        if unknown:
            raise ValueError(f"domain ids {unknown} were not seen in training")
        return self.checkpoint_.model.predict(records)

    def predict_proba(self, X):
        """(n, 2) click probabilities, columns ordered as ``classes_``."""
        p = self._predict_all(X)[0]
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self._predict_all(X)[0] >= 0.5).astype(int)

    def relevance_proba(self, X):
        """Query-item relevance probabilities (meaningful for search records)."""
        return self._predict_all(X)[1]

    def transform(self, X):
        """Domain-adapted representation, shape (n, hidden_dim)."""
        return self._predict_all(X)[2]

    def score(self, X, y=None, sample_weight=None):
        """Mean per-domain CTR AUC (domains with a single label class are skipped)."""
        if sample_weight is not None:
            raise ValueError("sample_weight is not supported")
        check_is_fitted(self, "checkpoint_")
        records = check_labels(check_records(X), y)
        report = evaluate(self.checkpoint_, records)
        aucs = [v["ctr_auc"] for v in report["domains"].values() if v["ctr_auc"] is not None]
        if not aucs:
            raise ValueError("AUC undefined: every domain holds a single label class")
        return float(np.mean(aucs))

    def evaluate(self, X):
        check_is_fitted(self, "checkpoint_")
        return evaluate(self.checkpoint_, check_records(X))

    def save(self, path):
        check_is_fitted(self, "checkpoint_")
        return save_checkpoint(self.checkpoint_, path)

    @classmethod
    def load(cls, path, **params):
        """Estimator wrapping a saved checkpoint; ``params`` set training options for finetune."""
        ckpt = load_checkpoint(path)
        cfg = ckpt.config
        est = cls(embed_dim=cfg.embed_dim, hidden_dim=cfg.hidden_dim,
                  gating_strategy=cfg.gating_strategy, divergence=cfg.divergence,
                  lambda_reg=cfg.lambda_reg, mtl_kind=cfg.mtl_kind,
                  domain_adaptive=cfg.domain_adaptive, expert_count=cfg.expert_count,
                  text_encoder=cfg.text_encoder, **params)
        est.checkpoint_ = ckpt
        est._set_fitted_attrs()
        return est


__all__ = ["NotFittedError", "SRFoundationModel", "check_labels", "check_records"]
