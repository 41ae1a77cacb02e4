from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from sklearn.base import clone

from srfm.data.records import serialize_record, write_records
from srfm.data.synth import generate_records
from srfm.estimator import NotFittedError, SRFoundationModel, check_labels, check_records

from conftest import small_model_config, small_synth, split

SMALL = dict(L_q_max=4, L_i_max=6, behavior_max=3, vocab_size=64, query_vocab=16,
             trunk_width=8, head_width=4)


def make_estimator(sc, **overrides):
    cfg = small_model_config(sc)
    params = {**SMALL, "user_vocab": cfg.user_vocab, "item_vocab": cfg.item_vocab,
              "sparse_vocab": cfg.sparse_vocab}
    base = dict(embed_dim=4, hidden_dim=4, expert_count=2, epochs=2, batch_size=32,
                learning_rate=3e-3, model_params=params)
    return SRFoundationModel(**{**base, **overrides})


@pytest.fixture(scope="module")
def fitted(small_corpus):
    sc, corpus = small_corpus
    est = make_estimator(sc).fit(split(corpus, "train", [1, 2, 3]),
                                 eval_set=split(corpus, "eval", [1, 2, 3]))
    return sc, corpus, est


def test_fit_sets_attributes(fitted):
    _, _, est = fitted
    assert est.domains_ == [1, 2, 3]
    assert est.classes_.tolist() == [0, 1]
    assert est.n_params_ > 0


def test_predict_shapes_and_ranges(fitted):
    _, corpus, est = fitted
    test = split(corpus, "test", [1, 2, 3])
    proba = est.predict_proba(test)
    assert proba.shape == (len(test), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert ((proba >= 0) & (proba <= 1)).all()
    assert est.predict(test).tolist() == (proba[:, 1] >= 0.5).astype(int).tolist()
    assert est.transform(test).shape == (len(test), 4)
    assert est.relevance_proba(test).shape == (len(test),)


def test_score_matches_evaluate(fitted):
    _, corpus, est = fitted
    test = split(corpus, "test", [1, 2, 3])
    report = est.evaluate(test)
    aucs = [v["ctr_auc"] for v in report["domains"].values() if v["ctr_auc"] is not None]
    assert est.score(test) == pytest.approx(np.mean(aucs), abs=0)
    with pytest.raises(ValueError, match="sample_weight"):
        est.score(test, sample_weight=np.ones(len(test)))


def test_accepts_dicts_and_paths(fitted, tmp_path):
    import json
    _, corpus, est = fitted
    records = corpus[(1, "test")]
    dicts = [json.loads(serialize_record(r)) for r in records]
    path = tmp_path / "x.jsonl"
    write_records(path, records)
    base = est.predict_proba(records)
    assert est.predict_proba(dicts).tobytes() == base.tobytes()
    assert est.predict_proba(path).tobytes() == base.tobytes()
    assert est.predict_proba(str(path)).tobytes() == base.tobytes()


def test_labels_from_y_override_records(small_corpus):
    _, corpus = small_corpus
    records = corpus[(1, "train")]
    y = np.array([1 - r.y_ctr for r in records])
    out = check_labels(records, y)
    assert [r.y_ctr for r in out] == y.tolist()
    assert [r.y_ctr for r in records] != y.tolist()   # input not mutated


@pytest.mark.parametrize("bad_y, match", [
    (np.zeros(3), "entries"),
    (np.full(0, 1), "entries"),
    ("twos", "binary"),
])
def test_label_validation(small_corpus, bad_y, match):
    _, corpus = small_corpus
    records = corpus[(1, "train")]
    if isinstance(bad_y, str):
        bad_y = np.full(len(records), 2)
    with pytest.raises(ValueError, match=match):
        check_labels(records, bad_y)


def test_unlabelled_records_need_y(small_corpus):
    _, corpus = small_corpus
    records = [dataclasses.replace(r, y_ctr=None) for r in corpus[(1, "train")]]
    with pytest.raises(ValueError, match="no CTR labels"):
        check_labels(records)


def test_record_validation_errors(small_corpus):
    _, corpus = small_corpus
    with pytest.raises(ValueError, match="no records"):
        check_records([])
    with pytest.raises(TypeError, match="single record"):
        check_records(corpus[(1, "train")][0])
    with pytest.raises(TypeError, match="expected a record or dict"):
        check_records([1, 2])
    with pytest.raises(TypeError, match="got int"):
        check_records(5)
    with pytest.raises(ValueError, match=r"X\[0\]"):
        check_records([{"domain_id": 1}])


def test_not_fitted(small_corpus):
    sc, corpus = small_corpus
    est = make_estimator(sc)
    with pytest.raises(NotFittedError):
        est.predict_proba(corpus[(1, "test")])
    with pytest.raises(NotFittedError):
        est.save("unused.srfm")


def test_unknown_domain_rejected(fitted):
    _, corpus, est = fitted
    rec = dataclasses.replace(corpus[(1, "test")][0], domain_id=7)
    with pytest.raises(ValueError, match=r"\[7\]"):
        est.predict_proba([rec])


def test_predict_on_empty(fitted):
    _, _, est = fitted
    assert est.predict_proba([]).shape == (0, 2)


def test_fit_is_deterministic(small_corpus, fitted):
    sc, corpus, est = fitted
    again = make_estimator(sc).fit(split(corpus, "train", [1, 2, 3]),
                                   eval_set=split(corpus, "eval", [1, 2, 3]))
    test = split(corpus, "test", [1, 2, 3])
    assert again.predict_proba(test).tobytes() == est.predict_proba(test).tobytes()


def test_get_params_and_clone(fitted):
    _, _, est = fitted
    params = est.get_params()
    assert params["gating_strategy"] == "domain" and params["epochs"] == 2
    fresh = clone(est)
    assert not hasattr(fresh, "checkpoint_")
    assert fresh.get_params() == params
    fresh.set_params(divergence="mmd")
    assert fresh.divergence == "mmd" and est.divergence == "js"


def test_save_load_roundtrip(fitted, tmp_path):
    _, corpus, est = fitted
    path = est.save(tmp_path / "m.srfm")
    loaded = SRFoundationModel.load(path, epochs=1)
    test = split(corpus, "test", [1, 2, 3])
    assert loaded.predict_proba(test).tobytes() == est.predict_proba(test).tobytes()
    assert loaded.epochs == 1 and loaded.domains_ == est.domains_


def test_finetune_returns_new_estimator():
    sc = small_synth(num_domains=4, domain_kinds=["S", "R", "SR", "S"], cold_domain=4, n_cold_train=60)
    corpus = generate_records(sc)
    base = make_estimator(sc).fit(split(corpus, "train", [1, 2, 3]))
    tuned = base.finetune(corpus[(4, "train")], split="freeze_L0")
    assert tuned is not base
    assert base.domains_ == [1, 2, 3] and tuned.domains_ == [1, 2, 3, 4]
    assert tuned.predict_proba(corpus[(4, "test")]).shape == (len(corpus[(4, "test")]), 2)
    with pytest.raises(ValueError, match=r"\[4\]"):
        base.predict_proba(corpus[(4, "test")])
