from __future__ import annotations

import json
import subprocess
import sys
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srfm.data.batching import DomainBatch, make_batches
from srfm.data.records import (BehaviorEvent, Dataset, InteractionRecord, ParseError, parse_record,
                               read_records, serialize_record, write_records)
from srfm.data.synth import SynthConfig, _World, dataset_path, generate, generate_records
from srfm.data.tokenizer import tokenize

from conftest import small_synth

MINIMAL_S = {"domain_id": 1, "domain_kind": "S", "user_id": 3, "query_text": "rent bike",
             "item_id": 7, "item_title": "city bike", "y_ctr": 1, "y_sim": 0}


# --- tokenizer -------------------------------------------------------------------

def test_tokenize_empty():
    assert tokenize("", 100) == []
    assert tokenize(None, 100) == []


def test_tokenize_normalizes_case_and_spacing():
    assert tokenize("Rent Bike", 100) == tokenize("rent   bike", 100) == tokenize("rent, bike!", 100)


def test_tokenize_is_stable_across_processes():
    code = "from srfm.data.tokenizer import tokenize; print(tokenize('rent bike hotel', 1000))"
    runs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                           check=True).stdout for _ in range(2)}
    assert runs == {f"{tokenize('rent bike hotel', 1000)}\n"}


@given(st.text(max_size=60), st.integers(3, 5000))
def test_tokenize_is_total_and_in_range(text, vocab):
    ids = tokenize(text, vocab)
    assert all(2 <= i < vocab for i in ids)
    assert ids == tokenize(text, vocab)


def test_tokenize_rejects_tiny_vocab():
    with pytest.raises(ValueError):
        tokenize("x", 2)


# --- records ----------------------------------------------------------------------

def test_parse_minimal_search_record():
    rec = parse_record(json.dumps(MINIMAL_S))
    assert rec.y_ctr == 1 and rec.y_sim == 0 and rec.query_text == "rent bike"
    assert rec.history == () and rec.item_sparse == ()


def test_recommendation_with_sim_label_rejected():
    obj = {**MINIMAL_S, "domain_kind": "R", "query_text": None, "y_sim": 1}
    with pytest.raises(ParseError) as err:
        parse_record(json.dumps(obj), line_no=4)
    assert err.value.field == "y_sim" and err.value.line_no == 4
    assert "line 4" in str(err.value)


@pytest.mark.parametrize("field, value, match", [
    ("item_title", None, "item_title"),
    ("y_ctr", 2, "y_ctr"),
    ("y_ctr", True, "y_ctr"),
    ("domain_kind", "X", "domain_kind"),
    ("query_text", None, "query_text"),
    ("user_id", -1, "user_id"),
    ("item_sparse", [1, "a"], "item_sparse"),
    ("history", [{"item_id": 1, "behavior_type": "Q"}], "history"),
    ("extra", 1, "extra"),
])
def test_parse_errors_name_the_field(field, value, match):
    obj = {**MINIMAL_S, field: value}
    with pytest.raises(ParseError, match=match):
        parse_record(json.dumps(obj))


def test_missing_mandatory_field():
    obj = dict(MINIMAL_S)
    del obj["user_id"]
    with pytest.raises(ParseError, match="missing"):
        parse_record(json.dumps(obj))


def test_at_least_one_label():
    obj = {**MINIMAL_S, "y_ctr": None, "y_sim": None}
    with pytest.raises(ParseError, match="label"):
        parse_record(json.dumps(obj))


def test_invalid_json():
    with pytest.raises(ParseError, match="invalid JSON"):
        parse_record("{nope", line_no=1)


def test_behavior_type_is_binary():
    with pytest.raises(ValueError):
        BehaviorEvent(1, "X")


def test_read_records_reports_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps(MINIMAL_S) + "\n" + json.dumps({**MINIMAL_S, "y_ctr": 5}) + "\n")
    with pytest.raises(ParseError) as err:
        read_records(path)
    assert err.value.line_no == 2


def test_roundtrip_over_generated_corpus(small_corpus):
    _, corpus = small_corpus
    for recs in corpus.values():
        for rec in recs:
            line = serialize_record(rec)
            back = parse_record(line)
            assert back == rec
            assert serialize_record(back) == line


def test_serialized_field_names(small_corpus):
    _, corpus = small_corpus
    rec = corpus[(1, "train")][0]
    assert list(json.loads(serialize_record(rec))) == [
        "domain_id", "domain_kind", "user_id", "query_text", "item_id", "item_title", "history",
        "query_sparse", "item_sparse", "y_ctr", "y_sim"]


@settings(max_examples=60, deadline=None)
@given(st.fixed_dictionaries({
    "domain_id": st.integers(1, 9), "domain_kind": st.sampled_from(["S", "R", "SR"]),
    "user_id": st.integers(0, 10**6), "item_id": st.integers(0, 10**6),
    "item_title": st.text(max_size=20), "query_text": st.text(max_size=20),
    "item_sparse": st.lists(st.integers(0, 99), max_size=4),
    "y_ctr": st.sampled_from([0, 1, None]), "y_sim": st.sampled_from([0, 1, None]),
    "history": st.lists(st.builds(lambda i, t, a: {"item_id": i, "behavior_type": t, "attr_ids": a},
                                  st.integers(0, 99), st.sampled_from("SR"),
                                  st.lists(st.integers(0, 9), max_size=3)), max_size=3),
}))
def test_parse_accepts_exactly_valid_records(obj):
    if obj["domain_kind"] == "R":
        obj["query_text"] = None
    valid = obj["y_ctr"] is not None or obj["y_sim"] is not None
    valid = valid and not (obj["domain_kind"] == "R" and obj["y_sim"] is not None)
    if valid:
        rec = parse_record(json.dumps(obj))
        assert parse_record(serialize_record(rec)) == rec
    else:
        with pytest.raises(ParseError):
            parse_record(json.dumps(obj))


def test_dataset_helpers(small_corpus):
    _, corpus = small_corpus
    data = Dataset(corpus[(1, "train")] + corpus[(2, "train")])
    assert data.domains() == [1, 2]
    assert len(data.by_domain(2)) == len(corpus[(2, "train")])


# --- generator --------------------------------------------------------------------

def test_generate_is_byte_identical(tmp_path):
    sc = small_synth(seed=11)
    a = generate(sc, tmp_path / "a")
    b = generate(sc, tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    assert (tmp_path / "a" / "synth_config.json").read_bytes() == \
        (tmp_path / "b" / "synth_config.json").read_bytes()


def test_different_seeds_differ():
    a = generate_records(small_synth(seed=1))
    b = generate_records(small_synth(seed=2))
    assert a[(1, "train")] != b[(1, "train")]


def test_generated_files_validate(tmp_path):
    sc = small_synth()
    paths = generate(sc, tmp_path)
    assert set(paths) == {(k, s) for k in (1, 2, 3) for s in ("train", "eval", "test")}
    assert paths[(2, "eval")] == dataset_path(tmp_path, 2, "eval")
    for path in paths.values():
        for rec in read_records(path):
            rec.validate()


def test_domain_kinds_respected(small_corpus):
    sc, corpus = small_corpus
    for k in range(1, sc.num_domains + 1):
        for rec in corpus[(k, "train")]:
            assert rec.domain_kind == sc.kind(k)
            if rec.domain_kind == "R":
                assert rec.query_text is None and rec.y_sim is None
            else:
                assert rec.query_text
            if rec.domain_kind == "SR":
                assert rec.y_sim is None


def test_split_is_80_10_10_by_session():
    sc = small_synth(sessions=100)
    corpus = generate_records(sc)
    per = sc.impressions_per_session
    for k in range(1, 4):
        counts = [len(corpus[(k, s)]) // per for s in ("train", "eval", "test")]
        assert counts == [80, 10, 10]


def test_zero_shift_keeps_item_means():
    sc = SynthConfig(shift_strength=0.0, items_per_domain=3000, shared_item_fraction=0.0,
                     users_per_domain=5, sessions=1, vocab_size=50)
    world = _World(sc, np.random.default_rng(0))
    means = [world.items[world.domain_items[k]].mean(axis=0) for k in range(1, 4)]
    # standard error of a 3000-sample mean of unit normals is about 0.018
    for m in means[1:]:
        assert np.abs(m - means[0]).max() < 0.1


def test_shift_translates_local_items():
    sc = SynthConfig(shift_strength=2.0, items_per_domain=3000, shared_item_fraction=0.0,
                     users_per_domain=5, sessions=1, vocab_size=50)
    world = _World(sc, np.random.default_rng(0))
    means = [world.items[world.domain_items[k]].mean(axis=0) for k in range(1, 4)]
    for m in means[1:]:
        assert np.linalg.norm(m - means[0]) == pytest.approx(2.0, abs=0.15)


def test_shared_items_share_titles_not_sparse_ids(small_corpus):
    sc, corpus = small_corpus
    seen = {}
    for k in range(1, sc.num_domains + 1):
        for split in ("train", "eval", "test"):
            for rec in corpus[(k, split)]:
                seen.setdefault(rec.item_id, {})[k] = (rec.item_title, rec.item_sparse)
    shared = [v for v in seen.values() if len(v) > 1]
    assert shared
    for v in shared:
        titles = {t for t, _ in v.values()}
        sparse = [s for _, s in v.values()]
        assert len(titles) == 1
        assert len(set(sparse)) == len(sparse)


def test_base_ctr_is_realized():
    sc = SynthConfig(sessions=3400, users_per_domain=100, items_per_domain=100, base_ctr=0.3)
    corpus = generate_records(sc)
    labels = [r.y_ctr for recs in corpus.values() for r in recs]
    assert len(labels) >= 50_000
    assert abs(np.mean(labels) - 0.3) <= 0.03


def test_cold_domain_holdout():
    sc = small_synth(num_domains=4, domain_kinds=["S", "R", "SR", "S"], cold_domain=4,
                     n_cold_train=25)
    corpus = generate_records(sc)
    full = generate_records(small_synth(num_domains=4, domain_kinds=["S", "R", "SR", "S"]))
    assert len(corpus[(4, "train")]) == 25
    assert corpus[(4, "test")] == full[(4, "test")]
    assert len(corpus[(1, "train")]) == len(full[(1, "train")])


def test_heterogeneous_aspects_corrupt_two_of_three():
    sc = small_synth(heterogeneous_aspects=True)
    corpus = generate_records(sc)
    # rebuild the latent world exactly as the generator does
    world_seed = np.random.SeedSequence(sc.seed).spawn(sc.num_domains + 1)[0]
    world = _World(sc, np.random.default_rng(world_seed))
    titles = set(world.titles)
    for k, keep in ((1, "id"), (2, "title"), (3, "sparse")):
        recs = corpus[(k, "train")]
        local = set(world.domain_items[k].tolist())
        id_ok = np.mean([r.item_id in local for r in recs])
        title_ok = np.mean([r.item_title == world.titles[r.item_id] for r in recs])
        real_title = np.mean([r.item_title in titles for r in recs])
        if keep == "id":
            assert id_ok == 1.0 and title_ok < 0.2
        elif keep == "title":
            assert real_title == 1.0 and id_ok < 0.9 and title_ok < 0.2
        else:
            assert real_title < 0.2 and id_ok < 0.9


@pytest.mark.parametrize("bad", [dict(shared_item_fraction=1.5), dict(base_ctr=0.0),
                                 dict(num_domains=0), dict(cold_domain=7),
                                 dict(domain_kinds=["X"]), dict(shift_strength=-1.0)])
def test_synth_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_synth_config_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"K": 3})
    assert SynthConfig.from_dict(SynthConfig().to_dict()) == SynthConfig()


# --- batching -----------------------------------------------------------------------

def test_epoch_covers_every_record_once(small_corpus):
    _, corpus = small_corpus
    data = Dataset([r for k in (1, 2, 3) for r in corpus[(k, "train")]])
    batches = make_batches(data, 17, epoch_seed=3)
    ids = np.concatenate([b.record_ids for b in batches])
    assert sorted(ids.tolist()) == list(range(len(data)))
    assert all(len(b) == 17 for b in batches[:-1])


def test_same_epoch_seed_same_batches(small_corpus):
    _, corpus = small_corpus
    data = Dataset(corpus[(1, "train")] + corpus[(2, "train")])
    a = [b.record_ids.tolist() for b in make_batches(data, 8, 5)]
    b = [b.record_ids.tolist() for b in make_batches(data, 8, 5)]
    c = [b.record_ids.tolist() for b in make_batches(data, 8, 6)]
    assert a == b and a != c


def test_single_domain_batches_are_rare():
    recs = [InteractionRecord(domain_id=k, domain_kind="R", user_id=i, item_id=i, item_title="t",
                              y_ctr=0) for k in (1, 2, 3) for i in range(640)]
    single = total = 0
    for seed in range(50):
        for b in make_batches(recs, 64, seed):
            total += 1
            single += len(b.partitions) == 1
    assert single / total < 0.01


def test_batch_size_must_be_at_least_two():
    with pytest.raises(ValueError):
        make_batches([], 1, 0)


def test_domain_batch_partitions_and_masks():
    recs = [InteractionRecord(domain_id=2, domain_kind="R", user_id=1, item_id=1, item_title="a", y_ctr=1),
            InteractionRecord(domain_id=1, domain_kind="S", user_id=1, item_id=1, item_title="a",
                              query_text="q", y_sim=1),
            InteractionRecord(domain_id=2, domain_kind="R", user_id=2, item_id=3, item_title="b", y_ctr=0)]
    batch = DomainBatch.from_records(recs)
    assert {k: v.tolist() for k, v in batch.partitions.items()} == {1: [1], 2: [0, 2]}
    assert batch.ctr_mask.tolist() == [True, False, True]
    assert batch.sim_mask.tolist() == [False, True, False]
    assert Counter(batch.domain_ids.tolist()) == {2: 2, 1: 1}


def test_write_records_validates(tmp_path):
    bad = InteractionRecord(domain_id=1, domain_kind="R", user_id=1, item_id=1, item_title="a",
                            y_ctr=1, y_sim=1)
    with pytest.raises(ParseError):
        write_records(tmp_path / "x.jsonl", [bad])
