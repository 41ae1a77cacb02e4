"""Deterministic synthetic multi-domain click logs with controllable shift.

Users and items carry latent trait vectors. Item titles and queries are
sampled from a word vocabulary whose words have their own trait vectors, so
text carries signal that is the same in every domain. Each domain's local
items are translated along a domain direction (covariate shift); an optional
per-domain rotation of the user-item affinity adds conditional shift.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .records import BehaviorEvent, InteractionRecord, write_records

SPLITS = ("train", "eval", "test")
_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "ta", "vi", "zo", "be", "du",
              "fa", "go", "hi", "ju", "pe", "sa", "to", "wu", "xe", "yo")


@dataclass
class SynthConfig:
    num_domains: int = 3
    domain_kinds: list = field(default_factory=lambda: ["S", "R", "SR"])
    users_per_domain: int = 400
    items_per_domain: int = 300
    shared_item_fraction: float = 0.3
    vocab_size: int = 400
    shift_strength: float = 1.0
    conditional_shift: float = 0.0
    base_ctr: float = 0.3
    sessions: int = 1000
    impressions_per_session: int = 5
    queries_per_domain: int = 120
    trait_dim: int = 4
    history_len: int = 6
    sparse_per_domain: int = 12
    heterogeneous_aspects: bool = False
    cold_domain: int | None = None
    n_cold_train: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.num_domains < 1:
            raise ValueError("num_domains must be >= 1")
        if not 0.0 <= self.shared_item_fraction <= 1.0:
            raise ValueError("shared_item_fraction must lie in [0, 1]")
        if not 0.0 < self.base_ctr < 1.0:
            raise ValueError("base_ctr must lie in (0, 1)")
        if not 0.0 <= self.conditional_shift <= 1.0:
            raise ValueError("conditional_shift must lie in [0, 1]")
        if self.shift_strength < 0:
            raise ValueError("shift_strength must be >= 0")
        if self.cold_domain is not None and not 1 <= self.cold_domain <= self.num_domains:
            raise ValueError("cold_domain must be a domain id in 1..num_domains")
        for kind in self.domain_kinds:
            if kind not in ("S", "R", "SR"):
                raise ValueError(f"unknown domain kind {kind!r}")
        if not self.domain_kinds:
            raise ValueError("domain_kinds must not be empty")

    def kind(self, k):
        return self.domain_kinds[(k - 1) % len(self.domain_kinds)]

    @property
    def n_items(self):
        n_shared = int(round(self.items_per_domain * self.shared_item_fraction))
        return n_shared + self.num_domains * (self.items_per_domain - n_shared)

    @property
    def n_sparse(self):
        return (self.num_domains + 1) * self.sparse_per_domain

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**data)


def _word(j):
    n = len(_SYLLABLES)
    parts = [_SYLLABLES[j % n], _SYLLABLES[(j // n) % n]]
    if j >= n * n:
        parts.append(str(j // (n * n)))
    return "".join(parts)


def _sample_words(rng, weights, n):
    idx = rng.choice(len(weights), size=n, replace=True, p=weights)
    return " ".join(_word(int(j)) for j in idx)


def _softmax(x):
    z = np.exp(x - x.max())
    return z / z.sum()


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _calibrate_intercept(logits, target):
    lo, hi = -30.0, 30.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if _sigmoid(mid + logits).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class _World:
    """Latent state shared by every domain of one corpus."""

    def __init__(self, cfg: SynthConfig, rng):
        dim = cfg.trait_dim
        self.cfg = cfg
        self.users = rng.normal(size=(cfg.users_per_domain, dim))
        self.word_traits = rng.normal(size=(cfg.vocab_size, dim))
        n_shared = int(round(cfg.items_per_domain * cfg.shared_item_fraction))
        n_local = cfg.items_per_domain - n_shared
        directions = rng.normal(size=(cfg.num_domains, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        traits = [rng.normal(size=(n_shared, dim))]
        self.domain_items = {}
        shared_ids = np.arange(n_shared)
        offset = n_shared
        for k in range(1, cfg.num_domains + 1):
            # domain 1 is the unshifted reference
            shift = 0.0 if k == 1 else cfg.shift_strength
            local = rng.normal(size=(n_local, dim)) + shift * directions[k - 1]
            traits.append(local)
            self.domain_items[k] = np.concatenate([shared_ids, np.arange(offset, offset + n_local)])
            offset += n_local
        self.items = np.concatenate(traits, axis=0)
        self.home = np.zeros(len(self.items), dtype=np.int64)
        for k, ids in self.domain_items.items():
            self.home[ids[n_shared:]] = k
        self.home[:n_shared] = 1
        self.titles = [self._text(rng, self.items[i], 3, 6) for i in range(len(self.items))]
        self.centroids = {k: rng.normal(size=(cfg.sparse_per_domain, dim)) for k in range(1, cfg.num_domains + 1)}
        self.mixers = {}
        for k in range(1, cfg.num_domains + 1):
            q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
            mix = 0.0 if k == 1 else cfg.conditional_shift
            self.mixers[k] = (1.0 - mix) * np.eye(dim) + mix * q
        self.queries = {}
        for k in range(1, cfg.num_domains + 1):
            if cfg.kind(k) == "R":
                continue
            intents = rng.normal(size=(cfg.queries_per_domain, dim))
            texts = [self._text(rng, t, 1, 3) for t in intents]
            self.queries[k] = (intents, texts)
        self.histories = [self._history(rng, u) for u in range(len(self.users))]

    def _text(self, rng, trait, lo, hi):
        weights = _softmax(1.5 * self.word_traits @ trait / np.sqrt(len(trait)))
        return _sample_words(rng, weights, int(rng.integers(lo, hi + 1)))

    def sparse_ids(self, item, k):
        c = int(np.argmax(self.centroids[k] @ self.items[item]))
        return ((k - 1) * self.cfg.sparse_per_domain + c,)

    def query_sparse(self, intent, k):
        c = int(np.argmax(self.centroids[k] @ intent))
        return (self.cfg.num_domains * self.cfg.sparse_per_domain + c % self.cfg.sparse_per_domain,)

    def _history(self, rng, u):
        cand = rng.choice(len(self.items), size=min(50, len(self.items)), replace=False)
        scores = self.items[cand] @ self.users[u] / np.sqrt(self.cfg.trait_dim)
        picks = rng.choice(cand, size=self.cfg.history_len, replace=True, p=_softmax(1.5 * scores))
        events = []
        for item in picks:
            k = int(self.home[item])
            kind = "S" if rng.random() < 0.5 else "R"
            events.append(BehaviorEvent(int(item), kind, self.sparse_ids(int(item), k)))
        return tuple(events)


def _domain_sessions(cfg, world, k, rng):
    """Latent sessions of one domain: list of (user, query index or None, items)."""
    dim = cfg.trait_dim
    items = world.domain_items[k]
    sessions = []
    for _ in range(cfg.sessions):
        u = int(rng.integers(len(world.users)))
        q = None
        weights = None
        if k in world.queries:
            intents = world.queries[k][0]
            q = int(rng.choice(len(intents), p=_softmax(intents @ world.users[u] / np.sqrt(dim))))
            weights = _softmax(0.5 * world.items[items] @ intents[q] / np.sqrt(dim))
        picks = rng.choice(items, size=cfg.impressions_per_session, replace=False
                           if len(items) >= cfg.impressions_per_session else True, p=weights)
        sessions.append((u, q, [int(i) for i in picks]))
    return sessions


def generate_records(cfg: SynthConfig):
    """All records of the corpus as ``{(domain_id, split): [records]}``."""
    root = np.random.SeedSequence(cfg.seed)
    world_seed, *domain_seeds = root.spawn(cfg.num_domains + 1)
    world = _World(cfg, np.random.default_rng(world_seed))
    dim = cfg.trait_dim
    out = {}
    for k in range(1, cfg.num_domains + 1):
        rng = np.random.default_rng(domain_seeds[k - 1])
        kind = cfg.kind(k)
        sessions = _domain_sessions(cfg, world, k, rng)
        mixer = world.mixers[k]
        logits, matches = [], []
        for u, q, items in sessions:
            for i in items:
                affinity = world.users[u] @ mixer @ world.items[i] / np.sqrt(dim)
                match = 0.0 if q is None else world.queries[k][0][q] @ world.items[i] / np.sqrt(dim)
                logits.append(1.5 * affinity + 1.5 * match)
                matches.append(match)
        logits = np.asarray(logits)
        intercept = _calibrate_intercept(logits, cfg.base_ctr)
        y_ctr = (rng.random(len(logits)) < _sigmoid(intercept + logits)).astype(int)
        y_sim = (rng.random(len(logits)) < _sigmoid(2.5 * np.asarray(matches))).astype(int)
        corrupt = set(range(3)) - {(k - 1) % 3} if cfg.heterogeneous_aspects else set()

        by_session = []
        pos = 0
        for u, q, items in sessions:
            recs = []
            for i in items:
                item_id, title, sparse = i, world.titles[i], world.sparse_ids(i, k)
                if 0 in corrupt:
                    item_id = int(rng.integers(world.items.shape[0]))
                if 1 in corrupt:
                    title = _sample_words(rng, np.full(cfg.vocab_size, 1.0 / cfg.vocab_size),
                                          int(rng.integers(3, 7)))
                if 2 in corrupt:
                    sparse = ((k - 1) * cfg.sparse_per_domain + int(rng.integers(cfg.sparse_per_domain)),)
                query_text, query_sparse, sim = None, (), None
                if q is not None:
                    query_text = world.queries[k][1][q]
                    query_sparse = world.query_sparse(world.queries[k][0][q], k)
                    if kind == "S":
                        sim = int(y_sim[pos])
                recs.append(InteractionRecord(
                    domain_id=k, domain_kind=kind, user_id=u, item_id=item_id,
                    item_title=title, query_text=query_text,
                    history=world.histories[u], query_sparse=query_sparse,
                    item_sparse=sparse, y_ctr=int(y_ctr[pos]), y_sim=sim))
                pos += 1
            by_session.append(recs)

        order = rng.permutation(len(by_session))
        n_train = int(round(0.8 * len(order)))
        n_eval = int(round(0.1 * len(order)))
        parts = {"train": order[:n_train], "eval": order[n_train:n_train + n_eval],
                 "test": order[n_train + n_eval:]}
        for split, idx in parts.items():
            recs = [r for s in sorted(idx) for r in by_session[s]]
            if split == "train" and cfg.cold_domain == k:
                recs = recs[:cfg.n_cold_train]
            out[(k, split)] = recs
    return out


def dataset_path(out_dir, k, split):
    return Path(out_dir) / f"domain_{k}.{split}.jsonl"


def generate(cfg: SynthConfig, out_dir):
    """Write per-domain train/eval/test files plus the config; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = generate_records(cfg)
    paths = {}
    for (k, split), recs in corpus.items():
        path = dataset_path(out_dir, k, split)
        write_records(path, recs)
        paths[(k, split)] = path
    with open(out_dir / "synth_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
