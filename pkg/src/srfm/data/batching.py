from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DomainBatch:
    """A minibatch with per-domain partitions and per-task label masks."""

    records: list
    record_ids: np.ndarray
    partitions: dict  # domain id -> positions within the batch
    ctr_mask: np.ndarray
    sim_mask: np.ndarray
    y_ctr: np.ndarray
    y_sim: np.ndarray

    def __len__(self):
        return len(self.records)

    @property
    def domain_ids(self):
        return np.array([r.domain_id for r in self.records], dtype=np.int64)

    @classmethod
    def from_records(cls, records, record_ids=None):
        records = list(records)
        if record_ids is None:
            record_ids = np.arange(len(records))
        partitions: dict[int, list[int]] = {}
        for pos, r in enumerate(records):
            partitions.setdefault(r.domain_id, []).append(pos)
        ctr_mask = np.array([r.y_ctr is not None for r in records], dtype=bool)
        sim_mask = np.array([r.y_sim is not None for r in records], dtype=bool)
        y_ctr = np.array([r.y_ctr or 0 for r in records], dtype=np.float64)
        y_sim = np.array([r.y_sim or 0 for r in records], dtype=np.float64)
        return cls(records, np.asarray(record_ids, dtype=np.int64),
                   {k: np.array(v, dtype=np.int64) for k, v in sorted(partitions.items())},
                   ctr_mask, sim_mask, y_ctr, y_sim)


def make_batches(dataset, batch_size, epoch_seed):
    """Shuffle the pooled multi-domain records, then slice contiguously."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    records = dataset.records if hasattr(dataset, "records") else list(dataset)
    order = np.random.default_rng(epoch_seed).permutation(len(records))
    batches = []
    for start in range(0, len(order), batch_size):
        ids = order[start:start + batch_size]
        batches.append(DomainBatch.from_records([records[i] for i in ids], ids))
    return batches
