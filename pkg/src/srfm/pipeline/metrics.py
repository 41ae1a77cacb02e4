from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels):
    """Rank-sum (Mann-Whitney) AUC with ties counted as one half.

    Returns None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def centroid_spread(vectors, domain_ids):
    """Mean pairwise Euclidean distance between per-domain centroids."""
    vectors = np.asarray(vectors)
    domain_ids = np.asarray(domain_ids)
    cents = [vectors[domain_ids == d].mean(axis=0) for d in np.unique(domain_ids)]
    dists = [np.linalg.norm(a - b) for i, a in enumerate(cents) for b in cents[i + 1:]]
    return float(np.mean(dists)) if dists else 0.0
