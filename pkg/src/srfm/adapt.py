"""Domain-adaptive projection, divergence regularizers, multi-task trunk and heads."""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .towers import ParamSpec

TASKS = ("ctr", "sim")


def param_specs(cfg, n_domains=None):
    hidden, width, head_w, n_experts = cfg.hidden_dim, cfg.trunk_width, cfg.head_width, cfg.expert_count
    n_domains = cfg.num_domains if n_domains is None else n_domains
    yield ParamSpec("domain.E", (cfg.num_domains, hidden), "L0", "domain")
    if cfg.domain_adaptive:
        for k in range(1, n_domains + 1):
            yield ParamSpec(f"adapt.W.{k}", (4 * hidden, hidden), "L2plus", "dense")
    else:
        yield ParamSpec("adapt.W.shared", (4 * hidden, hidden), "L2plus", "dense")
    if cfg.mtl_kind == "mlp":
        for task in TASKS:
            yield from _mlp2_specs(f"trunk.{task}", hidden, width)
    elif cfg.mtl_kind == "shared_bottom":
        yield from _mlp2_specs("trunk.shared", hidden, width)
    else:
        for e in range(n_experts):
            yield ParamSpec(f"trunk.expert{e}.W", (hidden, width), "L2plus", "dense")
            yield ParamSpec(f"trunk.expert{e}.b", (1, width), "L2plus", "zeros")
        for task in TASKS:
            yield ParamSpec(f"trunk.gate.{task}.W", (hidden, n_experts), "L2plus", "dense")
            yield ParamSpec(f"trunk.gate.{task}.b", (1, n_experts), "L2plus", "zeros")
    for task in TASKS:
        yield ParamSpec(f"head.{task}.W1", (width, head_w), "L2plus", "dense")
        yield ParamSpec(f"head.{task}.b1", (1, head_w), "L2plus", "zeros")
        yield ParamSpec(f"head.{task}.W2", (head_w, 1), "L2plus", "dense")
        yield ParamSpec(f"head.{task}.b2", (1, 1), "L2plus", "zeros")


def _mlp2_specs(prefix, n_in, width):
    yield ParamSpec(f"{prefix}.W1", (n_in, width), "L2plus", "dense")
    yield ParamSpec(f"{prefix}.b1", (1, width), "L2plus", "zeros")
    yield ParamSpec(f"{prefix}.W2", (width, width), "L2plus", "dense")
    yield ParamSpec(f"{prefix}.b2", (1, width), "L2plus", "zeros")


# --- domain-adaptive layer ---------------------------------------------------

def domain_adapt(g, param, cfg, x, domain_index, domain_emb):
    """x_hat = W_k (x ⊕ E_{D_k}) row by row.

    Returns ``(x_hat, blocks)`` where ``blocks`` maps each present 0-based
    domain index to the (n_k, H) node of its rows, in batch order.
    """
    idx = np.asarray(domain_index, dtype=np.int64)
    n_domains = domain_emb.value.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_domains):
        raise ValueError(f"domain index out of range for {n_domains} domains")
    present = np.unique(idx)
    blocks, order = {}, []
    for d in present:
        pos = np.flatnonzero(idx == d)
        xk = x if len(present) == 1 else g.embedding_lookup(x, pos)
        ed = g.embedding_lookup(domain_emb, np.full(len(pos), d))
        w = param(f"adapt.W.{d + 1}") if cfg.domain_adaptive else param("adapt.W.shared")
        blocks[int(d)] = g.matmul(g.concat([xk, ed]), w)
        order.append(pos)
    if len(present) == 1:
        return blocks[int(present[0])], blocks
    stacked = g.concat([blocks[int(d)] for d in present], axis=0)
    inverse = np.argsort(np.concatenate(order), kind="stable")
    return g.embedding_lookup(stacked, inverse), blocks


# --- divergences -------------------------------------------------------------

def js_from_probabilities(g, p, q):
    """JS(p‖q) for (1, H) probability nodes with strictly positive entries."""
    m = g.scale(g.add(p, q), 0.5)
    log_m = g.log(m)
    kl_p = g.sum(g.mul(p, g.sub(g.log(p), log_m)))
    kl_q = g.sum(g.mul(q, g.sub(g.log(q), log_m)))
    return g.scale(g.add(kl_p, kl_q), 0.5)


def js_divergence(g, batch_a, batch_b):
    """JS between the batch-mean softmax distributions of two adapted batches."""
    p = g.mean_rows(g.softmax(batch_a))
    q = g.mean_rows(g.softmax(batch_b))
    return js_from_probabilities(g, p, q)


def jensen_shannon(p, q):
    """Plain-array JS for probability vectors; 0·log 0 is taken as 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def median_bandwidth(values_a, values_b):
    pooled = np.vstack([values_a, values_b])
    diff = pooled[:, None, :] - pooled[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(len(pooled), k=1)
    sigma = float(np.median(dist[iu]))
    return sigma if sigma > 0 else 1.0


def _kernel_mean(g, A, B, gamma):
    """Mean RBF kernel over all (a, b) pairs, from explicit row differences."""
    n, m = A.value.shape[0], B.value.shape[0]
    rows_a = g.embedding_lookup(A, np.repeat(np.arange(n), m))
    rows_b = g.embedding_lookup(B, np.tile(np.arange(m), n))
    diff = g.sub(rows_a, rows_b)
    k = g.exp(g.scale(g.sum(g.mul(diff, diff), axis=1), -gamma))
    return g.scale(g.sum(k), 1.0 / (n * m))


def mmd(g, batch_a, batch_b, sigma=None):
    """Biased RBF-kernel MMD²; ``sigma`` defaults to the median heuristic (gradient-stopped)."""
    if sigma is None:
        sigma = median_bandwidth(batch_a.value, batch_b.value)
    if not sigma > 0:
        raise ValueError(f"bandwidth must be > 0, got {sigma}")
    # fixed operand order so that mmd(a, b) and mmd(b, a) run the same arithmetic
    key = lambda n: (n.value.shape, n.value.tobytes())
    if key(batch_b) < key(batch_a):
        batch_a, batch_b = batch_b, batch_a
    gamma = 1.0 / (2.0 * sigma * sigma)
    k_pp = _kernel_mean(g, batch_a, batch_a, gamma)
    k_qq = _kernel_mean(g, batch_b, batch_b, gamma)
    k_pq = _kernel_mean(g, batch_a, batch_b, gamma)
    # exact value is >= 0; relu removes roundoff residue of order 1e-16
    return g.relu(g.add(g.add(k_pp, k_qq), g.scale(k_pq, -2.0)))


def domain_reg(g, blocks, kind, sigma=None):
    """Sum of pairwise divergences over co-present domains (i < j); None if no term."""
    if kind == "none":
        return None
    if kind not in ("js", "mmd"):
        raise ValueError(f"unknown divergence {kind!r}")
    total = None
    for i, j in combinations(sorted(blocks), 2):
        if kind == "js":
            term = js_divergence(g, blocks[i], blocks[j])
        else:
            term = mmd(g, blocks[i], blocks[j], sigma)
        total = term if total is None else g.add(total, term)
    return total


# --- multi-task trunk and heads -----------------------------------------------

def _mlp2(g, param, prefix, x):
    h = g.relu(g.linear(x, param(f"{prefix}.W1"), param(f"{prefix}.b1")))
    return g.relu(g.linear(h, param(f"{prefix}.W2"), param(f"{prefix}.b2")))


def trunk(g, param, cfg, x, task):
    if cfg.mtl_kind == "mlp":
        return _mlp2(g, param, f"trunk.{task}", x)
    if cfg.mtl_kind == "shared_bottom":
        return _mlp2(g, param, "trunk.shared", x)
    experts = [g.relu(g.linear(x, param(f"trunk.expert{e}.W"), param(f"trunk.expert{e}.b")))
               for e in range(cfg.expert_count)]
    gate = g.softmax(g.linear(x, param(f"trunk.gate.{task}.W"), param(f"trunk.gate.{task}.b")))
    out = None
    eye = np.eye(cfg.expert_count)
    for e, h in enumerate(experts):
        term = g.mul(g.matmul(gate, g.const(eye[:, [e]])), h)
        out = term if out is None else g.add(out, term)
    return out


def mtl_forward(g, param, cfg, x_hat):
    """Per-task trunk outputs (ctr, sim) for one batch of adapted vectors."""
    return trunk(g, param, cfg, x_hat, "ctr"), trunk(g, param, cfg, x_hat, "sim")


def head(g, param, task, t):
    """Task logit; the head's probability is sigmoid of this value."""
    h = g.relu(g.linear(t, param(f"head.{task}.W1"), param(f"head.{task}.b1")))
    return g.linear(h, param(f"head.{task}.W2"), param(f"head.{task}.b2"))


def _masked_mean_bce(g, logits, labels, rows):
    losses = g.bce(logits, labels.reshape(-1, 1))
    if len(rows) != logits.value.shape[0]:
        losses = g.embedding_lookup(losses, rows)
    return g.mean_rows(losses)


def total_loss(g, out, batch, cfg):
    """L = L_ctr + L_sim + lambda_reg * L_reg with masked-mean task terms.

    Returns ``(loss_node, breakdown)``; ``breakdown`` holds floats for
    logging and has no ``reg`` entry when no regularizer is active.
    """
    ctr_rows = np.flatnonzero(batch.ctr_mask)
    if len(ctr_rows) == 0 and len(out.sim_rows) == 0:
        raise ValueError("batch has no CTR and no relevance labels")
    terms, breakdown = [], {}
    if len(ctr_rows):
        l_ctr = _masked_mean_bce(g, out.ctr_logits, batch.y_ctr, ctr_rows)
        terms.append(l_ctr)
        breakdown["ctr"] = float(l_ctr.value.item())
    else:
        breakdown["ctr"] = 0.0
    if len(out.sim_rows):
        l_sim = g.mean_rows(g.bce(out.sim_logits, batch.y_sim[out.sim_rows].reshape(-1, 1)))
        terms.append(l_sim)
        breakdown["sim"] = float(l_sim.value.item())
    else:
        breakdown["sim"] = 0.0
    if cfg.divergence != "none":
        reg_value = 0.0 if out.reg is None else float(out.reg.value.item())
        breakdown["reg"] = reg_value
        if out.reg is not None and cfg.lambda_reg != 0:
            terms.append(out.reg if cfg.lambda_reg == 1.0 else g.scale(out.reg, cfg.lambda_reg))
    loss = terms[0]
    for t in terms[1:]:
        loss = g.add(loss, t)
    breakdown["total"] = float(loss.value.item())
    return loss, breakdown
