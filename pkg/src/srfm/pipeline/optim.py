from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient for tensor {name!r}")
        self.tensor = name


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store, grads, state: AdamState):
    """One bias-corrected Adam update of every non-frozen tensor, in place.

    The whole step is rejected (nothing written) if any gradient is non-finite.
    """
    live = [n for n in store.names(frozen=False) if n in grads]
    for name in live:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradient(name)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in live:
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        value = store[name]
        value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return store
