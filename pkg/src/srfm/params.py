from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEVELS = ("L0", "L1", "L2plus")

# Tensors that never train, whatever the freeze split says.
ALWAYS_FROZEN = frozenset({"text.frozen_table"})


@dataclass
class Param:
    value: np.ndarray
    level: str
    frozen: bool = False


class ParameterStore:
    """Named, level-tagged tensors with freeze flags. Insertion-ordered."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name, value, level, frozen=False):
        if level not in LEVELS:
            raise ValueError(f"unknown level {level!r} for {name}")
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name}")
        value = np.ascontiguousarray(value, dtype=np.float64)
        self._entries[name] = Param(value, level, frozen or name in ALWAYS_FROZEN)
        return value

    def __getitem__(self, name):
        return self._entries[name].value

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def entry(self, name) -> Param:
        return self._entries[name]

    def items(self):
        return self._entries.items()

    def names(self, level=None, frozen=None):
        return [n for n, p in self._entries.items()
                if (level is None or p.level == level)
                and (frozen is None or p.frozen == frozen)]

    def freeze(self, names):
        for n in names:
            self._entries[n].frozen = True

    def freeze_levels(self, levels):
        for name, p in self._entries.items():
            p.frozen = p.level in levels or name in ALWAYS_FROZEN

    def copy(self):
        out = ParameterStore()
        for name, p in self._entries.items():
            out._entries[name] = Param(p.value.copy(), p.level, p.frozen)
        return out

    def snapshot(self):
        return {n: p.value.copy() for n, p in self._entries.items()}

    def n_scalars(self):
        return sum(p.value.size for p in self._entries.values())


class Binder:
    """Binds store tensors into one graph; frozen tensors become non-trainable leaves."""

    def __init__(self, graph, store: ParameterStore):
        self.graph = graph
        self.store = store

    def __call__(self, name):
        p = self.store.entry(name)
        return self.graph.param(name, p.value, trainable=not p.frozen)

    def has(self, name):
        return name in self.store
