"""Named parameter registry, layer building blocks and the checkpoint format.

Checkpoint file (JSON, UTF-8)::

    {"format": "mate-checkpoint", "version": 1,
     "meta": {...},                       # model configs, free-form
     "rng_seed": 0,
     "params": {"encoder/node/0/w": {"shape": [i, o], "data": [...]}, ...}}

``data`` is the row-major flattening. Floats are written with Python's
shortest round-trip repr, so a save/load cycle is bit-exact for float64.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node

CHECKPOINT_FORMAT = "mate-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Map from parameter path to trainable leaf node."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Node] = {}

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Node:
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def add(self, name: str, value) -> Node:
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        node = ad.param(value)
        self._params[name] = node
        return node

    def uniform(self, name: str, shape, bound: float) -> Node:
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape) -> Node:
        return self.add(name, np.zeros(shape))

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def num_values(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Copies of the current values."""
        return {k: p.value.copy() for k, p in self._params.items()}

    def load_state(self, state: dict):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise CheckpointError(f"parameter set mismatch: missing={sorted(missing)} "
                                  f"unexpected={sorted(extra)}")
        for k, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self._params[k].shape:
                raise CheckpointError(f"{k}: shape {v.shape} != {self._params[k].shape}")
            self._params[k].value = v.copy()

    def to_json(self, meta: dict | None = None) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "meta": meta or {},
            "rng_seed": self.rng_seed,
            "params": {k: {"shape": list(p.shape), "data": p.value.ravel().tolist()}
                       for k, p in self._params.items()},
        }


def save_checkpoint(path, store: ParamStore, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(store.to_json(meta)))
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, {name: array})``; raises CheckpointError on malformed files."""
    try:
        doc = json.loads(Path(path).read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: missing checkpoint header")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')!r}")
    state = {}
    try:
        for name, rec in doc["params"].items():
            arr = np.asarray(rec["data"], dtype=np.float64)
            shape = tuple(rec["shape"])
            if arr.size != math.prod(shape):
                raise CheckpointError(f"{name}: {arr.size} values for shape {shape}")
            state[name] = arr.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed parameter table ({exc})") from exc
    for name, arr in state.items():
        if not np.isfinite(arr).all():
            raise CheckpointError(f"{name}: non-finite values")
    return doc.get("meta", {}), state


# --------------------------------------------------------------------- layers

class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, zero: bool = False):
        bound = 1.0 / math.sqrt(n_in)
        if zero:
            self.w = store.zeros(f"{name}/w", (n_in, n_out))
            self.b = store.zeros(f"{name}/b", (n_out,))
        else:
            self.w = store.uniform(f"{name}/w", (n_in, n_out), bound)
            self.b = store.uniform(f"{name}/b", (n_out,), bound)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class MLP:
    """Stack of Linear layers with tanh between them (none after the last)."""

    def __init__(self, store: ParamStore, name: str, sizes: list[int],
                 act=ad.tanh, final_act=None, zero_last: bool = False):
        self.layers = [Linear(store, f"{name}/{i}", a, b,
                              zero=zero_last and i == len(sizes) - 2)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.act = act
        self.final_act = final_act

    @property
    def last(self) -> Linear:
        return self.layers[-1]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = self.act(layer(x))
        x = self.layers[-1](x)
        return self.final_act(x) if self.final_act else x


class ParallelMLP:
    """``k`` independent MLPs over the same input, one per edge type.

    Parameters live under ``{name}/{k}/{layer}/w|b``. Evaluation stacks them so
    each layer is a single batched matmul; outputs are laid out ``[k, rows, out]``.
    """

    def __init__(self, store: ParamStore, name: str, k: int, sizes: list[int],
                 act=ad.tanh):
        self.k = k
        self.sizes = sizes
        self.act = act
        self.mlps = [MLP(store, f"{name}/{i}", sizes, act) for i in range(k)]

    def _w(self, layer):
        return ad.stack([m.layers[layer].w for m in self.mlps])

    def _b(self, layer):
        # [k, 1, out] so it broadcasts over rows
        return ad.reshape(ad.stack([m.layers[layer].b for m in self.mlps]),
                          (self.k, 1, self.sizes[layer + 1]))

    def project(self, x, rows: slice = slice(None)):
        """First-layer product of ``x [..., in_part]`` with a row block of the
        first weight, without bias: ``[k, prod(...), hidden]``."""
        w = ad.getitem(self._w(0), (slice(None), rows, slice(None)))
        flat = ad.reshape(x, (1, -1, x.shape[-1]))
        return ad.matmul(flat, w)

    def finish(self, pre):
        """Bias + activation of layer 0 on ``pre [k, rows, hidden]``, then the rest."""
        x = ad.add(pre, self._b(0))
        for layer in range(1, len(self.sizes) - 1):
            x = ad.add(ad.matmul(self.act(x), self._w(layer)), self._b(layer))
        return x

    def __call__(self, x):
        lead = x.shape[:-1]
        out = self.finish(self.project(x))
        return ad.reshape(out, (self.k,) + lead + (self.sizes[-1],))
