"""Parameter containers and the basic layers shared by the network modules."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Holds parameters and sub-modules; supports named traversal and modes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register(self, name, module):
        """Attach a sub-module under an explicit name (for lists of layers)."""
        self._modules[name] = module
        return module

    def named_parameters(self, prefix=""):
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, m in self._modules.items():
            out.update(m.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def train(self, mode=True):
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def num_parameters(self):
        return sum(p.data.size for p in self.named_parameters().values())


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self.register(str(len(self._items)), module)
        self._items.append(module)
        return module

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng, dtype=T.F32, bias=True, init_std=None, zero_init=False):
        super().__init__()
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            std = init_std if init_std is not None else 1.0 / np.sqrt(fan_in)
            w = rng.normal(0.0, std, size=(fan_in, fan_out))
        self.weight = T.parameter(w, dtype)
        self.bias = T.parameter(np.zeros(fan_out), dtype) if bias else None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width, dtype=T.F32, eps=1e-5):
        super().__init__()
        self.gain = T.parameter(np.ones(width), dtype)
        self.shift = T.parameter(np.zeros(width), dtype)
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.shift, self.eps)


_ACTS = {"relu": T.relu, "silu": T.silu, "tanh": T.tanh}


class MLP(Module):
    """Linear stack with a nonlinearity between layers (none after the last)."""

    def __init__(self, sizes, rng, dtype=T.F32, act="relu", zero_last=False):
        super().__init__()
        self.act = _ACTS[act]
        self.layers = ModuleList(
            Linear(a, b, rng, dtype, zero_init=(zero_last and i == len(sizes) - 2))
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        )

    def __call__(self, x):
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n - 1:
                x = self.act(x)
        return x


def embedding(rows, width, rng, dtype=T.F32, std=0.02):
    return T.parameter(rng.normal(0.0, std, size=(rows, width)), dtype)
