"""Parameterised building blocks on top of :mod:`curionav.tensor`."""
from __future__ import annotations

import numpy as np

from .tensor import ParamStore, Tensor, affine, gelu, tanh, uniform_init


class Linear:
    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, zero: bool = False):
        self.name = name
        if zero:
            w, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
        else:
            w = uniform_init(rng, fan_in, (fan_in, fan_out))
            b = uniform_init(rng, fan_in, (fan_out,))
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", b)

    def __call__(self, x) -> Tensor:
        return affine(x, self.w, self.b)

    def numpy(self, x: np.ndarray) -> np.ndarray:
        """Graph-free forward pass for rollouts."""
        return x @ self.w.data + self.b.data


_ACTS = {"tanh": (tanh, np.tanh), "gelu": (gelu, None)}


class MLP:
    """Two affine layers with a hidden nonlinearity."""

    def __init__(self, store: ParamStore, name: str, sizes: tuple[int, int, int],
                 rng: np.random.Generator, activation: str = "tanh", zero_last: bool = False):
        self.l1 = Linear(store, f"{name}.l1", sizes[0], sizes[1], rng)
        self.l2 = Linear(store, f"{name}.l2", sizes[1], sizes[2], rng, zero=zero_last)
        self.act, self.act_np = _ACTS[activation]

    def __call__(self, x) -> Tensor:
        return self.l2(self.act(self.l1(x)))

    def numpy(self, x: np.ndarray) -> np.ndarray:
        return self.l2.numpy(self.act_np(self.l1.numpy(x)))
