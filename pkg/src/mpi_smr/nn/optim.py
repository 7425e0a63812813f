"""Adam without weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], st: AdamState):
    """One bias-corrected Adam update, in place on ``params``.

    Parameters without a gradient entry (or with ``None``) are left alone.
    Returns ``(params, st)``.
    """
    st.t += 1
    b1, b2 = st.beta1, st.beta2
    c1 = 1.0 - b1**st.t
    c2 = 1.0 - b2**st.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = st.m.get(name)
        if m is None:
            m = st.m[name] = np.zeros_like(p, dtype=np.float64)
            st.v[name] = np.zeros_like(p, dtype=np.float64)
        v = st.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g, dtype=np.float64)
        update = st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
        p -= update.astype(p.dtype)
    return params, st


class Adam:
    """Adam over a dict of named :class:`Tensor` parameters."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step(arrays, grads, self.state)
