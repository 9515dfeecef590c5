"""Adam optimizer over lists of parameter tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, load_arrays, save_arrays


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One in-place Adam update; creates moment buffers on first use."""
    if not state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p.data) for p in params]
        state["v"] = [np.zeros_like(p.data) for p in params]
    state["t"] += 1
    t = state["t"]
    b1, b2 = betas
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    def __init__(self, params: list[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self.state, self.lr, self.betas, self.eps)

    def save_state(self, path) -> None:
        if not self.state:
            self.state = {
                "t": 0,
                "m": [np.zeros_like(p.data) for p in self.params],
                "v": [np.zeros_like(p.data) for p in self.params],
            }
        arrays = [np.array([[float(self.state["t"])]])]
        arrays.extend(self.state["m"])
        arrays.extend(self.state["v"])
        save_arrays(path, arrays)

    def load_state(self, path) -> None:
        arrays = load_arrays(path)
        t = int(arrays[0][0, 0])
        k = len(self.params)
        self.state = {"t": t, "m": arrays[1 : 1 + k], "v": arrays[1 + k : 1 + 2 * k]}
