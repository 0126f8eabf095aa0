"""Adam optimizer over named parameter tables."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def adam_step(params, grads, state, lr, beta1, beta2, eps=1e-8):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` are parallel lists of numpy arrays; ``state``
    is a dict with "m", "v" (parallel moment arrays) and "t" (step count).
    Entries whose grad is None are skipped but their moments still decay.
    """
    if len(params) != len(grads):
        raise ContractViolation("adam_step: params/grads length mismatch")
    if "m" not in state:
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ContractViolation(
                f"adam_step: grad shape {g.shape} does not match param {p.shape}"
            )
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    """Adam bound to a named table of parameter Tensors."""

    def __init__(self, params, lr=1e-4, beta1=0.0, beta2=0.9, eps=1e-8):
        # params: dict name -> Tensor (requires_grad)
        self.names = sorted(params)
        self.params = [params[n] for n in self.names]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state,
                  self.lr, self.beta1, self.beta2, self.eps)

    # -- checkpoint plumbing -------------------------------------------------

    def state_tensors(self, prefix):
        """Flat name->array view of the moment buffers."""
        out = {}
        if not self.state:
            return out
        for name, m, v in zip(self.names, self.state["m"], self.state["v"]):
            out[f"{prefix}/{name}:m"] = m
            out[f"{prefix}/{name}:v"] = v
        return out

    def load_state_tensors(self, prefix, table, t):
        m, v = [], []
        for name, p in zip(self.names, self.params):
            m.append(table[f"{prefix}/{name}:m"].astype(p.data.dtype))
            v.append(table[f"{prefix}/{name}:v"].astype(p.data.dtype))
        self.state = {"m": m, "v": v, "t": int(t)}
