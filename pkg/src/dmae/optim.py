"""AdamW with decoupled weight decay.

The update per parameter p with gradient g at step t:

    m <- b1*m + (1-b1)*g
    v <- b2*v + (1-b2)*g^2
    mhat = m / (1 - b1^t),  vhat = v / (1 - b2^t)
    p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)

Weight decay multiplies the raw parameter, not the gradient, so it is
independent of the adaptive scaling. Moments live in the parameter dtype.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if eps <= 0:
            raise ValueError("eps must be > 0")
        self.params = dict(params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Apply one update. Parameters with grad=None are skipped."""
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    def state_dict(self) -> dict:
        """Moment buffers and step counter, for checkpointing."""
        return {
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for store, key in ((self.m, "m"), (self.v, "v")):
            loaded = state[key]
            if set(loaded) != set(store):
                missing = sorted(set(store) - set(loaded))
                extra = sorted(set(loaded) - set(store))
                raise KeyError(f"optimizer state mismatch: missing={missing} extra={extra}")
            for name, arr in loaded.items():
                if arr.shape != store[name].shape:
                    raise ValueError(f"optimizer moment '{name}' shape {arr.shape} != {store[name].shape}")
                store[name] = arr.astype(store[name].dtype, copy=True)
