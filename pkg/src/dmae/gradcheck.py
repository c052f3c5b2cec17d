"""Finite-difference gradient verification.

Central differences give an O(h^2)-accurate directional derivative oracle;
comparing against reverse-mode gradients catches both wrong math and wrong
broadcast/reduction handling. Checks should run in float64 -- float32
round-off swamps the tolerance long before the math is wrong.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], Tensor], param: Tensor, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. every entry of `param`."""
    if h is None:
        h = 1e-6 if param.data.dtype == np.float64 else 1e-3
    grad = np.zeros_like(param.data)
    flat_p = param.data.ravel()
    flat_g = grad.ravel()
    for i in range(flat_p.size):
        orig = flat_p[i]
        flat_p[i] = orig + h
        hi = float(f().data)
        flat_p[i] = orig - h
        lo = float(f().data)
        flat_p[i] = orig
        flat_g[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||).

    When both norms sit below central-difference resolution (round-off of
    the objective divided by 2h leaves noise around 1e-10 per entry), the
    gradients agree on "zero" and the ratio would only compare noise; such
    pairs count as matching. Attention key biases are the live example: a
    per-query constant that softmax cancels, so their true gradient is 0.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if denom < 1e-8:
        return 0.0
    return diff / denom


def check_gradients(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float | None = None,
) -> dict[str, float]:
    """Compare reverse-mode and numerical gradients of scalar f().

    Returns {param_name: relative_error}. f() must rebuild the graph from
    the live parameter tensors on every call.
    """
    for p in params.values():
        p.grad = None
    out = f()
    if out.data.size != 1:
        raise ValueError("check_gradients needs a scalar objective")
    out.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    errors: dict[str, float] = {}
    for name, p in params.items():
        numeric = numerical_grad(f, p, h=h)
        errors[name] = relative_error(analytic[name], numeric)
    return errors


def tiny_model_gradcheck(seed: int = 0) -> dict[str, float]:
    """Finite-difference check of the full pretraining objective.

    Uses a deliberately tiny model (16px images, 8px patches -> 4 tokens,
    mask ratio 0.5 so both visible tokens carry a position label) in float64
    so every parameter can be perturbed in reasonable time. Parameters are
    jittered away from their init before checking: freshly initialized
    attention weights are so small that softmax is near-uniform and the
    q/k gradients drown in finite-difference round-off; a generic point in
    parameter space conditions the comparison properly.
    """
    from .losses import LossWeights
    from .model import ModelConfig, forward_pretrain, init_params
    from .seeding import derive, derive_seed

    cfg = ModelConfig(
        img_size=16, patch_size=8,
        enc_dim=8, enc_depth=1, enc_heads=2,
        dec_dim=8, dec_depth=1, dec_heads=2,
        mask_ratio=0.5, cls_head_hidden=8,
    )
    params = init_params(cfg, seed, phase="pretrain", dtype=np.float64)
    jitter = derive(seed, "gradcheck-jitter")
    for p in params.values():
        p.data += jitter.normal(scale=0.3, size=p.data.shape)
    rng = derive(seed, "gradcheck-data")
    noisy = rng.random((2, 3, 16, 16))
    clean = rng.random((2, 3, 16, 16))
    weights = LossWeights(lambda_rec=1.0, lambda_cls=0.1)
    mask_seeds = [derive_seed(seed, "gradcheck-mask", i) for i in range(2)]

    def objective() -> Tensor:
        return forward_pretrain(noisy, clean, params, cfg, weights, mask_seeds).total

    return check_gradients(objective, params)
