"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

import numpy as np

from .errors import GraphError
from .tensor import Tape, zero_grads


def grad_check(loss_fn, params, eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must build a scalar loss from ``params`` (and any constants it
    closes over) using taped ops.  Returns the max over all parameter entries
    of ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params = list(params)
    zero_grads(params)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = loss_fn().item()
            flat[i] = saved - eps
            down = loss_fn().item()
            flat[i] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GraphError(
                    f"non-finite loss while perturbing parameter {p.name or pi} entry {i}")
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic[pi].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
