from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, precision


def grad_check(f: Callable[..., Tensor], inputs: Sequence, eps: float = 1e-6) -> float:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` receives one float64 :class:`Tensor` per entry of ``inputs`` and must
    return a single-element tensor.  Returns the largest
    ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`` over every input element.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]

    with precision(np.float64):
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        out = f(*leaves)
        if out.size != 1:
            raise ValueError(f"grad_check needs a scalar output, got shape {out.shape}")
        if out.requires_grad:
            out.backward()
        ad = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

        def evaluate(values):
            return float(f(*[Tensor(v) for v in values]).data.reshape(-1)[0])

        worst = 0.0
        for i, base in enumerate(arrays):
            flat = base.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                hi = evaluate(arrays)
                flat[j] = orig - eps
                lo = evaluate(arrays)
                flat[j] = orig
                fd = (hi - lo) / (2.0 * eps)
                g = float(ad[i].reshape(-1)[j])
                err = abs(g - fd) / max(1.0, abs(g), abs(fd))
                worst = max(worst, err)
    return worst
