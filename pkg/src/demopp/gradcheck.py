"""Central-difference verification of analytic gradients (float64 only)."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def gradcheck(fn, inputs, seed=0, h=1e-5):
    """Max relative error between analytic and numeric gradients of ``fn``.

    ``fn`` maps the input tensors to a scalar Tensor and must be deterministic.
    ``inputs`` is either a list of shape tuples (filled with seeded standard
    normals) or a list of ready float64 tensors. Every input is treated as a
    differentiable leaf. The error per element is
    |analytic - numeric| / max(1e-12, |numeric|) with numeric gradients from
    central differences of spacing ``h``.
    """
    rng = np.random.default_rng(seed)
    tensors = []
    for spec in inputs:
        if isinstance(spec, Tensor):
            if spec.dtype != np.float64:
                raise ValueError("gradcheck requires float64 inputs")
            spec.requires_grad = True
            tensors.append(spec)
        else:
            tensors.append(T.parameter(rng.standard_normal(spec), T.F64))

    name = getattr(fn, "__name__", repr(fn))
    loss = fn(*tensors)
    if loss.data.size != 1:
        raise ValueError(f"{name}: gradcheck target must be scalar")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"{name}: non-finite forward value")
    for t in tensors:
        t.grad = None
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def value_at():
        with T.no_grad():
            v = fn(*tensors)
        return float(v.data)

    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value_at()
            flat[i] = orig - h
            down = value_at()
            flat[i] = orig
            num[i] = (up - down) / (2.0 * h)
        if not np.isfinite(num).all() or not np.isfinite(a).all():
            raise FloatingPointError(f"{name}: non-finite gradient")
        rel = np.abs(a.reshape(-1) - num) / np.maximum(1e-12, np.abs(num))
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst
