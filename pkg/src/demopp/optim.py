"""AdamW with decoupled weight decay and the warmup-cosine learning schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass
class OptimState:
    """Per-parameter moment buffers plus the run-level schedule constants."""

    base_lr: float = 3e-3
    weight_decay: float = 1e-2
    warmup_epochs: int = 10
    total_epochs: int = 60
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, lr):
    """One decoupled-weight-decay Adam update over a name -> Tensor mapping.

    ``grads`` maps the same names to numpy arrays; parameters are updated in
    place and ``state.step`` advances by one.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return state


def cosine_warmup_lr(epoch, state=None, *, base_lr=None, warmup_epochs=None, total_epochs=None):
    """Linear ramp 0 -> base_lr over the warmup, then cosine decay to 0.

    Accepts either an OptimState or explicit schedule constants.
    """
    if state is not None:
        base_lr = state.base_lr
        warmup_epochs = state.warmup_epochs
        total_epochs = state.total_epochs
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < warmup_epochs:
        return base_lr * epoch / warmup_epochs
    span = total_epochs - warmup_epochs
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))


def clip_grad_norm(grads, max_norm):
    """Scale the gradient map in place so its global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm
