"""Sequence and set kernels: attention, selective scan, Mamba block,
polyline encoder, and time-indexed query initialization.

Every kernel is a pure function of its inputs and parameters, works on
arbitrary leading batch axes, and is differentiable through the tensor engine.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# multi-head attention
# ---------------------------------------------------------------------------


class MultiHeadAttention(nn.Module):
    """Projected scaled dot-product attention over the last two axes.

    Inputs are (..., T, C). ``mask`` is a numpy array broadcastable to
    (..., Tq, Tk), additive, with -inf marking forbidden pairs. A query row
    whose keys are all masked raises (there is no valid distribution).
    """

    def __init__(self, width, heads, rng, dtype=T.F32, dropout=0.0):
        super().__init__()
        if width % heads:
            raise ValueError(f"heads ({heads}) must divide width ({width})")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.dropout = dropout
        self.q_proj = nn.Linear(width, width, rng, dtype, bias=False)
        self.k_proj = nn.Linear(width, width, rng, dtype, bias=False)
        self.v_proj = nn.Linear(width, width, rng, dtype, bias=False)
        self.out_proj = nn.Linear(width, width, rng, dtype)

    def _split(self, x):
        # (..., T, C) -> (..., H, T, C/H)
        t = x.shape[-2]
        x = T.reshape(x, x.shape[:-1] + (self.heads, self.head_dim))
        return x.swapaxes(-3, -2)

    def __call__(self, query, key, value, mask=None, rng=None, return_weights=False):
        if query.shape[-1] != self.width or key.shape[-1] != self.width:
            raise ValueError("attention width mismatch")
        q = self._split(T.mul(self.q_proj(query), self.scale))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        scores = T.matmul(q, k.swapaxes(-1, -2))
        if mask is not None:
            # insert the head axis so one mask serves every head
            mask = np.asarray(mask)[..., None, :, :]
        weights = T.masked_softmax(scores, mask)
        ctx = T.matmul(weights, v)
        ctx = ctx.swapaxes(-3, -2)
        ctx = T.reshape(ctx, ctx.shape[:-2] + (self.width,))
        out = self.out_proj(ctx)
        if rng is not None:
            out = T.dropout(out, self.dropout, rng, self.training)
        if return_weights:
            return out, weights.data
        return out


def padding_mask(valid, queries):
    """Additive key-padding mask (..., Tq, Tk) from a boolean key validity row."""
    valid = np.asarray(valid, dtype=bool)
    mask = np.where(valid, 0.0, NEG_INF)
    return np.broadcast_to(mask[..., None, :], mask.shape[:-1] + (queries, mask.shape[-1]))


# ---------------------------------------------------------------------------
# selective scan
# ---------------------------------------------------------------------------


def selective_scan(x, delta, A, B, C, skip):
    """Input-dependent linear state-space recurrence, strictly causal.

    h_t = exp(delta_t * A) . h_{t-1} + (delta_t * B_t) x_t,  h_0 = 0
    y_t = <C_t, h_t> + skip * x_t

    Shapes: x, delta (..., T, D); A (D, S); B, C (..., T, S); skip (D,).
    """
    for name, arg in (("x", x), ("delta", delta), ("A", A), ("B", B), ("C", C), ("skip", skip)):
        if not np.isfinite(arg.data).all():
            raise FloatingPointError(f"selective_scan: non-finite input '{name}'")
    if x.shape[-2] < 1:
        raise ValueError("selective_scan needs at least one step")

    xd, dd, Ad, Bd, Cd, sd = x.data, delta.data, A.data, B.data, C.data, skip.data
    tn = xd.shape[-2]
    lead = xd.shape[:-2]
    d, s = Ad.shape

    abar = np.exp(dd[..., None] * Ad)  # (..., T, D, S)
    bx = (dd * xd)[..., None] * Bd[..., None, :]  # (..., T, D, S)
    hs = np.empty(lead + (tn, d, s), dtype=xd.dtype)
    # move T to the front so the loop indexes contiguous views
    abar_t = np.moveaxis(abar, -3, 0)
    bx_t = np.moveaxis(bx, -3, 0)
    hs_t = np.moveaxis(hs, -3, 0)
    h = np.zeros(lead + (d, s), dtype=xd.dtype)
    for t in range(tn):
        h = abar_t[t] * h + bx_t[t]
        hs_t[t] = h
    y = np.einsum("...tds,...ts->...td", hs, Cd) + xd * sd

    def vjp(g):
        cg = Cd[..., None, :] * g[..., None]  # (..., T, D, S)
        gs = np.empty_like(hs)
        gs_t = np.moveaxis(gs, -3, 0)
        cg_t = np.moveaxis(cg, -3, 0)
        acc = cg_t[tn - 1].copy()
        gs_t[tn - 1] = acc
        for t in range(tn - 2, -1, -1):
            acc = cg_t[t] + abar_t[t + 1] * acc
            gs_t[t] = acc
        hprev = np.empty_like(hs)
        hp_t = np.moveaxis(hprev, -3, 0)
        hp_t[0] = 0.0
        hp_t[1:] = hs_t[: tn - 1]

        gdB = np.einsum("...tds,...ts->...td", gs, Bd)
        dx = gdB * dd + sd * g
        gah = gs * abar * hprev
        ddelta = np.einsum("...tds,ds->...td", gah, Ad) + gdB * xd
        dA = np.einsum("btds,btd->ds", gah.reshape(-1, tn, d, s), dd.reshape(-1, tn, d))
        dB = np.einsum("...tds,...td->...ts", gs, dd * xd)
        dC = np.einsum("...tds,...td->...ts", hs, g)
        dskip = np.einsum("btd,btd->d", g.reshape(-1, tn, d), xd.reshape(-1, tn, d))
        return dx, ddelta, dA, dB, dC, dskip

    return Tensor._make(y.astype(xd.dtype, copy=False), (x, delta, A, B, C, skip), vjp)


def causal_conv1d(x, weight, bias):
    """Depthwise causal convolution along the step axis.

    x (..., T, D), weight (k, D), bias (D,):
    y_t = sum_j weight_j * x_{t-k+1+j} + bias (missing history reads as zero).
    """
    xd, wd, bd = x.data, weight.data, bias.data
    k = wd.shape[0]
    tn = xd.shape[-2]
    pad = np.zeros(xd.shape[:-2] + (k - 1, xd.shape[-1]), dtype=xd.dtype)
    xp = np.concatenate([pad, xd], axis=-2)
    y = np.zeros_like(xd)
    for j in range(k):
        y += wd[j] * xp[..., j : j + tn, :]
    y += bd

    def vjp(g):
        gxp = np.zeros_like(xp)
        dw = np.empty_like(wd)
        gf = g.reshape(-1, tn, g.shape[-1])
        xf = xp.reshape(-1, xp.shape[-2], xp.shape[-1])
        for j in range(k):
            gxp[..., j : j + tn, :] += wd[j] * g
            dw[j] = np.einsum("btd,btd->d", gf, xf[:, j : j + tn, :])
        red = tuple(range(g.ndim - 1))
        return gxp[..., k - 1 :, :], dw, g.sum(axis=red)

    return Tensor._make(y, (x, weight, bias), vjp)


# ---------------------------------------------------------------------------
# Mamba block
# ---------------------------------------------------------------------------


def _inv_softplus(y):
    return np.log(np.expm1(y))


class _ScanBranch(nn.Module):
    """One directional branch: expand, conv, scan, gate, project."""

    def __init__(self, width, rng, dtype, expand, state, kernel, dt_rank):
        super().__init__()
        inner = expand * width
        self.inner = inner
        self.state = state
        self.dt_rank = dt_rank
        self.in_proj = nn.Linear(width, 2 * inner, rng, dtype, bias=False)
        self.conv_w = T.parameter(rng.normal(0.0, 1.0 / np.sqrt(kernel), size=(kernel, inner)), dtype)
        self.conv_b = T.parameter(np.zeros(inner), dtype)
        self.x_proj = nn.Linear(inner, dt_rank + 2 * state, rng, dtype, bias=False)
        self.dt_proj = nn.Linear(dt_rank, inner, rng, dtype)
        # softplus(dt_bias) lands in [1e-3, 0.1]: moderate step sizes at start
        self.dt_proj.bias.data[:] = _inv_softplus(np.exp(rng.uniform(np.log(1e-3), np.log(0.1), size=inner))).astype(dtype)
        # negative-integer spectrum keeps the recurrence decaying at init
        self.A_log = T.parameter(np.tile(np.log(np.arange(1, state + 1.0)), (inner, 1)), dtype)
        self.skip = T.parameter(np.ones(inner), dtype)
        self.out_proj = nn.Linear(inner, width, rng, dtype, bias=False)

    def __call__(self, x):
        uz = self.in_proj(x)
        u = uz[..., : self.inner]
        z = uz[..., self.inner :]
        u = T.silu(causal_conv1d(u, self.conv_w, self.conv_b))
        dbc = self.x_proj(u)
        dt = T.softplus(self.dt_proj(dbc[..., : self.dt_rank]))
        b = dbc[..., self.dt_rank : self.dt_rank + self.state]
        c = dbc[..., self.dt_rank + self.state :]
        a = T.mul(T.exp(self.A_log), -1.0)
        y = selective_scan(u, dt, a, b, c, self.skip)
        return self.out_proj(T.mul(y, T.silu(z)))


class MambaBlock(nn.Module):
    """Pre-norm selective-scan block over the second-to-last axis.

    direction 'forward' is strictly causal; 'bidirectional' adds an
    independent branch run on the time-reversed sequence, with the two
    branch outputs summed before the residual.
    """

    def __init__(self, width, rng, dtype=T.F32, direction="forward", expand=2, state=16, kernel=4, dt_rank=None, dropout=0.0):
        super().__init__()
        if direction not in ("forward", "bidirectional"):
            raise ValueError(f"unknown direction '{direction}'")
        self.direction = direction
        self.dropout = dropout
        if dt_rank is None:
            dt_rank = max(8, width // 16)
        self.norm = nn.LayerNorm(width, dtype)
        self.fwd = _ScanBranch(width, rng, dtype, expand, state, kernel, dt_rank)
        if direction == "bidirectional":
            self.bwd = _ScanBranch(width, rng, dtype, expand, state, kernel, dt_rank)

    def __call__(self, x, rng=None):
        if x.shape[-2] < 1:
            raise ValueError("mamba block needs at least one step")
        h = self.norm(x)
        y = self.fwd(h)
        if self.direction == "bidirectional":
            rev = (Ellipsis, slice(None, None, -1), slice(None))
            y = T.add(y, self.bwd(h[rev])[rev])
        if rng is not None:
            y = T.dropout(y, self.dropout, rng, self.training)
        return T.add(x, y)


# ---------------------------------------------------------------------------
# polyline encoder
# ---------------------------------------------------------------------------


class PolylineEncoder(nn.Module):
    """Per-segment MLP, masked max-pool over segments, post MLP.

    M is (..., L, C_in) with seg_mask (..., L) marking real segments; the
    pool ignores invalid segments. A row of all-invalid segments has no
    defined pool and raises unless ``row_mask`` marks it as padding, in which
    case its (meaningless) output is computed from the first segment.
    """

    def __init__(self, in_channels, width, rng, dtype=T.F32):
        super().__init__()
        self.pre = nn.MLP([in_channels, width, width], rng, dtype)
        self.post = nn.MLP([width, width], rng, dtype)

    def __call__(self, m, seg_mask, row_mask=None):
        seg_mask = np.asarray(seg_mask, dtype=bool)
        dead = ~seg_mask.any(axis=-1)
        if row_mask is not None:
            pad_rows = ~np.asarray(row_mask, dtype=bool)
            if (dead & ~pad_rows).any():
                raise ValueError("polyline with zero valid segments")
            seg_mask = seg_mask.copy()
            seg_mask[dead, 0] = True
        elif dead.any():
            raise ValueError("polyline with zero valid segments")
        feats = self.pre(m)
        gate = np.where(seg_mask[..., None], 0.0, NEG_INF).astype(feats.dtype)
        pooled = T.tmax(T.add(feats, Tensor(gate)), axis=-2)
        return self.post(pooled)


# ---------------------------------------------------------------------------
# time-indexed query initialization
# ---------------------------------------------------------------------------


class TimeQueryInit(nn.Module):
    """Embed future timestamps t_i = i * horizon / count into query rows."""

    def __init__(self, width, rng, dtype=T.F32):
        super().__init__()
        self.dtype = dtype
        self.mlp = nn.MLP([1, width, width], rng, dtype)

    def __call__(self, count, horizon_s, timestamps=None):
        if count < 1:
            raise ValueError("need at least one state query")
        if timestamps is None:
            timestamps = np.arange(1, count + 1, dtype=self.dtype) * (horizon_s / count)
        ts = np.asarray(timestamps, dtype=self.dtype).reshape(count, 1)
        return self.mlp(Tensor(ts))
