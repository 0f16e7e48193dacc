"""Built-in verification battery: each suite re-derives expected behaviour
from an independent reference (explicit recurrences, brute-force enumeration,
finite differences) and checks the production path against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from . import metrics, nn, objective
from . import tensor as T
from .gradcheck import gradcheck
from .model import ModelConfig, DecoupledForecaster, project_history_trajectories
from .scene import FrameTransform
from .tensor import Tensor


@dataclass
class SuiteResult:
    module: str
    op: str
    max_err: float
    tolerance: float

    @property
    def ok(self):
        return self.max_err < self.tolerance

    def line(self):
        status = "ok" if self.ok else "FAIL"
        return (
            f"suite={self.op} module={self.module} status={status} "
            f"max_err={self.max_err:.3e} tolerance={self.tolerance:.0e}"
        )


def _scan_reference(x, delta, a, b, c, skip):
    """Pure-python per-step recurrence, scalar loops only."""
    tn, d = x.shape
    s = a.shape[1]
    h = [[0.0] * s for _ in range(d)]
    y = np.zeros((tn, d))
    for t in range(tn):
        for i in range(d):
            acc = 0.0
            for j in range(s):
                h[i][j] = np.exp(delta[t, i] * a[i, j]) * h[i][j] + delta[t, i] * b[t, j] * x[t, i]
                acc += c[t, j] * h[i][j]
            y[t, i] = acc + skip[i] * x[t, i]
    return y


def suite_gradcheck(fault=None):
    rng = np.random.default_rng(11)
    worst = 0.0

    def probe(fn, shapes, seed):
        return gradcheck(fn, shapes, seed=seed)

    lin = nn.Linear(5, 4, rng, T.F64)
    worst = max(worst, probe(lambda x: T.tsum(T.tanh(lin(x))), [(6, 5)], 1))

    def sce(x, w):
        return T.mul(T.tsum(T.log_softmax(T.linear(x, w))[np.arange(4), np.arange(4) % 3]), -0.25)

    worst = max(worst, probe(sce, [(4, 5), (5, 3)], 2))

    mha = K.MultiHeadAttention(8, 2, rng, T.F64)
    x0 = T.parameter(np.random.default_rng(3).standard_normal((5, 8)), T.F64)
    worst = max(worst, probe(lambda *ps: T.tsum(T.mul(mha(x0, x0, x0), 0.2)), list(mha.named_parameters().values()), 4))

    def scan_loss(x, draw, a_log, b, c, skip):
        y = K.selective_scan(T.tanh(x), T.softplus(draw), T.mul(T.exp(a_log), -1.0), b, c, skip)
        return T.tsum(T.mul(y, 0.1))

    worst = max(worst, probe(scan_loss, [(6, 2), (6, 2), (2, 3), (6, 3), (6, 3), (2,)], 5))
    worst = max(worst, probe(lambda x, w, b: T.tsum(T.tanh(K.causal_conv1d(x, w, b))), [(5, 3), (4, 3), (3,)], 6))

    ln_g = T.parameter(np.abs(np.random.default_rng(7).standard_normal(6)) + 0.5, T.F64)
    ln_b = T.parameter(np.random.default_rng(8).standard_normal(6), T.F64)
    worst = max(worst, probe(lambda x, g, b: T.tsum(T.mul(T.layer_norm(x, g, b), 0.3)), [(5, 6), ln_g, ln_b], 9))
    return SuiteResult("neural-kernels", "gradcheck", worst, 1e-5)


def suite_scan_oracle(fault=None):
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(200):
        tn = int(rng.integers(1, 9))
        d = int(rng.integers(1, 5))
        s = int(rng.integers(1, 5))
        x = rng.standard_normal((tn, d))
        delta = np.abs(rng.standard_normal((tn, d))) + 0.05
        a = -np.abs(rng.standard_normal((d, s))) - 0.05
        b = rng.standard_normal((tn, s))
        c = rng.standard_normal((tn, s))
        skip = rng.standard_normal(d)
        ref = _scan_reference(x, delta, a, b, c, skip)
        got = K.selective_scan(
            Tensor(x, dtype=T.F64), Tensor(delta, dtype=T.F64), Tensor(a, dtype=T.F64),
            Tensor(b, dtype=T.F64), Tensor(c, dtype=T.F64), Tensor(skip, dtype=T.F64),
        ).data
        worst = max(worst, float(np.abs(got - ref).max()))
    return SuiteResult("neural-kernels", "selective_scan", worst, 1e-10)


def suite_scan_backward(fault=None):
    # analytic dL/dx against central differences
    worst = 0.0
    rng = np.random.default_rng(29)
    x = T.parameter(rng.standard_normal((5, 2)), T.F64)
    args = (
        Tensor(np.abs(rng.standard_normal((5, 2))) + 0.1, dtype=T.F64),
        Tensor(-np.abs(rng.standard_normal((2, 3))) - 0.1, dtype=T.F64),
        Tensor(rng.standard_normal((5, 3)), dtype=T.F64),
        Tensor(rng.standard_normal((5, 3)), dtype=T.F64),
        Tensor(rng.standard_normal(2), dtype=T.F64),
    )
    probe = rng.standard_normal((5, 2))

    def loss_value():
        with T.no_grad():
            return float(T.tsum(T.mul(K.selective_scan(x, *args), Tensor(probe, dtype=T.F64))).data)

    T.tsum(T.mul(K.selective_scan(x, *args), Tensor(probe, dtype=T.F64))).backward()
    analytic = x.grad.copy()
    if fault == "scan-backward-signflip":
        analytic = -analytic
    h = 1e-6
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_value()
        flat[i] = orig - h
        down = loss_value()
        flat[i] = orig
        worst = max(worst, float(abs(analytic.reshape(-1)[i] - (up - down) / (2 * h))))
    return SuiteResult("neural-kernels", "selective_scan_backward", worst, 1e-8)


def suite_attention_oracle(fault=None):
    rng = np.random.default_rng(31)
    worst = 0.0
    for case in range(40):
        tq = int(rng.integers(1, 6))
        tk = int(rng.integers(1, 7))
        heads = int(rng.choice([1, 2, 4]))
        width = 8 * heads
        mha = K.MultiHeadAttention(width, heads, rng, T.F64)
        q = rng.standard_normal((tq, width))
        kv = rng.standard_normal((tk, width))
        mask = None
        if case % 2:
            keep = rng.random(tk) > 0.3
            keep[rng.integers(tk)] = True
            mask = np.where(keep, 0.0, -np.inf)[None, :].repeat(tq, 0)
        got = mha(Tensor(q, dtype=T.F64), Tensor(kv, dtype=T.F64), Tensor(kv, dtype=T.F64), mask).data
        ref = _naive_attention(mha, q, kv, mask)
        worst = max(worst, float(np.abs(got - ref).max()))
    return SuiteResult("neural-kernels", "multi_head_attention", worst, 1e-6)


def _naive_attention(mha, q, kv, mask):
    wq = mha.q_proj.weight.data
    wk = mha.k_proj.weight.data
    wv = mha.v_proj.weight.data
    wo = mha.out_proj.weight.data
    bo = mha.out_proj.bias.data
    hd = mha.head_dim
    tq, tk = q.shape[0], kv.shape[0]
    qp, kp, vp = q @ wq, kv @ wk, kv @ wv
    out_heads = []
    for h in range(mha.heads):
        sl = slice(h * hd, (h + 1) * hd)
        ctx = np.zeros((tq, hd))
        for i in range(tq):
            logits = np.array(
                [qp[i, sl] @ kp[j, sl] / np.sqrt(hd) + (mask[i, j] if mask is not None else 0.0) for j in range(tk)]
            )
            w = np.exp(logits - logits.max())
            w = w / w.sum()
            for j in range(tk):
                ctx[i] += w[j] * vp[j, sl]
        out_heads.append(ctx)
    return np.concatenate(out_heads, axis=1) @ wo + bo


def suite_metric_oracle(fault=None):
    rng = np.random.default_rng(43)
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 9))
        tn = int(rng.integers(2, 13))
        preds = rng.standard_normal((k, tn, 2)) * 5
        probs = rng.random(k)
        probs = probs / probs.sum()
        gt = rng.standard_normal((tn, 2)) * 5
        kk = int(rng.integers(1, k + 1))
        ade, fde, miss = metrics.displacement_metrics(preds, probs, gt, kk)
        sel = sorted(range(k), key=lambda i: (-probs[i], i))[:kk]
        ades = [np.mean([np.hypot(*(preds[i, t] - gt[t])) for t in range(tn)]) for i in sel]
        fdes = [np.hypot(*(preds[i, -1] - gt[-1])) for i in sel]
        worst = max(worst, abs(ade - min(ades)), abs(fde - min(fdes)))
        worst = max(worst, float(miss != (min(fdes) > metrics.DEFAULT_MISS_THRESHOLD_M)))
        b = metrics.brier_min_fde(preds, probs, gt, kk)
        j = int(np.argmin(fdes))
        worst = max(worst, abs(b - (fdes[j] + (1 - probs[sel[j]]) ** 2)))
    for _ in range(50):
        vals = rng.random(5)
        s = metrics.PdmSubscores(*vals)
        ref = vals[0] * vals[1] * (5 * vals[4] + 5 * vals[2] + 2 * vals[3]) / 12.0
        worst = max(worst, abs(metrics.pdm_composite(s) - ref))
    return SuiteResult("metrics", "displacement_metrics", worst, 1e-9)


def suite_projection(fault=None):
    rng = np.random.default_rng(53)
    worst = 0.0
    for _ in range(40):
        hist = FrameTransform(tuple(rng.uniform(-50, 50, 2)), float(rng.uniform(-np.pi, np.pi)))
        cur = FrameTransform(tuple(rng.uniform(-50, 50, 2)), float(rng.uniform(-np.pi, np.pi)))
        traj = rng.standard_normal((3, 12, 2)) * 10
        off = int(rng.integers(1, 12))
        proj = project_history_trajectories(traj, hist, cur, off)
        worst = max(worst, float(np.abs(proj[:, off - 1]).max()))
        # agreement with composed frame transforms (rigid: offsets rotate)
        comp_traj = cur.apply(hist.apply_inverse(traj.reshape(-1, 2))).reshape(traj.shape)
        ref = comp_traj - comp_traj[:, off - 1 : off]
        worst = max(worst, float(np.abs(proj - ref).max()))
        rt = hist.apply(hist.apply_inverse(traj.reshape(-1, 2)))
        worst = max(worst, float(np.abs(rt - traj.reshape(-1, 2)).max()))
    return SuiteResult("model", "project_history_trajectories", worst, 1e-9)


def suite_wta_isolation(fault=None):
    rng = np.random.default_rng(61)
    k, tn = 4, 6
    traj = T.parameter(rng.standard_normal((2, k, tn, 2)), T.F64)
    logits = T.parameter(rng.standard_normal((2, k)), T.F64)
    gt = rng.standard_normal((2, tn, 2))
    valid = np.ones((2, tn), dtype=bool)

    best = objective._best_rows(traj.data, gt, valid)
    rows = np.arange(2)
    sel = traj[rows, best]
    reg = T.tsum(T.smooth_l1(sel, Tensor(gt, dtype=T.F64)))
    reg.backward()
    g = traj.grad.copy()
    mask = np.zeros_like(g, dtype=bool)
    mask[rows, best] = True
    leak = float(np.abs(g[~mask]).max()) if (~mask).any() else 0.0
    inside = float(np.abs(g[mask]).max())
    worst = leak if inside > 0 else np.inf
    # exact tie resolves to the lowest index
    tie = np.stack([gt[0], gt[0], gt[0] + 5.0, gt[0]])
    idx, _, onehot = objective.select_best(tie, gt[0])
    if idx != 0 or onehot[0] != 1.0:
        worst = max(worst, 1.0)
    return SuiteResult("objective", "select_best", worst, 1e-12)


def suite_refine_mask(fault=None):
    rng = np.random.default_rng(71)
    cfg = ModelConfig(width=16, heads=2, num_modes=2, state_queries=4, attn_depth=1,
                      decoder_mamba_depth=1, encoder_mamba_depth=1, scan_expand=1,
                      scan_state=4, dropout=0.0, refine_radius_m=50.0)
    net = DecoupledForecaster(cfg, rng)
    ref = net.refine_mod
    r, k, ts, nt = 2, 2, 4, 5
    waypoints = rng.uniform(-100, 100, size=(r, k, ts, 2)).astype(np.float32)
    token_pos = rng.uniform(-100, 100, size=(r, nt, 2)).astype(np.float32)
    token_valid = np.ones((r, nt), dtype=bool)
    token_valid[0, -1] = False
    mask = ref.build_mask(waypoints, token_pos, token_valid).reshape(r, k, ts, nt)
    worst = 0.0
    for i in range(r):
        for a in range(k):
            for t in range(ts):
                d = np.linalg.norm(token_pos[i] - waypoints[i, a, t], axis=-1)
                keep = (d <= cfg.refine_radius_m) & token_valid[i]
                if not keep.any():
                    dv = np.where(token_valid[i], d, np.inf)
                    keep[np.argmin(dv)] = True
                got = np.isfinite(mask[i, a, t])
                worst = max(worst, float((got != keep).sum()))
    # beyond-radius tokens must carry exactly zero attention weight
    q = Tensor(rng.standard_normal((r, k * ts, cfg.width)).astype(np.float32))
    _, weights = ref.attn(q, q[:, :nt, :], q[:, :nt, :], mask.reshape(r, k * ts, nt), return_weights=True)
    wts = weights.reshape(r, -1, k, ts, nt)
    dead = ~np.isfinite(mask)
    worst = max(worst, float(np.abs(wts * dead[:, None]).max()))
    return SuiteResult("model", "refine_mask", worst, 1e-12)


def suite_checkpoint(fault=None):
    import tempfile, os

    from .checkpoint import load_checkpoint, save_checkpoint

    rng = np.random.default_rng(83)
    arrays = {
        "a/w": rng.standard_normal((3, 4)).astype(np.float32),
        "b/bias": rng.standard_normal(7),
        "scalar": np.asarray(2.5),
    }
    path = tempfile.mktemp(suffix=".ckpt")
    try:
        save_checkpoint(path, arrays)
        back = load_checkpoint(path)
        worst = 0.0
        for k, v in arrays.items():
            if back[k].dtype != v.dtype or back[k].shape != v.shape:
                worst = 1.0
            else:
                worst = max(worst, float(np.abs(back[k] - v).max()))
    finally:
        if os.path.exists(path):
            os.remove(path)
    return SuiteResult("tensor-autodiff", "checkpoint_roundtrip", worst, 1e-12)


SUITES = (
    suite_gradcheck,
    suite_scan_oracle,
    suite_scan_backward,
    suite_attention_oracle,
    suite_metric_oracle,
    suite_projection,
    suite_wta_isolation,
    suite_refine_mask,
    suite_checkpoint,
)


def run_selfcheck(out=print, fault=None):
    """Run every suite; returns the number of failures."""
    failures = 0
    for suite in SUITES:
        res = suite(fault)
        out(res.line())
        if not res.ok:
            failures += 1
    out(f"suites={len(SUITES)} failures={failures}")
    return failures
