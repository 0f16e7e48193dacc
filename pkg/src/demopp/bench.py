"""Wall-clock scaling harness: selective scan versus naive attention."""

from __future__ import annotations

import time

import numpy as np

from . import kernels as K
from . import tensor as T
from .tensor import Tensor


def _time(fn, repeats=5):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best.append(time.perf_counter() - t0)
    return float(np.median(best))


def scan_times(lengths=(1024, 2048), width=16, state=4, repeats=5, seed=0):
    rng = np.random.default_rng(seed)
    out = {}
    for tn in lengths:
        x = Tensor(rng.standard_normal((tn, width)).astype(np.float32))
        delta = Tensor(np.abs(rng.standard_normal((tn, width))).astype(np.float32) + 0.1)
        a = Tensor(-np.abs(rng.standard_normal((width, state))).astype(np.float32) - 0.1)
        b = Tensor(rng.standard_normal((tn, state)).astype(np.float32))
        c = Tensor(rng.standard_normal((tn, state)).astype(np.float32))
        skip = Tensor(rng.standard_normal(width).astype(np.float32))
        with T.no_grad():
            out[tn] = _time(lambda: K.selective_scan(x, delta, a, b, c, skip), repeats)
    return out


def attention_times(lengths=(1024, 2048), width=16, repeats=5, seed=0):
    """Quadratic reference: full token-token softmax attention over the same
    sequence lengths (single head, no projections)."""
    rng = np.random.default_rng(seed)
    out = {}
    for tn in lengths:
        q = rng.standard_normal((tn, width)).astype(np.float32)
        k = rng.standard_normal((tn, width)).astype(np.float32)
        v = rng.standard_normal((tn, width)).astype(np.float32)

        def naive():
            s = q @ k.T / np.sqrt(width)
            s -= s.max(axis=-1, keepdims=True)
            np.exp(s, out=s)
            s /= s.sum(axis=-1, keepdims=True)
            return s @ v

        out[tn] = _time(naive, repeats)
    return out


def scaling_report(lengths=(1024, 2048), repeats=5, seed=0):
    scan = scan_times(lengths, repeats=repeats, seed=seed)
    attn = attention_times(lengths, repeats=repeats, seed=seed)
    t0, t1 = lengths
    return {
        "scan_ms": {k: v * 1e3 for k, v in scan.items()},
        "attention_ms": {k: v * 1e3 for k, v in attn.items()},
        "scan_growth": scan[t1] / scan[t0],
        "attention_growth": attn[t1] / attn[t0],
    }


def format_report(rep, lengths=(1024, 2048)):
    t0, t1 = lengths
    lines = [
        f"scan t{t0}_ms={rep['scan_ms'][t0]:.3f} t{t1}_ms={rep['scan_ms'][t1]:.3f} growth={rep['scan_growth']:.2f}",
        f"attention t{t0}_ms={rep['attention_ms'][t0]:.3f} t{t1}_ms={rep['attention_ms'][t1]:.3f} growth={rep['attention_growth']:.2f}",
    ]
    return "\n".join(lines)
