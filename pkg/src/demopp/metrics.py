"""Displacement metrics over top-k modes, Brier-weighted endpoint error,
miss rate, the closed-loop composite score, and report files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_MISS_THRESHOLD_M = 2.0


def _top_k(probs, k):
    """Indices of the k most probable modes; ties resolve to lower index."""
    probs = np.asarray(probs)
    if k > probs.shape[0]:
        raise ValueError(f"k={k} exceeds the {probs.shape[0]} available modes")
    return np.argsort(-probs, kind="stable")[:k]


def displacement_metrics(preds, probs, gt, k, miss_threshold_m=DEFAULT_MISS_THRESHOLD_M):
    """(minADE_k, minFDE_k, miss indicator) over the top-k modes by probability."""
    preds = np.asarray(preds, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    sel = _top_k(probs, k)
    d = np.linalg.norm(preds[sel] - gt, axis=-1)  # (k, T)
    min_ade = float(d.mean(axis=1).min())
    fde = d[:, -1]
    min_fde = float(fde.min())
    return min_ade, min_fde, bool(min_fde > miss_threshold_m)


def brier_min_fde(preds, probs, gt, k):
    """Endpoint error of the best-endpoint mode plus (1 - p)^2 of that mode."""
    preds = np.asarray(preds, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    sel = _top_k(probs, k)
    fde = np.linalg.norm(preds[sel, -1] - gt[-1], axis=-1)
    j = int(np.argmin(fde))
    return float(fde[j] + (1.0 - probs[sel[j]]) ** 2)


@dataclass(frozen=True)
class PdmSubscores:
    no_collision: float
    drivable_area: float
    time_to_collision: float
    comfort: float
    ego_progress: float

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"subscore '{name}'={v} outside [0, 1]")


def pdm_composite(s):
    """Multiplicative gates times the weighted progress/safety/comfort mean."""
    inner = (5.0 * s.ego_progress + 5.0 * s.time_to_collision + 2.0 * s.comfort) / 12.0
    return s.no_collision * s.drivable_area * inner


class MetricReport:
    """Mean displacement metrics per output head and per k, over samples."""

    def __init__(self, ks=(1, 6), miss_threshold_m=DEFAULT_MISS_THRESHOLD_M):
        self.ks = tuple(ks)
        self.miss_threshold_m = miss_threshold_m
        self._acc = {}
        self._count = 0

    def add_sample(self, head_predictions, gt):
        """head_predictions: {head: (trajectories (K, T, 2), probs (K,))}."""
        self._count += 1
        for head, (preds, probs) in head_predictions.items():
            avail = np.asarray(probs).shape[0]
            for k in self.ks:
                if k > avail:
                    continue
                ade, fde, miss = displacement_metrics(preds, probs, gt, k, self.miss_threshold_m)
                bfde = brier_min_fde(preds, probs, gt, k)
                for metric, v in (
                    (f"minADE_{k}", ade),
                    (f"minFDE_{k}", fde),
                    (f"MR_{k}", float(miss)),
                    (f"b-minFDE_{k}", bfde),
                ):
                    self._acc[f"{head}.{metric}"] = self._acc.get(f"{head}.{metric}", 0.0) + v

    @property
    def samples(self):
        return self._count

    def means(self):
        if self._count == 0:
            raise ValueError("empty metric report")
        return {k: v / self._count for k, v in sorted(self._acc.items())}

    def lines(self):
        rows = [f"samples={self._count}", f"miss_threshold_m={self.miss_threshold_m:.6g}"]
        rows += [f"{k}={v:.9g}" for k, v in self.means().items()]
        return "\n".join(rows) + "\n"


def write_report(path, report):
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.lines() if isinstance(report, MetricReport) else report)


def parse_report(path):
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key] = float(value)
    return out
