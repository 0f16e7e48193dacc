"""Training losses: winner-take-all regression with classification on the
selected mode, auxiliary state/mode supervision, and sub-scene aggregation.

Regression uses smooth-L1 summed over the two coordinates and averaged over
valid future steps; classification is cross-entropy against the one-hot of
the selected (closest) mode. Only the best mode's trajectory head receives
regression gradient; the others get exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

SMOOTH_L1_BETA = 1.0


@dataclass
class LossReport:
    """Per-sub-scene loss components (scalar graph tensors)."""

    l_prop: Tensor
    l_ref: Tensor
    l_ts: Tensor
    l_m: Tensor

    @property
    def l_sub(self):
        return T.add(T.add(self.l_prop, self.l_ref), T.add(self.l_ts, self.l_m))

    def scalars(self):
        return {
            "L_prop": float(self.l_prop.data),
            "L_ref": float(self.l_ref.data),
            "L_ts": float(self.l_ts.data),
            "L_m": float(self.l_m.data),
            "L_sub": float(self.l_sub.data),
        }

    def lines(self):
        return "\n".join(f"{k}={v:.6g}" for k, v in self.scalars().items())


def select_best(trajectories, gt, gt_valid=None):
    """Pick the mode with minimal mean valid-step displacement.

    Returns (index, best trajectory, one-hot classification target); exact
    ties resolve to the lowest index.
    """
    traj = np.asarray(trajectories.data if isinstance(trajectories, Tensor) else trajectories)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt)
    k = traj.shape[0]
    if gt_valid is None:
        gt_valid = np.ones(gt.shape[0], dtype=bool)
    gt_valid = np.asarray(gt_valid, dtype=bool)
    if not gt_valid.any():
        raise ValueError("no valid ground-truth steps to select against")
    d = np.linalg.norm(traj - gt, axis=-1)  # (K, T)
    errs = d[:, gt_valid].mean(axis=1)
    idx = int(np.argmin(errs))
    onehot = np.zeros(k, dtype=traj.dtype)
    onehot[idx] = 1.0
    return idx, traj[idx], onehot


def _best_rows(traj, gt, valid):
    """Batched argmin of mean valid-step displacement: (R,) indices."""
    d = np.linalg.norm(traj - gt[:, None], axis=-1)  # (R, K, T)
    w = valid[:, None, :]
    counts = w.sum(axis=-1)
    if (counts == 0).any():
        raise ValueError("no valid ground-truth steps to select against")
    errs = (d * w).sum(axis=-1) / counts
    return np.argmin(errs, axis=-1)


def _masked_regression(pred, gt_t, step_w):
    """Mean over rows of smooth-L1 summed per step and averaged over steps."""
    sl = T.smooth_l1(pred, gt_t, SMOOTH_L1_BETA).sum(axis=-1)
    return T.mul(T.tsum(T.mul(sl, step_w)), 1.0 / pred.shape[0])


def _wta_terms(traj, logits, gt_t, gt, valid, step_w):
    rows = np.arange(traj.shape[0])
    best = _best_rows(traj.data, gt, valid)
    pred_best = traj[rows, best]  # gradient flows only into the selected mode
    reg = _masked_regression(pred_best, gt_t, step_w)
    lp = T.log_softmax(logits)
    ce = T.mul(T.tsum(lp[rows, best]), -1.0 / traj.shape[0])
    return T.add(reg, ce)


def subscene_loss(preds, gt, gt_valid):
    """LossReport for one sub-scene batch of predictions.

    gt is (R, T_m, 2) in the sub-scene frame with a validity mask; every
    component averages over the R agent rows.
    """
    gt = np.asarray(gt)
    valid = np.asarray(gt_valid, dtype=bool)
    counts = valid.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ValueError("agent row with no valid future steps")
    step_w = (valid / counts).astype(gt.dtype)
    gt_row = Tensor(gt)
    sw = Tensor(step_w)

    l_ts = _masked_regression(preds.state_traj, gt_row, sw)
    l_m = _wta_terms(preds.mode_traj, preds.mode_logits, gt_row, gt, valid, sw)
    l_prop = _wta_terms(preds.proposal_traj, preds.proposal_logits, gt_row, gt, valid, sw)
    l_ref = _wta_terms(preds.refined_traj, preds.refined_logits, gt_row, gt, valid, sw)
    return LossReport(l_prop=l_prop, l_ref=l_ref, l_ts=l_ts, l_m=l_m)


def total_loss(reports):
    """Equal-weight sum of per-sub-scene totals."""
    if not reports:
        raise ValueError("no sub-scene loss reports")
    out = reports[0].l_sub
    for rep in reports[1:]:
        out = T.add(out, rep.l_sub)
    return out
