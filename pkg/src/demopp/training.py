"""Training loop, batched evaluation, and prediction extraction."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import batching, metrics, objective, optim, scene, synth
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .model import DecoupledForecaster, ModelConfig


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class ShapeMismatch(RuntimeError):
    pass


@dataclass
class TrainSettings:
    epochs: int = 60
    batch_size: int = 16
    base_lr: float = 3e-3
    weight_decay: float = 1e-2
    warmup_epochs: int = 10
    seed: int = 0
    n_sub: int = 3
    history_steps: int = 30  # T_w
    radius_m: float = scene.DEFAULT_RADIUS_M
    clip_norm: float = 5.0


@dataclass
class EpochStats:
    epoch: int
    lr: float
    loss: float
    components: dict = field(default_factory=dict)

    def line(self):
        c = self.components
        return (
            f"epoch={self.epoch} lr={self.lr:.6g} L={self.loss:.6g} "
            f"L_prop={c['L_prop']:.6g} L_ref={c['L_ref']:.6g} "
            f"L_ts={c['L_ts']:.6g} L_m={c['L_m']:.6g}"
        )


def num_workers():
    env = os.environ.get("DEMOPP_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def prepare_scenarios(scenarios, settings):
    return [
        batching.prepare(scene.reorganize(s, settings.n_sub, settings.history_steps, settings.radius_m), settings.radius_m)
        for s in scenarios
    ]


def train(scenarios, cfg, settings, log=None):
    """Train a fresh forecaster; deterministic for fixed seed and inputs."""
    if not scenarios:
        raise ValueError("no training scenarios")
    init_rng = np.random.default_rng(settings.seed)
    run_rng = np.random.default_rng(settings.seed + 1)
    net = DecoupledForecaster(cfg, init_rng)
    prepared = prepare_scenarios(scenarios, settings)

    params = net.named_parameters()
    state = optim.OptimState(
        base_lr=settings.base_lr,
        weight_decay=settings.weight_decay,
        warmup_epochs=settings.warmup_epochs,
        total_epochs=settings.epochs,
    )
    history = []
    net.train()
    for epoch in range(settings.epochs):
        lr = optim.cosine_warmup_lr(epoch, state)
        order = run_rng.permutation(len(prepared))
        sums = {"L_prop": 0.0, "L_ref": 0.0, "L_ts": 0.0, "L_m": 0.0}
        loss_sum = 0.0
        nb = 0
        for start in range(0, len(order), settings.batch_size):
            idx = order[start : start + settings.batch_size]
            batches = batching.collate_prepared([prepared[i] for i in idx])
            net.zero_grad()
            value = 0.0
            # sub-scene losses are independent once history is detached, so
            # each one backpropagates eagerly and its graph is freed at once
            for (preds, _), b in zip(net.forward_steps(batches, run_rng), batches):
                rep = objective.subscene_loss(preds, b.future, b.future_valid)
                l_sub = rep.l_sub
                value += float(l_sub.data)
                l_sub.backward()
                for key, v in rep.scalars().items():
                    if key in sums:
                        sums[key] += v
            if not np.isfinite(value):
                raise TrainingDiverged(epoch)
            grads = {n: p.grad for n, p in params.items() if p.grad is not None}
            if settings.clip_norm > 0:
                optim.clip_grad_norm(grads, settings.clip_norm)
            if lr > 0:
                optim.adamw_step(params, grads, state, lr)
            net.zero_grad()
            loss_sum += value
            nb += 1
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            loss=loss_sum / nb,
            components={k: v / nb for k, v in sums.items()},
        )
        history.append(stats)
        if log:
            log(stats.line())
    net.eval()
    return net, history


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

HEADS = ("state", "mode", "proposal", "refined")


@dataclass
class ScenarioPrediction:
    """Final-sub-scene outputs for every agent of interest of one scenario."""

    scenario_id: str
    agent_ids: list
    transform: scene.FrameTransform  # local frame the arrays live in
    heads: dict  # head -> (trajectories (R, K, T, 2), probs (R, K)) local frame
    gt: np.ndarray  # (R, T, 2) local frame
    gt_valid: np.ndarray

    def global_trajectories(self, head="refined"):
        traj, probs = self.heads[head]
        flat = self.transform.apply_inverse(traj.reshape(-1, 2))
        return flat.reshape(traj.shape), probs


def _forward_chunk(net, prepared_chunk, metas):
    batches = batching.collate_prepared(prepared_chunk)
    with T.no_grad():
        outs = net.forward(batches)
    preds, _ = outs[-1]
    last = batches[-1]
    results = []
    for i, meta in enumerate(metas):
        rows = np.nonzero(last.row_scene == i)[0]
        heads = {
            "state": (preds.state_traj.data[rows][:, None], np.ones((len(rows), 1), dtype=np.float32)),
            "mode": (preds.mode_traj.data[rows], preds.mode_probs.data[rows]),
            "proposal": (preds.proposal_traj.data[rows], preds.proposal_probs.data[rows]),
            "refined": (preds.refined_traj.data[rows], preds.refined_probs.data[rows]),
        }
        results.append(
            ScenarioPrediction(
                scenario_id=meta["id"],
                agent_ids=meta["aoi"],
                transform=last.transforms[i],
                heads=heads,
                gt=last.future[rows],
                gt_valid=last.future_valid[rows],
            )
        )
    return results


def predict(net, scenarios, settings, batch_size=None, workers=None):
    """Per-scenario predictions from the present-time sub-scene."""
    if batch_size is None:
        batch_size = settings.batch_size
    prepared = prepare_scenarios(scenarios, settings)
    metas = [{"id": s.id, "aoi": list(s.aoi)} for s in scenarios]
    chunks = [
        (prepared[i : i + batch_size], metas[i : i + batch_size])
        for i in range(0, len(prepared), batch_size)
    ]
    workers = workers or num_workers()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _forward_chunk(net, *c), chunks))
    else:
        parts = [_forward_chunk(net, *c) for c in chunks]
    return [p for part in parts for p in part]


def evaluate(net, scenarios, settings, ks=(1, 6), miss_threshold_m=metrics.DEFAULT_MISS_THRESHOLD_M, batch_size=None, workers=None):
    """MetricReport over every output head, plus the constant-velocity baseline."""
    preds = predict(net, scenarios, settings, batch_size, workers)
    report = metrics.MetricReport(ks, miss_threshold_m)
    cv_report = metrics.MetricReport((1,), miss_threshold_m)
    for scn, pred in zip(scenarios, preds):
        for row, agent_id in enumerate(pred.agent_ids):
            if not pred.gt_valid[row].all():
                continue
            gt = pred.gt[row]
            sample = {h: (traj[row], probs[row]) for h, (traj, probs) in pred.heads.items()}
            report.add_sample(sample, gt)
            cv_global = synth.constant_velocity_prediction(scn, agent_id, gt.shape[0])
            cv_local = pred.transform.apply(cv_global)
            cv_report.add_sample({"cv": (cv_local[None], np.ones(1))}, gt)
    return report, cv_report


# ---------------------------------------------------------------------------
# checkpoint round trip
# ---------------------------------------------------------------------------


def save_model(path, net):
    arrays = {f"param/{k}": v for k, v in net.named_parameters().items()}
    for k, v in net.cfg.scalars().items():
        arrays[f"config/{k}"] = np.asarray(v, dtype=np.float64)
    save_checkpoint(path, arrays)


def load_model(path):
    arrays = load_checkpoint(path)
    scalars = {k.split("/", 1)[1]: float(v) for k, v in arrays.items() if k.startswith("config/")}
    if not scalars:
        raise ShapeMismatch("checkpoint carries no model configuration")
    cfg = ModelConfig.from_scalars(scalars)
    net = DecoupledForecaster(cfg, np.random.default_rng(0))
    params = net.named_parameters()
    stored = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    if set(stored) != set(params):
        missing = set(params) ^ set(stored)
        raise ShapeMismatch(f"checkpoint parameter set mismatch: {sorted(missing)[:3]}...")
    for name, p in params.items():
        if stored[name].shape != p.data.shape:
            raise ShapeMismatch(
                f"parameter '{name}' shape {stored[name].shape} != expected {p.data.shape}"
            )
        p.data = stored[name].astype(p.data.dtype)
    net.eval()
    return net
