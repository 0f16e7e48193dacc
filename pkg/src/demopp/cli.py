"""Command-line entry point: data generation, training, evaluation, prediction
export, self-verification, and the scaling bench.

Exit codes: 0 success, 2 I/O or argument problems, 3 numeric divergence
during training, 4 checkpoint/configuration shape mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import bench, metrics, scene, synth, training
from .model import ModelConfig
from .selfcheck import run_selfcheck

EXIT_OK = 0
EXIT_IO = 2
EXIT_DIVERGED = 3
EXIT_SHAPE = 4


@dataclass
class RunConfig:
    """Every knob of a run; defaults are the trained-benchmark settings."""

    width: int = 128
    heads: int = 8
    num_modes: int = 6
    state_queries: int = 60
    attn_depth: int = 3
    decoder_mamba_depth: int = 2
    encoder_mamba_depth: int = 3
    encoder_attn_depth: int = 2
    refine_radius_m: float = 50.0
    dropout: float = 0.2
    scan_expand: int = 2
    scan_state: int = 16
    cross_scene: int = 1
    epochs: int = 60
    batch_size: int = 16
    base_lr: float = 3e-3
    weight_decay: float = 1e-2
    warmup_epochs: int = 10
    seed: int = 0
    n_sub: int = 3
    history_steps: int = 30
    radius_m: float = 150.0
    clip_norm: float = 5.0

    def model_config(self):
        return ModelConfig(
            width=self.width,
            heads=self.heads,
            num_modes=self.num_modes,
            state_queries=self.state_queries,
            attn_depth=self.attn_depth,
            decoder_mamba_depth=self.decoder_mamba_depth,
            encoder_mamba_depth=self.encoder_mamba_depth,
            encoder_attn_depth=self.encoder_attn_depth,
            refine_radius_m=self.refine_radius_m,
            dropout=self.dropout,
            scan_expand=self.scan_expand,
            scan_state=self.scan_state,
            cross_scene=bool(self.cross_scene),
        )

    def settings(self):
        return training.TrainSettings(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            weight_decay=self.weight_decay,
            warmup_epochs=self.warmup_epochs,
            seed=self.seed,
            n_sub=self.n_sub,
            history_steps=self.history_steps,
            radius_m=self.radius_m,
            clip_norm=self.clip_norm,
        )


def load_config_file(path):
    """Flat key=value lines; unknown keys rejected so typos surface."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key '{key}'")
            out[key] = value
    return out


def build_run_config(args):
    cfg = RunConfig()
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(load_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            overrides[f.name] = flag
    for key, value in overrides.items():
        ftype = RunConfig.__dataclass_fields__[key].type
        setattr(cfg, key, int(value) if ftype == "int" else float(value))
    return cfg


def _add_run_flags(p):
    p.add_argument("--config", help="flat key=value file; flags override it")
    for f in fields(RunConfig):
        kind = int if f.type == "int" else float
        p.add_argument(
            f"--{f.name.replace('_', '-')}",
            type=kind,
            default=None,
            help=f"{f.name} (default {f.default})",
            dest=f.name,
        )


def build_parser():
    ap = argparse.ArgumentParser(
        prog="demopp",
        description="Decoupled-query multi-mode trajectory forecasting on synthetic driving scenes",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic scenarios", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    g.add_argument("--out", required=True, help="output scenario file")
    g.add_argument("--count", type=int, default=512, help="number of scenarios")
    g.add_argument("--seed", type=int, default=0, help="generator seed")
    g.add_argument("--profile", default="mixed", help=f"maneuver profile, one of {sorted(synth.PROFILES)}")
    g.add_argument("--noise", type=float, default=0.08, help="position jitter sigma (m)")

    t = sub.add_parser("train", help="train a forecaster", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    t.add_argument("--data", required=True, help="training scenario file")
    t.add_argument("--out-ckpt", required=True, help="checkpoint path to write")
    t.add_argument("--log", default=None, help="loss log path (default: <out-ckpt>.log)")
    _add_run_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="metric report path")
    e.add_argument("--k", default="1,6", help="comma-separated mode counts")
    e.add_argument("--miss-threshold", type=float, default=2.0, help="miss-rate threshold (m)")
    _add_run_flags(e)

    p = sub.add_parser("predict", help="dump trajectories", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="line-delimited prediction records")
    _add_run_flags(p)

    s = sub.add_parser("selfcheck", help="run the built-in verification battery")
    s.add_argument("--inject", default=None, help="fault key for harness self-tests")

    b = sub.add_parser("bench", help="scan vs attention scaling report")
    b.add_argument("--lengths", default="1024,2048")
    b.add_argument("--repeats", type=int, default=5)
    return ap


def cmd_gen_data(args):
    scenarios = synth.synth_generate(args.seed, args.count, args.profile, args.noise)
    scene.write_scenarios(args.out, scenarios)
    print(f"wrote {len(scenarios)} scenarios to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = build_run_config(args)
    scenarios = scene.read_scenarios(args.data)
    log_path = args.log or (args.out_ckpt + ".log")
    lines = []

    def log(line):
        print(line)
        lines.append(line)

    try:
        net, _ = training.train(scenarios, cfg.model_config(), cfg.settings(), log)
    except training.TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    training.save_model(args.out_ckpt, net)
    with open(log_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    print(f"checkpoint written to {args.out_ckpt}")
    return EXIT_OK


def cmd_eval(args):
    cfg = build_run_config(args)
    try:
        net = training.load_model(args.ckpt)
    except training.ShapeMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    scenarios = scene.read_scenarios(args.data)
    ks = tuple(int(k) for k in args.k.split(","))
    report, cv = training.evaluate(net, scenarios, cfg.settings(), ks, args.miss_threshold)
    text = report.lines() + "".join(f"{k}={v:.9g}\n" for k, v in cv.means().items())
    metrics.write_report(args.report, text)
    print(text, end="")
    return EXIT_OK


def cmd_predict(args):
    cfg = build_run_config(args)
    try:
        net = training.load_model(args.ckpt)
    except training.ShapeMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    scenarios = scene.read_scenarios(args.data)
    preds = training.predict(net, scenarios, cfg.settings())
    with open(args.out, "w", encoding="utf-8") as f:
        for pred in preds:
            traj, probs = pred.global_trajectories("refined")
            for row, agent_id in enumerate(pred.agent_ids):
                rec = {
                    "scenario": pred.scenario_id,
                    "agent": agent_id,
                    "probs": [round(float(v), 9) for v in probs[row]],
                    "modes": [[[round(float(x), 4), round(float(y), 4)] for x, y in m] for m in traj[row]],
                }
                f.write(json.dumps(rec) + "\n")
    print(f"wrote predictions for {len(preds)} scenarios to {args.out}")
    return EXIT_OK


def cmd_selfcheck(args):
    failures = run_selfcheck(print, args.inject)
    return EXIT_OK if failures == 0 else 1


def cmd_bench(args):
    lengths = tuple(int(v) for v in args.lengths.split(","))
    rep = bench.scaling_report(lengths, args.repeats)
    print(bench.format_report(rep, lengths))
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "selfcheck": cmd_selfcheck,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except (OSError, scene.ScenarioFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
