"""Seeded synthetic driving scenarios: kinematic agents over lane polylines.

Each scenario places a focal vehicle approaching a junction area; at the
current step it commits to one of five maneuver classes (straight, left,
right, lane-change, stop). History carries no maneuver cue, so the future is
genuinely multi-modal. Timing follows a 10 Hz / 5 s history / 6 s future
layout. Scenario ids embed the maneuver class for downstream bookkeeping.
"""

from __future__ import annotations

import numpy as np

from .scene import AgentTrack, MapPolyline, Scenario

DT = 0.1
HISTORY_STEPS = 50
FUTURE_STEPS = 60
TOTAL_STEPS = HISTORY_STEPS + FUTURE_STEPS

MANEUVERS = ("straight", "left", "right", "lane-change", "stop")
LANE_OFFSET = 3.5

PROFILES = {"mixed": None}
PROFILES.update({m: m for m in MANEUVERS})


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def _focal_path(maneuver, v0, rng):
    """Canonical-frame positions (TOTAL_STEPS, 2): origin at the decision
    point, approach along +x, maneuver starting at the current step."""
    t = np.arange(TOTAL_STEPS, dtype=np.float64)
    rel = (t - HISTORY_STEPS) * DT  # seconds past the decision point
    x = v0 * rel
    y = np.zeros_like(x)

    if maneuver == "straight":
        pass
    elif maneuver in ("left", "right"):
        r = rng.uniform(10.0, 14.0)
        sgn = 1.0 if maneuver == "left" else -1.0
        arc_t = (np.pi / 2) * r / v0  # time to sweep a quarter turn
        m = rel > 0
        phi = np.minimum(rel[m], arc_t) * v0 / r  # swept angle
        x[m] = r * np.sin(phi)
        y[m] = sgn * r * (1.0 - np.cos(phi))
        # past the quarter turn the exit is straight along the new heading
        extra = np.maximum(rel[m] - arc_t, 0.0) * v0
        y[m] += sgn * extra
    elif maneuver == "lane-change":
        sgn = rng.choice([-1.0, 1.0])
        dur = rng.uniform(2.5, 4.0)
        m = rel > 0
        y[m] = sgn * LANE_OFFSET * _smoothstep(rel[m] / dur)
    elif maneuver == "stop":
        brake_t = rng.uniform(1.5, 3.0)
        a = v0 / brake_t
        m = rel > 0
        rm = rel[m]
        moving = rm < brake_t
        x[m] = np.where(moving, v0 * rm - 0.5 * a * rm * rm, 0.5 * v0 * brake_t)
    else:
        raise ValueError(f"unknown maneuver '{maneuver}'")
    return np.stack([x, y], axis=1)


def _derive_track(agent_id, agent_type, pts, frame_origin, frame_rot, noise, rng, valid=None):
    """Finish a canonical-frame path into a track: jitter, global pose,
    forward-difference velocities, displacement headings."""
    pts = pts.copy()
    if noise > 0:
        pts += rng.normal(0.0, noise, size=pts.shape)
    c, s = np.cos(frame_rot), np.sin(frame_rot)
    rot = np.array([[c, -s], [s, c]])
    pts = pts @ rot.T + frame_origin

    vel = np.empty_like(pts)
    vel[:-1] = (pts[1:] - pts[:-1]) / DT
    vel[-1] = vel[-2]
    heading = np.empty(len(pts))
    speed = np.linalg.norm(vel, axis=1)
    heading[0] = frame_rot
    for i in range(len(pts)):
        if speed[i] > 0.3:
            heading[i] = np.arctan2(vel[i, 1], vel[i, 0])
        elif i > 0:
            heading[i] = heading[i - 1]
    if valid is None:
        valid = np.ones(len(pts), dtype=bool)
    return AgentTrack(agent_id, agent_type, pts, heading, vel, valid)


def _junction_map(frame_origin, frame_rot):
    """Lane polylines in the canonical frame covering all maneuver exits."""
    c, s = np.cos(frame_rot), np.sin(frame_rot)
    rot = np.array([[c, -s], [s, c]])

    def place(pts):
        return np.asarray(pts, dtype=np.float64) @ rot.T + frame_origin

    xs = np.arange(-80.0, 81.0, 5.0)
    main = np.stack([xs, np.zeros_like(xs)], axis=1)
    lanes = [("lane-main", "lane", main)]
    for name, sgn in (("lane-left", 1.0), ("lane-right", -1.0)):
        r = 12.0
        phi = np.linspace(0.0, np.pi / 2, 8)
        arc = np.stack([r * np.sin(phi), sgn * r * (1.0 - np.cos(phi))], axis=1)
        tail = np.stack([np.full(6, r), sgn * (r + 5.0 * np.arange(1, 7))], axis=1)
        approach = np.stack([np.arange(-30.0, 0.0, 5.0), np.zeros(6)], axis=1)
        lanes.append((name, "lane", np.concatenate([approach, arc, tail])))
    for name, off in (("lane-par-up", LANE_OFFSET), ("lane-par-down", -LANE_OFFSET)):
        lanes.append((name, "lane", np.stack([xs, np.full_like(xs, off)], axis=1)))
    ys = np.arange(-8.0, 8.1, 2.0)
    lanes.append(("crossing-0", "crossing", np.stack([np.full_like(ys, 8.0), ys], axis=1)))

    return [MapPolyline(name, kind, place(pts)) for name, kind, pts in lanes]


def synth_generate(seed, count, profile="mixed", noise=0.08):
    """Generate ``count`` scenarios; identical arguments reproduce identical
    output byte for byte."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile '{profile}' (choose from {sorted(PROFILES)})")
    rng = np.random.default_rng(seed)
    fixed = PROFILES[profile]

    scenarios = []
    for i in range(count):
        maneuver = fixed if fixed is not None else MANEUVERS[rng.integers(len(MANEUVERS))]
        frame_origin = rng.uniform(-100.0, 100.0, size=2)
        frame_rot = rng.uniform(-np.pi, np.pi)
        v0 = rng.uniform(5.0, 12.0)

        agents = [
            _derive_track("focal", "vehicle", _focal_path(maneuver, v0, rng), frame_origin, frame_rot, noise, rng)
        ]
        for b in range(int(rng.integers(2, 5))):
            off = rng.choice([-LANE_OFFSET, LANE_OFFSET])
            vb = rng.uniform(3.0, 11.0) * rng.choice([-1.0, 1.0])
            x0 = rng.uniform(-50.0, 50.0)
            t = np.arange(TOTAL_STEPS, dtype=np.float64)
            pts = np.stack([x0 + vb * (t - HISTORY_STEPS) * DT, np.full(TOTAL_STEPS, off)], axis=1)
            valid = np.ones(TOTAL_STEPS, dtype=bool)
            if b == 0:
                valid[: int(rng.integers(0, 30))] = False  # late appearance
            agents.append(
                _derive_track(f"veh-{b + 1}", "vehicle", pts, frame_origin, frame_rot, noise, rng, valid)
            )

        scenarios.append(
            Scenario(
                id=f"scn-{i:05d}-{maneuver}",
                dt=DT,
                t_current=HISTORY_STEPS,
                aoi=["focal"],
                agents=agents,
                map_polylines=_junction_map(frame_origin, frame_rot),
            )
        )
    return scenarios


def constant_velocity_prediction(scenario, agent_id, future_steps=FUTURE_STEPS):
    """Baseline: extrapolate the last observed velocity, in global coordinates."""
    track = scenario.agent(agent_id)
    idx = scenario.t_current - 1
    pos = track.xy[idx].astype(np.float64)
    vel = track.vel[idx].astype(np.float64)
    steps = np.arange(1, future_steps + 1)[:, None] * DT
    return pos + vel * steps


def maneuver_of(scenario_id):
    return scenario_id.split("-", 2)[2]
