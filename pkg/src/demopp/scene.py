"""Scenario data model: tracks, map polylines, coordinate frames, sliding-window
sub-scenes, vectorization to padded arrays, and line-delimited file I/O.

Timeline convention: a track stores one row per step; ``t_current`` is the
number of observed steps, so history occupies [t_current - T_w, t_current) and
the future (prediction target) occupies [t_current, t_current + T_m). The pose
anchoring a frame is the last observed step, index t_current - 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

AGENT_CHANNELS = 7  # x, y, cos(heading), sin(heading), vx, vy, valid
MAP_CHANNELS = 6  # segment start xy, end xy, one-hot kind
SEGMENTS_PER_POLYLINE = 20
POLYLINE_KINDS = ("lane", "crossing")
DEFAULT_RADIUS_M = 150.0


class ScenarioFormatError(ValueError):
    """Malformed scenario file; message names the line and field."""


# ---------------------------------------------------------------------------
# core records
# ---------------------------------------------------------------------------


@dataclass
class AgentTrack:
    id: str
    type: str
    xy: np.ndarray  # (T, 2) float32
    heading: np.ndarray  # (T,) float32
    vel: np.ndarray  # (T, 2) float32
    valid: np.ndarray  # (T,) bool

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float32)
        self.heading = np.asarray(self.heading, dtype=np.float32)
        self.vel = np.asarray(self.vel, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not np.isfinite(self.xy[self.valid]).all():
            raise ValueError(f"track '{self.id}' has non-finite observed positions")

    def __len__(self):
        return len(self.valid)

    def __eq__(self, other):
        return (
            self.id == other.id
            and self.type == other.type
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.heading, other.heading)
            and np.array_equal(self.vel, other.vel)
            and np.array_equal(self.valid, other.valid)
        )


@dataclass
class MapPolyline:
    id: str
    kind: str
    pts: np.ndarray  # (P, 2) float32, P >= 2

    def __post_init__(self):
        self.pts = np.asarray(self.pts, dtype=np.float32)
        if self.kind not in POLYLINE_KINDS:
            raise ValueError(f"polyline '{self.id}' has unknown kind '{self.kind}'")
        if len(self.pts) < 2:
            raise ValueError(f"polyline '{self.id}' needs at least 2 points")

    def __eq__(self, other):
        return self.id == other.id and self.kind == other.kind and np.array_equal(self.pts, other.pts)


@dataclass
class Scenario:
    id: str
    dt: float
    t_current: int
    aoi: list
    agents: list
    map_polylines: list

    def agent(self, agent_id):
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"no agent '{agent_id}' in scenario '{self.id}'")

    @property
    def horizon_steps(self):
        return min(len(a) for a in self.agents) - self.t_current

    def __eq__(self, other):
        return (
            self.id == other.id
            and self.dt == other.dt
            and self.t_current == other.t_current
            and self.aoi == other.aoi
            and self.agents == other.agents
            and self.map_polylines == other.map_polylines
        )


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameTransform:
    """Rigid 2-D frame: local = R(-rotation) @ (global - origin)."""

    origin: tuple
    rotation: float

    def _rot(self, angle):
        c, s = np.cos(angle), np.sin(angle)
        return np.array([[c, -s], [s, c]], dtype=np.float64)

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return (pts - np.asarray(self.origin)) @ self._rot(-self.rotation).T

    def apply_inverse(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self._rot(self.rotation).T + np.asarray(self.origin)

    def rotate(self, vectors):
        """Rotate direction vectors into the local frame (no translation)."""
        return np.asarray(vectors, dtype=np.float64) @ self._rot(-self.rotation).T

    def compose(self, inner):
        """Single transform equivalent to ``inner`` followed by this one.

        compose(inner).apply(x) == self.apply(inner.apply(x)); self's origin
        lives in inner's output frame, so it is mapped back before combining.
        """
        rot = self.rotation + inner.rotation
        origin = inner.apply_inverse(np.asarray(self.origin, dtype=np.float64))
        return FrameTransform(tuple(origin), rot)


def to_agent_frame(points, transform):
    """Express global points in the agent-centric frame of ``transform``."""
    return transform.apply(points)


def pose_frame(position, heading):
    return FrameTransform((float(position[0]), float(position[1])), float(heading))


# ---------------------------------------------------------------------------
# sub-scenes
# ---------------------------------------------------------------------------


@dataclass
class SubScene:
    scenario: Scenario
    index: int
    t_current: int  # local current step inside the parent timeline
    history_steps: int  # T_w
    future_steps: int  # T_m
    transform: FrameTransform
    local_map: list
    aoi: list = field(default_factory=list)

    @property
    def parent_id(self):
        return self.scenario.id


def _current_pose(track, t_current):
    idx = t_current - 1
    if idx < 0 or idx >= len(track) or not track.valid[idx]:
        raise ValueError(f"agent '{track.id}' unobserved at step {idx}")
    return track.xy[idx].astype(np.float64), float(track.heading[idx])


def reorganize(scenario, n_sub, history_steps, radius_m=DEFAULT_RADIUS_M):
    """Slice a scenario into evenly spaced sub-scenes, past to present.

    Sub-scene i has local current step t_current - stride * (n_sub - 1 - i)
    with stride (T_h - T_w) / (n_sub - 1); the last window reproduces the
    original split and every future window keeps the full length.
    """
    if n_sub < 1:
        raise ValueError("n_sub must be >= 1")
    t_h = scenario.t_current
    if history_steps > t_h:
        raise ValueError(f"history window {history_steps} exceeds observed steps {t_h}")
    if n_sub > 1:
        if (t_h - history_steps) % (n_sub - 1):
            raise ValueError(
                f"uneven stride: ({t_h} - {history_steps}) not divisible by {n_sub - 1}"
            )
        stride = (t_h - history_steps) // (n_sub - 1)
    else:
        stride = 0
    future_steps = scenario.horizon_steps
    if future_steps < 1:
        raise ValueError(f"scenario '{scenario.id}' records no future steps")

    subs = []
    for i in range(n_sub):
        local_t = t_h - stride * (n_sub - 1 - i)
        shortest = min(len(a) for a in scenario.agents)
        if local_t + future_steps > shortest:
            raise ValueError(
                f"future window [{local_t}, {local_t + future_steps}) exceeds recorded data"
            )
        primary = scenario.agent(scenario.aoi[0])
        pos, heading = _current_pose(primary, local_t)
        transform = pose_frame(pos, heading)
        aoi_positions = []
        for aid in scenario.aoi:
            p, _ = _current_pose(scenario.agent(aid), local_t)
            aoi_positions.append(p)
        local_map = [
            pl for pl in scenario.map_polylines if _polyline_distance(pl, aoi_positions) <= radius_m
        ]
        subs.append(
            SubScene(
                scenario=scenario,
                index=i,
                t_current=local_t,
                history_steps=history_steps,
                future_steps=future_steps,
                transform=transform,
                local_map=local_map,
                aoi=list(scenario.aoi),
            )
        )
    return subs


def _polyline_distance(polyline, positions):
    d = min(
        float(np.min(np.linalg.norm(polyline.pts.astype(np.float64) - p, axis=1)))
        for p in positions
    )
    return d


def resample_polyline(pts, segments=SEGMENTS_PER_POLYLINE):
    """Uniform arc-length resampling into ``segments`` segments."""
    pts = np.asarray(pts, dtype=np.float64)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(d)])
    total = s[-1]
    if total <= 0:
        return np.repeat(pts[:1], segments + 1, axis=0)
    targets = np.linspace(0.0, total, segments + 1)
    x = np.interp(targets, s, pts[:, 0])
    y = np.interp(targets, s, pts[:, 1])
    return np.stack([x, y], axis=1)


# ---------------------------------------------------------------------------
# vectorization
# ---------------------------------------------------------------------------


@dataclass
class RawScene:
    """Dense per-sub-scene arrays in the local frame, ready to batch."""

    agents: np.ndarray  # (N_a, T_w, AGENT_CHANNELS) float32
    agent_step_mask: np.ndarray  # (N_a, T_w) bool
    agent_pos: np.ndarray  # (N_a, 2) float32, current local position per agent
    agent_ids: list
    aoi_rows: np.ndarray  # (N_aoi,) int, rows of the agents of interest
    map_segments: np.ndarray  # (N_m, L, MAP_CHANNELS) float32
    map_seg_mask: np.ndarray  # (N_m, L) bool
    map_pos: np.ndarray  # (N_m, 2) float32 polyline centroids
    map_ids: list
    future: np.ndarray  # (N_aoi, T_m, 2) float32 local-frame targets
    future_valid: np.ndarray  # (N_aoi, T_m) bool


def vectorize(sub, radius_m=DEFAULT_RADIUS_M):
    """Turn one sub-scene into padded arrays plus masks.

    Agents and polylines farther than ``radius_m`` from every agent of
    interest are dropped; invalid steps are masked and zeroed.
    """
    if not sub.aoi:
        raise ValueError("sub-scene has no agents of interest")
    scn = sub.scenario
    t0 = sub.t_current - sub.history_steps
    t1 = sub.t_current
    tf = np.arange(t0, t1)

    aoi_positions = [_current_pose(scn.agent(aid), t1)[0] for aid in sub.aoi]

    rows = []
    order = list(scn.aoi) + sorted(a.id for a in scn.agents if a.id not in scn.aoi)
    for aid in order:
        track = scn.agent(aid)
        win = tf[(tf >= 0) & (tf < len(track))]
        valid_steps = np.zeros(sub.history_steps, dtype=bool)
        valid_steps[win - t0] = track.valid[win]
        if not valid_steps.any():
            if aid in sub.aoi:
                raise ValueError(f"agent of interest '{aid}' has no observed history")
            continue
        last = win[track.valid[win]][-1]
        cur = track.xy[last].astype(np.float64)
        if aid not in sub.aoi:
            if min(float(np.linalg.norm(cur - p)) for p in aoi_positions) > radius_m:
                continue
        rows.append((aid, track, valid_steps, cur))

    n_a = len(rows)
    agents = np.zeros((n_a, sub.history_steps, AGENT_CHANNELS), dtype=np.float32)
    step_mask = np.zeros((n_a, sub.history_steps), dtype=bool)
    agent_pos = np.zeros((n_a, 2), dtype=np.float32)
    agent_ids = []
    for r, (aid, track, valid_steps, cur) in enumerate(rows):
        agent_ids.append(aid)
        step_mask[r] = valid_steps
        steps = tf[valid_steps]
        xy_loc = sub.transform.apply(track.xy[steps])
        h_loc = track.heading[steps].astype(np.float64) - sub.transform.rotation
        v_loc = sub.transform.rotate(track.vel[steps])
        sl = valid_steps.nonzero()[0]
        agents[r, sl, 0:2] = xy_loc
        agents[r, sl, 2] = np.cos(h_loc)
        agents[r, sl, 3] = np.sin(h_loc)
        agents[r, sl, 4:6] = v_loc
        agents[r, sl, 6] = 1.0
        agent_pos[r] = sub.transform.apply(cur)

    polylines = [
        pl for pl in sub.local_map if _polyline_distance(pl, aoi_positions) <= radius_m
    ]
    n_m = len(polylines)
    segs = np.zeros((n_m, SEGMENTS_PER_POLYLINE, MAP_CHANNELS), dtype=np.float32)
    seg_mask = np.ones((n_m, SEGMENTS_PER_POLYLINE), dtype=bool)
    map_pos = np.zeros((n_m, 2), dtype=np.float32)
    map_ids = []
    for r, pl in enumerate(polylines):
        map_ids.append(pl.id)
        pts = sub.transform.apply(resample_polyline(pl.pts))
        segs[r, :, 0:2] = pts[:-1]
        segs[r, :, 2:4] = pts[1:]
        segs[r, :, 4 + POLYLINE_KINDS.index(pl.kind)] = 1.0
        map_pos[r] = pts.mean(axis=0)

    if n_a == 0 and n_m == 0:
        raise ValueError("sub-scene is empty after radius filtering")

    n_aoi = len(sub.aoi)
    future = np.zeros((n_aoi, sub.future_steps, 2), dtype=np.float32)
    future_valid = np.zeros((n_aoi, sub.future_steps), dtype=bool)
    for j, aid in enumerate(sub.aoi):
        track = scn.agent(aid)
        steps = np.arange(t1, t1 + sub.future_steps)
        ok = track.valid[steps]
        future_valid[j] = ok
        future[j, ok] = sub.transform.apply(track.xy[steps[ok]])

    return RawScene(
        agents=agents,
        agent_step_mask=step_mask,
        agent_pos=agent_pos,
        agent_ids=agent_ids,
        aoi_rows=np.arange(n_aoi),
        map_segments=segs,
        map_seg_mask=seg_mask,
        map_pos=map_pos,
        map_ids=map_ids,
        future=future,
        future_valid=future_valid,
    )


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _fmt(x):
    return f"{float(x):.9g}"


def _fmt_pairs(arr):
    return "[" + ",".join(f"[{_fmt(a)},{_fmt(b)}]" for a, b in np.asarray(arr).reshape(-1, 2)) + "]"


def _fmt_scalars(arr):
    return "[" + ",".join(_fmt(v) for v in np.asarray(arr).reshape(-1)) + "]"


def _agent_json(a):
    return (
        "{"
        + f'"id":{json.dumps(a.id)},"type":{json.dumps(a.type)},'
        + f'"xy":{_fmt_pairs(a.xy)},"heading":{_fmt_scalars(a.heading)},'
        + f'"vel":{_fmt_pairs(a.vel)},"valid":[{",".join(str(int(v)) for v in a.valid)}]'
        + "}"
    )


def _polyline_json(p):
    return "{" + f'"id":{json.dumps(p.id)},"kind":{json.dumps(p.kind)},"pts":{_fmt_pairs(p.pts)}' + "}"


def scenario_to_line(scn):
    return (
        "{"
        + f'"id":{json.dumps(scn.id)},"dt":{_fmt(scn.dt)},"t_current":{scn.t_current},'
        + f'"aoi":{json.dumps(scn.aoi)},'
        + f'"agents":[{",".join(_agent_json(a) for a in scn.agents)}],'
        + f'"map":[{",".join(_polyline_json(p) for p in scn.map_polylines)}]'
        + "}"
    )


def write_scenarios(path, scenarios):
    with open(path, "w", encoding="utf-8") as f:
        for scn in scenarios:
            f.write(scenario_to_line(scn))
            f.write("\n")


def _get(obj, key, lineno):
    try:
        return obj[key]
    except (KeyError, TypeError, IndexError):
        raise ScenarioFormatError(f"line {lineno}: missing field '{key}'") from None


def scenario_from_line(line, lineno=1):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        truncated = e.pos >= len(line.rstrip()) or e.msg.startswith("Unterminated")
        if truncated:
            raise ScenarioFormatError(f"line {lineno}: unexpected end") from None
        raise ScenarioFormatError(f"line {lineno}: {e.msg} (column {e.colno})") from None

    agents = []
    for a in _get(obj, "agents", lineno):
        xy = np.asarray(_get(a, "xy", lineno), dtype=np.float32)
        heading = np.asarray(_get(a, "heading", lineno), dtype=np.float32)
        vel = np.asarray(_get(a, "vel", lineno), dtype=np.float32)
        valid = np.asarray(_get(a, "valid", lineno), dtype=bool)
        if not (len(xy) == len(heading) == len(vel) == len(valid)):
            raise ScenarioFormatError(f"line {lineno}: field 'valid' length mismatch in agent '{a.get('id')}'")
        agents.append(AgentTrack(_get(a, "id", lineno), _get(a, "type", lineno), xy, heading, vel, valid))
    polylines = [
        MapPolyline(_get(p, "id", lineno), _get(p, "kind", lineno), np.asarray(_get(p, "pts", lineno), dtype=np.float32))
        for p in _get(obj, "map", lineno)
    ]
    return Scenario(
        id=_get(obj, "id", lineno),
        dt=float(_get(obj, "dt", lineno)),
        t_current=int(_get(obj, "t_current", lineno)),
        aoi=list(_get(obj, "aoi", lineno)),
        agents=agents,
        map_polylines=polylines,
    )


def read_scenarios(path):
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                out.append(scenario_from_line(line, lineno))
    return out
