"""Collation of per-sub-scene arrays into padded cross-scenario batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scene as sc


@dataclass
class Batch:
    """One sub-scene position across a batch of scenarios, padded and masked."""

    agents: np.ndarray  # (B, Na, Tw, C_a)
    agent_step_mask: np.ndarray  # (B, Na, Tw)
    agent_row_mask: np.ndarray  # (B, Na)
    agent_pos: np.ndarray  # (B, Na, 2)
    map_segments: np.ndarray  # (B, Nm, L, C_m)
    map_seg_mask: np.ndarray  # (B, Nm, L)
    map_row_mask: np.ndarray  # (B, Nm)
    map_pos: np.ndarray  # (B, Nm, 2)
    row_scene: np.ndarray  # (R,) scenario index of each agent-of-interest row
    row_agent: np.ndarray  # (R,) agent row inside the scenario
    aoi_pos: np.ndarray  # (R, 2)
    future: np.ndarray  # (R, T_m, 2)
    future_valid: np.ndarray  # (R, T_m)
    transforms: list  # per-scenario FrameTransform of this sub-scene
    t_current: np.ndarray  # (B,) local current step per scenario

    @property
    def num_scenarios(self):
        return self.agents.shape[0]

    @property
    def num_rows(self):
        return len(self.row_scene)


@dataclass
class PreparedScenario:
    """Vectorized sub-scene sequence of one scenario, cached for reuse."""

    raws: list  # RawScene per sub-scene position
    transforms: list  # FrameTransform per position
    t_current: list  # local current step per position


def prepare(subscene_seq, radius_m=sc.DEFAULT_RADIUS_M):
    return PreparedScenario(
        raws=[sc.vectorize(s, radius_m) for s in subscene_seq],
        transforms=[s.transform for s in subscene_seq],
        t_current=[s.t_current for s in subscene_seq],
    )


def collate(subscene_seqs, radius_m=sc.DEFAULT_RADIUS_M, dtype=np.float32):
    """Vectorize aligned sub-scene sequences into one Batch per position.

    ``subscene_seqs`` is a list (one per scenario) of equal-length sub-scene
    lists ordered past to present.
    """
    n_sub = len(subscene_seqs[0])
    if any(len(s) != n_sub for s in subscene_seqs):
        raise ValueError("scenarios disagree on sub-scene count")
    return collate_prepared([prepare(seq, radius_m) for seq in subscene_seqs], dtype)


def collate_prepared(prepared, dtype=np.float32):
    n_sub = len(prepared[0].raws)
    if any(len(p.raws) != n_sub for p in prepared):
        raise ValueError("scenarios disagree on sub-scene count")
    return [_collate_position(prepared, i, dtype) for i in range(n_sub)]


def _collate_position(prepared, pos, dtype):
    raws = [p.raws[pos] for p in prepared]
    b = len(raws)
    na = max(r.agents.shape[0] for r in raws)
    nm = max(max(r.map_segments.shape[0] for r in raws), 1)
    tw = raws[0].agents.shape[1]
    tm = raws[0].future.shape[1]
    ca, l, cm = raws[0].agents.shape[2], raws[0].map_segments.shape[1], raws[0].map_segments.shape[2]

    agents = np.zeros((b, na, tw, ca), dtype=dtype)
    a_step = np.zeros((b, na, tw), dtype=bool)
    a_row = np.zeros((b, na), dtype=bool)
    a_pos = np.zeros((b, na, 2), dtype=dtype)
    segs = np.zeros((b, nm, l, cm), dtype=dtype)
    m_seg = np.zeros((b, nm, l), dtype=bool)
    m_row = np.zeros((b, nm), dtype=bool)
    m_pos = np.zeros((b, nm, 2), dtype=dtype)

    row_scene, row_agent, aoi_pos, future, future_valid = [], [], [], [], []
    for i, r in enumerate(raws):
        ka = r.agents.shape[0]
        km = r.map_segments.shape[0]
        agents[i, :ka] = r.agents
        a_step[i, :ka] = r.agent_step_mask
        a_row[i, :ka] = True
        a_pos[i, :ka] = r.agent_pos
        if km:
            segs[i, :km] = r.map_segments
            m_seg[i, :km] = r.map_seg_mask
            m_row[i, :km] = True
            m_pos[i, :km] = r.map_pos
        for j in r.aoi_rows:
            row_scene.append(i)
            row_agent.append(int(j))
            aoi_pos.append(r.agent_pos[j])
        future.append(r.future)
        future_valid.append(r.future_valid)

    return Batch(
        agents=agents,
        agent_step_mask=a_step,
        agent_row_mask=a_row,
        agent_pos=a_pos,
        map_segments=segs,
        map_seg_mask=m_seg,
        map_row_mask=m_row,
        map_pos=m_pos,
        row_scene=np.asarray(row_scene, dtype=np.int64),
        row_agent=np.asarray(row_agent, dtype=np.int64),
        aoi_pos=np.asarray(aoi_pos, dtype=dtype).reshape(-1, 2),
        future=np.concatenate(future, axis=0).astype(dtype),
        future_valid=np.concatenate(future_valid, axis=0),
        transforms=[p.transforms[pos] for p in prepared],
        t_current=np.asarray([p.t_current[pos] for p in prepared], dtype=np.int64),
    )
