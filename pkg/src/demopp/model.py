"""Decoupled-query trajectory forecaster.

Pipeline per sub-scene: encode agents and map into shared context tokens,
run the state-consistency and mode-localization branches, exchange intention
information with earlier sub-scenes, couple both query types into hybrid
queries that decode proposal trajectories, then refine each mode against
nearby context anchored at its own waypoints. Sub-scenes are processed past
to present; queries and decoded trajectories of earlier sub-scenes enter
later ones as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels as K
from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass
class ModelConfig:
    width: int = 128  # C
    heads: int = 8
    num_modes: int = 6  # K
    state_queries: int = 60  # T_s
    attn_depth: int = 3
    decoder_mamba_depth: int = 2
    encoder_mamba_depth: int = 3
    encoder_attn_depth: int = 2
    refine_radius_m: float = 50.0
    dropout: float = 0.2
    scan_expand: int = 2
    scan_state: int = 16
    conv_kernel: int = 4
    cross_scene: bool = True
    horizon_s: float = 6.0

    def scalars(self):
        d = asdict(self)
        d["cross_scene"] = int(d["cross_scene"])
        return {k: float(v) for k, v in d.items()}

    @classmethod
    def from_scalars(cls, scalars):
        kwargs = {}
        for f in cls.__dataclass_fields__.values():
            v = scalars[f.name]
            if f.type == "int":
                kwargs[f.name] = int(v)
            elif f.type == "bool":
                kwargs[f.name] = bool(int(v))
            else:
                kwargs[f.name] = float(v)
        return cls(**kwargs)


@dataclass
class SceneContext:
    tokens: Tensor  # (B, Nt, C), agents first then map
    valid: np.ndarray  # (B, Nt) bool
    pos: np.ndarray  # (B, Nt, 2) reference position per token
    num_agents: int  # agent rows precede map rows


@dataclass
class QuerySet:
    mode: Tensor  # (R, K, C)
    state: Tensor  # (R, T_s, C)
    hybrid: Tensor = None  # (R, K, T_s, C)
    hist_mode: list = field(default_factory=list)  # [(R, K, C) ndarray]
    hist_state: list = field(default_factory=list)


@dataclass
class PredictionSet:
    proposal_traj: Tensor  # (R, K, T_m, 2)
    proposal_logits: Tensor  # (R, K)
    proposal_probs: Tensor
    refined_traj: Tensor
    refined_logits: Tensor
    refined_probs: Tensor
    state_traj: Tensor  # (R, T_m, 2) auxiliary single trajectory
    mode_traj: Tensor  # (R, K, T_m, 2) auxiliary mode-branch decode
    mode_logits: Tensor
    mode_probs: Tensor


def _interp_matrix(t_out, t_in, dtype):
    """Linear map resampling t_in per-step values onto t_out steps."""
    if t_out == t_in:
        return None
    src = (np.arange(1, t_in + 1)) / t_in
    dst = (np.arange(1, t_out + 1)) / t_out
    w = np.zeros((t_in, t_out), dtype=dtype)
    for j, x in enumerate(dst):
        i = np.searchsorted(src, x)
        if i == 0:
            # below the first source step: scale from the implicit zero origin
            w[0, j] = x / src[0]
        elif i >= t_in:
            w[t_in - 1, j] = 1.0
        else:
            a = (x - src[i - 1]) / (src[i] - src[i - 1])
            w[i - 1, j] = 1.0 - a
            w[i, j] = a
    return w


def project_history_trajectories(traj, hist_frame, cur_frame, t_offset):
    """Re-express decoded trajectories from an earlier frame in the current one.

    Each trajectory is translated by its own waypoint at the current time step
    (so it passes exactly through the origin there) and rotated between the
    two agent-centric frames. Operates on plain arrays; history is constant.
    """
    traj = np.asarray(traj, dtype=np.float64)
    t_m = traj.shape[-2]
    if not 0 <= t_offset <= t_m:
        raise ValueError(f"t_offset {t_offset} outside the historical horizon {t_m}")
    if t_offset == 0:
        anchor = np.zeros(traj.shape[:-2] + (1, 2))
    else:
        anchor = traj[..., t_offset - 1 : t_offset, :]
    ang = hist_frame.rotation - cur_frame.rotation
    c, s = np.cos(ang), np.sin(ang)
    rot = np.array([[c, -s], [s, c]])
    return (traj - anchor) @ rot.T


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


class SceneEncoder(nn.Module):
    """Agent histories through causal scan blocks, map through the polyline
    encoder, then joint self-attention over all valid tokens."""

    def __init__(self, cfg, rng, dtype):
        super().__init__()
        c = cfg.width
        depth = cfg.encoder_attn_depth
        self.cfg = cfg
        self.agent_embed = nn.MLP([7, c, c], rng, dtype)
        self.agent_scan = nn.ModuleList(
            K.MambaBlock(c, rng, dtype, "forward", cfg.scan_expand, cfg.scan_state, cfg.conv_kernel, dropout=cfg.dropout)
            for _ in range(cfg.encoder_mamba_depth)
        )
        self.poly = K.PolylineEncoder(6, c, rng, dtype)
        self.source_embed = nn.embedding(2, c, rng, dtype)
        self.norms1 = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(depth))
        self.attn = nn.ModuleList(
            K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout) for _ in range(depth)
        )
        self.norms2 = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(depth))
        self.ffn = nn.ModuleList(nn.MLP([c, 2 * c, c], rng, dtype) for _ in range(depth))
        self.out_norm = nn.LayerNorm(c, dtype)

    def __call__(self, batch, rng=None):
        if not (batch.agent_row_mask.any() or batch.map_row_mask.any()):
            raise ValueError("scene has no valid tokens")
        x = self.agent_embed(Tensor(batch.agents))
        for blk in self.agent_scan:
            x = blk(x, rng)
        f_a = x[:, :, -1, :]  # causal: the last step summarizes the history
        f_m = self.poly(Tensor(batch.map_segments), batch.map_seg_mask, batch.map_row_mask)
        f_a = T.add(f_a, self.source_embed[0])
        f_m = T.add(f_m, self.source_embed[1])
        tokens = T.concat([f_a, f_m], axis=1)
        valid = np.concatenate([batch.agent_row_mask, batch.map_row_mask], axis=1)
        pos = np.concatenate([batch.agent_pos, batch.map_pos], axis=1)

        mask = K.padding_mask(valid, tokens.shape[1])
        for norm1, attn, norm2, ffn in zip(self.norms1, self.attn, self.norms2, self.ffn):
            h = norm1(tokens)
            tokens = T.add(tokens, attn(h, h, h, mask, rng))
            tokens = T.add(tokens, ffn(norm2(tokens)))
        tokens = self.out_norm(tokens)
        return SceneContext(tokens=tokens, valid=valid, pos=pos, num_agents=batch.agents.shape[1])


# ---------------------------------------------------------------------------
# decoder modules
# ---------------------------------------------------------------------------


class StateConsistency(nn.Module):
    """Cross-attention to scene context, then bidirectional scans over time."""

    def __init__(self, cfg, rng, dtype):
        super().__init__()
        c = cfg.width
        self.norms = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(cfg.attn_depth))
        self.cross = nn.ModuleList(
            K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout) for _ in range(cfg.attn_depth)
        )
        self.scan = nn.ModuleList(
            K.MambaBlock(c, rng, dtype, "bidirectional", cfg.scan_expand, cfg.scan_state, cfg.conv_kernel, dropout=cfg.dropout)
            for _ in range(cfg.decoder_mamba_depth)
        )
        self.out_norm = nn.LayerNorm(c, dtype)

    def __call__(self, q, keys, mask, rng=None):
        for norm, cross in zip(self.norms, self.cross):
            q = T.add(q, cross(norm(q), keys, keys, mask, rng))
        for blk in self.scan:
            q = blk(q, rng)
        return self.out_norm(q)


class ModeLocalization(nn.Module):
    """Rounds of cross-attention to context and self-attention among modes."""

    def __init__(self, cfg, rng, dtype):
        super().__init__()
        c = cfg.width
        self.norms_c = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(cfg.attn_depth))
        self.cross = nn.ModuleList(
            K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout) for _ in range(cfg.attn_depth)
        )
        self.norms_s = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(cfg.attn_depth))
        self.selfattn = nn.ModuleList(
            K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout) for _ in range(cfg.attn_depth)
        )
        self.out_norm = nn.LayerNorm(c, dtype)

    def __call__(self, q, keys, mask, rng=None):
        for norm_c, cross, norm_s, selfa in zip(self.norms_c, self.cross, self.norms_s, self.selfattn):
            q = T.add(q, cross(norm_c(q), keys, keys, mask, rng))
            h = norm_s(q)
            q = T.add(q, selfa(h, h, h, None, rng))
        return self.out_norm(q)


class HybridCoupling(nn.Module):
    """Couples mode and state queries: context cross-attention, joint
    self-attention over every (mode, step) pair, per-step attention across
    modes, then bidirectional scans along time within each mode."""

    def __init__(self, cfg, rng, dtype):
        super().__init__()
        c = cfg.width
        d = cfg.attn_depth
        self.norms_c = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(d))
        self.cross = nn.ModuleList(K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout) for _ in range(d))
        self.norms_h = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(d))
        self.hybrid_attn = nn.ModuleList(K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout) for _ in range(d))
        self.norms_m = nn.ModuleList(nn.LayerNorm(c, dtype) for _ in range(d))
        self.mode_attn = nn.ModuleList(K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout) for _ in range(d))
        self.scan = nn.ModuleList(
            K.MambaBlock(c, rng, dtype, "bidirectional", cfg.scan_expand, cfg.scan_state, cfg.conv_kernel, dropout=cfg.dropout)
            for _ in range(cfg.decoder_mamba_depth)
        )
        self.out_norm = nn.LayerNorm(c, dtype)

    def __call__(self, q, keys, mask, rng=None):
        r, k, ts, c = q.shape
        for i in range(len(self.cross)):
            flat = T.reshape(q, (r, k * ts, c))
            flat = T.add(flat, self.cross[i](self.norms_c[i](flat), keys, keys, mask, rng))
            h = self.norms_h[i](flat)
            flat = T.add(flat, self.hybrid_attn[i](h, h, h, None, rng))
            q = T.reshape(flat, (r, k, ts, c))
            per_t = q.swapaxes(1, 2)  # (R, T_s, K, C)
            h = self.norms_m[i](per_t)
            per_t = T.add(per_t, self.mode_attn[i](h, h, h, None, rng))
            q = per_t.swapaxes(1, 2)
        for blk in self.scan:
            q = blk(q, rng)
        return self.out_norm(q)


class CrossSceneInteraction(nn.Module):
    """Current queries attend to projected historical ones; trajectory
    embeddings replace positional encodings. History enters as constants."""

    def __init__(self, cfg, rng, dtype, flat_traj, per_step):
        super().__init__()
        c = cfg.width
        self.te = nn.MLP([flat_traj if not per_step else 2, c, c], rng, dtype)
        self.norm = nn.LayerNorm(c, dtype)
        self.attn = K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout)
        self.per_step = per_step

    def _embed(self, q, traj):
        if self.per_step:
            return T.add(q, self.te(traj))
        flat = T.reshape(traj, traj.shape[:-2] + (traj.shape[-2] * 2,))
        return T.add(q, self.te(flat))

    def __call__(self, q, traj, hist_q, hist_traj, rng=None):
        cur = self._embed(q, traj)
        hist = self._embed(hist_q, hist_traj)
        return T.add(q, self.attn(self.norm(cur), hist, hist, None, rng))


class Refinement(nn.Module):
    """Distance-gated cross-attention around each proposal waypoint, a
    zero-initialized waypoint correction, and endpoint-based probabilities."""

    def __init__(self, cfg, rng, dtype):
        super().__init__()
        c = cfg.width
        self.radius = cfg.refine_radius_m
        self.norm = nn.LayerNorm(c, dtype)
        self.attn = K.MultiHeadAttention(c, cfg.heads, rng, dtype, cfg.dropout)
        self.out_norm = nn.LayerNorm(c, dtype)
        self.correction = nn.MLP([c, c, 2], rng, dtype, zero_last=True)
        self.prob_head = nn.MLP([c, c, 1], rng, dtype)
        self.prob_head.layers[-1].bias = None
        self.last_weights = None
        self.keep_weights = False

    def build_mask(self, waypoints, token_pos, token_valid):
        """Additive mask (R, K*T_s, Nt): -inf beyond the radius; a waypoint
        with no token in range falls back to its single nearest valid token."""
        d = np.linalg.norm(waypoints[..., None, :] - token_pos[:, None, None, :, :], axis=-1)
        keep = (d <= self.radius) & token_valid[:, None, None, :]
        empty = ~keep.any(axis=-1)
        if empty.any():
            dv = np.where(token_valid[:, None, None, :], d, np.inf)
            nearest = np.argmin(dv, axis=-1)
            forced = np.zeros_like(keep)
            np.put_along_axis(forced, nearest[..., None], True, axis=-1)
            keep |= forced & empty[..., None]
        r, k, ts, nt = keep.shape
        mask = np.where(keep, 0.0, K.NEG_INF).astype(token_pos.dtype)
        return mask.reshape(r, k * ts, nt)

    def __call__(self, q_h, waypoints, ctx, row_scene, keys, rng=None):
        r, k, ts, c = q_h.shape
        token_pos = ctx.pos[row_scene]
        token_valid = ctx.valid[row_scene]
        mask = self.build_mask(waypoints, token_pos, token_valid)
        flat = T.reshape(q_h, (r, k * ts, c))
        attn_out, weights = self.attn(self.norm(flat), keys, keys, mask, rng, return_weights=True)
        if self.keep_weights:
            self.last_weights = weights.reshape(r, -1, k, ts, ctx.valid.shape[1]) if weights is not None else None
        feats = self.out_norm(T.add(flat, attn_out))
        feats = T.reshape(feats, (r, k, ts, c))
        corr = self.correction(feats)
        logits = T.reshape(self.prob_head(feats[:, :, -1, :]), (r, k))
        return corr, logits


# ---------------------------------------------------------------------------
# full network
# ---------------------------------------------------------------------------


class DecoupledForecaster(nn.Module):
    def __init__(self, cfg, rng=None, dtype=T.F32):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        c = cfg.width
        self.encoder = SceneEncoder(cfg, rng, dtype)
        self.time_query = K.TimeQueryInit(c, rng, dtype)
        # unit-scale intention embeddings: initial decoded modes must already
        # differ, or winner-take-all lets a single mode absorb every sample
        self.mode_embed = nn.embedding(cfg.num_modes, c, rng, dtype, std=1.0)
        self.agent_cond = nn.Linear(c, c, rng, dtype)
        self.state_mod = StateConsistency(cfg, rng, dtype)
        self.mode_mod = ModeLocalization(cfg, rng, dtype)
        self.hybrid_mod = HybridCoupling(cfg, rng, dtype)
        self.refine_mod = Refinement(cfg, rng, dtype)
        self.future_steps = int(round(cfg.horizon_s * 10))  # 10 Hz output grid

        # auxiliary branch decodes stay deliberately small; the hybrid path
        # with refinement is the full-capacity output
        self.ts_head = nn.MLP([c, c // 2, 2], rng, dtype)
        self.mode_traj_head = nn.MLP([c, c // 2, self.future_steps * 2], rng, dtype)
        self.mode_prob_head = nn.MLP([c, c // 2, 1], rng, dtype)
        self.mode_prob_head.layers[-1].bias = None
        self.prop_traj_head = nn.MLP([c, 2 * c, 2], rng, dtype)
        self.prop_prob_head = nn.MLP([c, c, 1], rng, dtype)
        self.prop_prob_head.layers[-1].bias = None

        self.cii_mode = CrossSceneInteraction(cfg, rng, dtype, self.future_steps * 2, per_step=False)
        self.cii_state = CrossSceneInteraction(cfg, rng, dtype, None, per_step=True)

        self._interp = _interp_matrix(self.future_steps, cfg.state_queries, self.dtype)

    # -- helpers ------------------------------------------------------------

    def _upsample(self, x):
        """(..., T_s, 2) -> (..., T_m, 2) by linear interpolation."""
        if self._interp is None:
            return x
        return T.matmul(x.swapaxes(-1, -2), Tensor(self._interp)).swapaxes(-1, -2)

    def _state_anchor_steps(self):
        """Output step owned by each state query (for per-step waypoints)."""
        ts = self.cfg.state_queries
        tm = self.future_steps
        return np.minimum((np.arange(1, ts + 1) * tm) // ts, tm) - 1

    def encode_scene(self, batch, rng=None):
        return self.encoder(batch, rng)

    def init_queries(self, ctx, batch):
        """Broadcast learned queries per agent of interest, conditioned on the
        agent's encoded token so co-located agents decode distinct futures."""
        r = batch.num_rows
        k = self.cfg.num_modes
        ts = self.cfg.state_queries
        c = self.cfg.width
        agent_feat = ctx.tokens[batch.row_scene, batch.row_agent]  # (R, C)
        cond = self.agent_cond(agent_feat)
        cond_m = T.reshape(cond, (r, 1, c))
        q_m = T.add(T.broadcast_to(T.reshape(self.mode_embed, (1, k, c)), (r, k, c)), cond_m)
        base_s = self.time_query(ts, self.cfg.horizon_s)  # (T_s, C)
        q_s = T.add(T.broadcast_to(T.reshape(base_s, (1, ts, c)), (r, ts, c)), cond_m)
        return q_m, q_s

    # -- full pipeline -------------------------------------------------------

    def forward(self, batches, rng=None):
        """Run every sub-scene position in order; returns per-position
        (PredictionSet, QuerySet) with history threaded through as constants."""
        return list(self.forward_steps(batches, rng))

    def forward_steps(self, batches, rng=None):
        """Generator form of ``forward``: yields one position at a time so a
        caller may release each sub-scene's graph before the next one runs."""
        history = []  # per earlier sub-scene: dict of detached arrays + frames
        k = self.cfg.num_modes
        tm = self.future_steps
        anchor_steps = self._state_anchor_steps()

        for pos, batch in enumerate(batches):
            ctx = self.encode_scene(batch, rng)
            keys = T.take(ctx.tokens, batch.row_scene, axis=0)  # (R, Nt, C)
            key_mask_state = K.padding_mask(ctx.valid[batch.row_scene], self.cfg.state_queries)
            key_mask_mode = K.padding_mask(ctx.valid[batch.row_scene], k)
            key_mask_hybrid = K.padding_mask(ctx.valid[batch.row_scene], k * self.cfg.state_queries)
            r = batch.num_rows
            aoi = Tensor(batch.aoi_pos.astype(self.dtype))

            q_m0, q_s0 = self.init_queries(ctx, batch)
            q_s = self.state_mod(q_s0, keys, key_mask_state, rng)
            q_m = self.mode_mod(q_m0, keys, key_mask_mode, rng)

            ts_off = self._upsample(self.ts_head(q_s))  # (R, T_m, 2)
            state_traj = T.add(ts_off, T.reshape(aoi, (r, 1, 2)))
            mode_off = T.reshape(self.mode_traj_head(q_m), (r, k, tm, 2))
            mode_traj = T.add(mode_off, T.reshape(aoi, (r, 1, 1, 2)))
            mode_logits = T.reshape(self.mode_prob_head(q_m), (r, k))

            if self.cfg.cross_scene and history:
                hist_qm, hist_ym, hist_qs, hist_yts = self._project_history(history, batch, anchor_steps)
                q_m = self.cii_mode(q_m, mode_traj, hist_qm, hist_ym, rng)
                state_way = T.take(state_traj, anchor_steps, axis=1)  # (R, T_s, 2)
                q_s = self.cii_state(q_s, state_way, hist_qs, hist_yts, rng)

            q_h = T.add(
                T.reshape(q_m, (r, k, 1, self.cfg.width)),
                T.reshape(q_s, (r, 1, self.cfg.state_queries, self.cfg.width)),
            )
            q_h = self.hybrid_mod(q_h, keys, key_mask_hybrid, rng)

            prop_way_off = self.prop_traj_head(q_h)  # (R, K, T_s, 2)
            prop_off = self._upsample(prop_way_off)
            proposal_traj = T.add(prop_off, T.reshape(aoi, (r, 1, 1, 2)))
            prop_logits = T.reshape(self.prop_prob_head(q_h[:, :, -1, :]), (r, k))

            waypoints = prop_way_off.data + batch.aoi_pos[:, None, None, :]
            corr, ref_logits = self.refine_mod(q_h, waypoints, ctx, batch.row_scene, keys, rng)
            refined_traj = T.add(proposal_traj, self._upsample(corr))

            preds = PredictionSet(
                proposal_traj=proposal_traj,
                proposal_logits=prop_logits,
                proposal_probs=T.softmax(prop_logits),
                refined_traj=refined_traj,
                refined_logits=ref_logits,
                refined_probs=T.softmax(ref_logits),
                state_traj=state_traj,
                mode_traj=mode_traj,
                mode_logits=mode_logits,
                mode_probs=T.softmax(mode_logits),
            )
            queries = QuerySet(
                mode=q_m,
                state=q_s,
                hybrid=q_h,
                hist_mode=[h["q_m"] for h in history],
                hist_state=[h["q_s"] for h in history],
            )
            history.append(
                {
                    "q_m": q_m.data.copy(),
                    "q_s": q_s.data.copy(),
                    "y_m": mode_traj.data.copy(),
                    "y_ts": state_traj.data.copy(),
                    "frames": batch.transforms,
                    "t_current": batch.t_current,
                    "row_scene": batch.row_scene,
                }
            )
            yield preds, queries

    def _project_history(self, history, batch, anchor_steps):
        """Concatenate detached historical queries with their trajectories
        re-expressed in the current sub-scene frames."""
        qm_parts, ym_parts, qs_parts, yts_parts = [], [], [], []
        for h in history:
            ym = np.empty_like(h["y_m"])
            yts = np.empty_like(h["y_ts"])
            for i, (hf, cf) in enumerate(zip(h["frames"], batch.transforms)):
                off = int(batch.t_current[i] - h["t_current"][i])
                rows = h["row_scene"] == i
                ym[rows] = project_history_trajectories(h["y_m"][rows], hf, cf, off)
                yts[rows] = project_history_trajectories(h["y_ts"][rows], hf, cf, off)
            qm_parts.append(h["q_m"])
            ym_parts.append(ym)
            qs_parts.append(h["q_s"])
            yts_parts.append(yts)
        hist_qm = Tensor(np.concatenate(qm_parts, axis=1))
        hist_ym = Tensor(np.concatenate(ym_parts, axis=1).astype(self.dtype))
        hist_qs = Tensor(np.concatenate(qs_parts, axis=1))
        yts_all = np.concatenate([y[:, anchor_steps, :] for y in yts_parts], axis=1)
        hist_yts = Tensor(yts_all.astype(self.dtype))
        return hist_qm, hist_ym, hist_qs, hist_yts
