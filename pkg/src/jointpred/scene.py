"""Scenes, synthetic scenario generation and instance-centric frames.

Every agent and map polyline gets its own local frame. Agents are centred
at their last observed position with the heading on +x; polylines are
centred at the centroid of their resampled points with +x along the
displacement between their endpoints. All features handed to the networks
are expressed in those local frames, and pairs of instances are related
only through :class:`RelPose`, which makes the whole model independent of
the global coordinate system.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
LANE_TYPES = ("lane", "crosswalk", "road_edge")
SCENARIO_KINDS = ("straight", "intersection_yield", "merge", "turn_multi_modal")

# metres per second
V_MAX = {"vehicle": 20.0, "cyclist": 8.0, "pedestrian": 2.5}
# collision circle radii in metres
AGENT_RADIUS = {"vehicle": 2.0, "cyclist": 1.0, "pedestrian": 0.5}

DT = 0.1
T_PAST = 20
T_FUTURE = 30
POLYLINE_POINTS = 10
POS_SCALE = 0.1  # metres -> network input units
SPEED_SCALE = 0.1
LANE_WIDTH = 4.5

ACTOR_FEATURES = 8 + len(AGENT_TYPES)
MAP_FEATURES = 4 + len(LANE_TYPES)
FUTURE_FEATURES = 4


class SceneError(ValueError):
    pass


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


# data model ----------------------------------------------------------------


@dataclass
class AgentTrack:
    """``past`` rows are (x, y, heading, speed, valid); ``future`` rows are (x, y)."""

    id: str
    type: str
    past: np.ndarray
    future: np.ndarray | None = None

    def __post_init__(self):
        self.past = np.asarray(self.past, dtype=np.float64)
        if self.future is not None:
            self.future = np.asarray(self.future, dtype=np.float64)
        if self.type not in AGENT_TYPES:
            raise SceneError(f"agent {self.id}: unknown type {self.type!r}")
        if self.past.ndim != 2 or self.past.shape[1] != 5:
            raise SceneError(f"agent {self.id}: past must be [T_p, 5], got {self.past.shape}")
        if self.future is not None and (self.future.ndim != 2 or self.future.shape[1] != 2):
            raise SceneError(f"agent {self.id}: future must be [T, 2], got {self.future.shape}")

    @property
    def valid(self) -> np.ndarray:
        return self.past[:, 4] > 0.5


@dataclass
class MapPolyline:
    id: str
    points: np.ndarray
    type: str = "lane"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.type not in LANE_TYPES:
            raise SceneError(f"polyline {self.id}: unknown type {self.type!r}")
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 2:
            raise SceneError(f"polyline {self.id}: need >= 2 points of (x, y)")
        if not np.all(np.isfinite(self.points)):
            raise SceneError(f"polyline {self.id}: non-finite coordinates")


@dataclass
class Scene:
    id: str
    agents: list[AgentTrack]
    map: list[MapPolyline] = field(default_factory=list)
    dt: float = DT

    def __post_init__(self):
        if not self.agents:
            raise SceneError(f"scene {self.id}: needs at least one agent")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise SceneError(f"scene {self.id}: duplicate agent ids")
        tp = {a.past.shape[0] for a in self.agents}
        if len(tp) != 1:
            raise SceneError(f"scene {self.id}: agents disagree on past length")
        fut = {None if a.future is None else a.future.shape[0] for a in self.agents}
        if len(fut) != 1:
            raise SceneError(f"scene {self.id}: agents disagree on future length")
        for a in self.agents:
            if not a.valid.any():
                raise SceneError(f"scene {self.id}: agent {a.id} has no valid past step")
            if not a.valid[-1]:
                raise SceneError(f"scene {self.id}: agent {a.id} last past step must be valid")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_map(self) -> int:
        return len(self.map)

    @property
    def t_past(self) -> int:
        return self.agents[0].past.shape[0]

    @property
    def t_future(self) -> int:
        f = self.agents[0].future
        return 0 if f is None else f.shape[0]

    @property
    def has_future(self) -> bool:
        return self.agents[0].future is not None

    def futures(self) -> np.ndarray:
        if not self.has_future:
            raise SceneError(f"scene {self.id}: no ground-truth futures")
        return np.stack([a.future for a in self.agents])

    def agent_types(self) -> list[str]:
        return [a.type for a in self.agents]


@dataclass(frozen=True)
class LocalFrame:
    origin: tuple[float, float]
    rotation: float

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        d = np.asarray(pts, dtype=np.float64) - np.asarray(self.origin)
        return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)

    def to_global(self, pts: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        p = np.asarray(pts, dtype=np.float64)
        x = c * p[..., 0] - s * p[..., 1] + self.origin[0]
        y = s * p[..., 0] + c * p[..., 1] + self.origin[1]
        return np.stack([x, y], axis=-1)


@dataclass(frozen=True)
class RelPose:
    alpha: float
    beta: float
    distance: float


def relative_pose(frame_i: LocalFrame, frame_j: LocalFrame) -> RelPose:
    """Pose of frame j seen from frame i: heading difference, bearing in frame i, distance."""
    dx = frame_j.origin[0] - frame_i.origin[0]
    dy = frame_j.origin[1] - frame_i.origin[1]
    d = math.hypot(dx, dy)
    alpha = wrap_angle(frame_j.rotation - frame_i.rotation)
    beta = 0.0 if d == 0.0 else wrap_angle(math.atan2(dy, dx) - frame_i.rotation)
    return RelPose(alpha, beta, d)


def relative_pose_matrix(frames: Sequence[LocalFrame]) -> np.ndarray:
    """Vectorised :func:`relative_pose` over all ordered pairs; ``[N, N, 3]`` of (alpha, beta, d)."""
    if not frames:
        return np.zeros((0, 0, 3))
    o = np.array([f.origin for f in frames], dtype=np.float64)
    r = np.array([f.rotation for f in frames], dtype=np.float64)
    delta = o[None, :, :] - o[:, None, :]
    d = np.hypot(delta[..., 0], delta[..., 1])
    alpha = wrap_angle(r[None, :] - r[:, None])
    beta = wrap_angle(np.arctan2(delta[..., 1], delta[..., 0]) - r[:, None])
    beta = np.where(d == 0.0, 0.0, beta)
    return np.stack([np.atleast_2d(alpha), np.atleast_2d(beta), d], axis=-1)


# frames and features -------------------------------------------------------


def resample_polyline(points: np.ndarray, n: int = POLYLINE_POINTS) -> np.ndarray:
    """``n`` points spaced uniformly in arc length along the polyline."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    targets = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])], axis=-1)


def agent_frame(agent: AgentTrack) -> LocalFrame:
    x, y, h = agent.past[-1, :3]
    return LocalFrame((float(x), float(y)), wrap_angle(float(h)))


def polyline_frame(resampled: np.ndarray) -> LocalFrame:
    c = resampled.mean(axis=0)
    d = resampled[-1] - resampled[0]
    rot = 0.0 if not np.any(d) else wrap_angle(math.atan2(d[1], d[0]))
    return LocalFrame((float(c[0]), float(c[1])), rot)


def _one_hot(value: str, vocab: Sequence[str]) -> np.ndarray:
    v = np.zeros(len(vocab))
    v[vocab.index(value)] = 1.0
    return v


def actor_features(agent: AgentTrack, frame: LocalFrame) -> tuple[np.ndarray, np.ndarray]:
    """Per-step features ``[T_p, ACTOR_FEATURES]`` and validity mask ``[T_p]``.

    Columns: local x, y, step displacement dx, dy, cos/sin of heading
    relative to the frame, speed, valid flag, agent-type one-hot. Positions
    and speed are scaled to O(1). Invalid steps are all-zero.
    """
    valid = agent.valid
    xy = frame.to_local(agent.past[:, :2])
    disp = np.zeros_like(xy)
    both = valid[1:] & valid[:-1]
    disp[1:] = np.where(both[:, None], xy[1:] - xy[:-1], 0.0)
    rel_h = agent.past[:, 2] - frame.rotation
    feats = np.concatenate(
        [
            xy * POS_SCALE,
            disp * POS_SCALE,
            np.cos(rel_h)[:, None],
            np.sin(rel_h)[:, None],
            agent.past[:, 3:4] * SPEED_SCALE,
            np.ones((len(xy), 1)),
            np.tile(_one_hot(agent.type, AGENT_TYPES), (len(xy), 1)),
        ],
        axis=1,
    )
    feats[~valid] = 0.0
    return feats, valid.astype(np.float64)


def map_features(resampled: np.ndarray, frame: LocalFrame, lane_type: str) -> np.ndarray:
    """Per-point features ``[P, MAP_FEATURES]``: local x, y, unit tangent, lane-type one-hot."""
    xy = frame.to_local(resampled)
    tan = np.zeros_like(xy)
    if len(xy) > 1:
        diff = np.diff(xy, axis=0)
        tan[:-1] = diff
        tan[-1] = diff[-1]
    norm = np.hypot(tan[:, 0], tan[:, 1])
    tan = np.where(norm[:, None] > 0, tan / np.where(norm > 0, norm, 1.0)[:, None], 0.0)
    return np.concatenate(
        [xy * POS_SCALE, tan, np.tile(_one_hot(lane_type, LANE_TYPES), (len(xy), 1))], axis=1
    )


def future_features(future_local: np.ndarray) -> np.ndarray:
    """Features for the ground-truth future encoder: scaled local position and step displacement."""
    disp = np.diff(np.concatenate([np.zeros((1, 2)), future_local]), axis=0)
    return np.concatenate([future_local * POS_SCALE, disp * POS_SCALE], axis=1)


@dataclass
class InstanceFrameSet:
    """All per-instance frames and local features for one scene.

    Instances are ordered agents first, then polylines.
    """

    scene_id: str
    agent_ids: list[str]
    agent_types: list[str]
    agent_frames: list[LocalFrame]
    map_frames: list[LocalFrame]
    actor_feats: np.ndarray  # [Na, T_p, F_a]
    actor_mask: np.ndarray  # [Na, T_p]
    map_feats: np.ndarray  # [Nm, P, F_m]
    rel_pose: np.ndarray  # [N, N, 3]
    future_local: np.ndarray | None  # [Na, T, 2]
    future_global: np.ndarray | None  # [Na, T, 2]
    n_lanes: int

    @property
    def n_agents(self) -> int:
        return len(self.agent_frames)

    @property
    def n_map(self) -> int:
        return len(self.map_frames)

    @property
    def frames(self) -> list[LocalFrame]:
        return self.agent_frames + self.map_frames


def build_frames(scene: Scene) -> InstanceFrameSet:
    a_frames = [agent_frame(a) for a in scene.agents]
    feats, masks = zip(*(actor_features(a, f) for a, f in zip(scene.agents, a_frames)))
    m_frames, m_feats = [], []
    for pl in scene.map:
        rs = resample_polyline(pl.points)
        fr = polyline_frame(rs)
        m_frames.append(fr)
        m_feats.append(map_features(rs, fr, pl.type))
    fut_local = fut_global = None
    if scene.has_future:
        fut_global = scene.futures()
        fut_local = np.stack([f.to_local(a.future) for a, f in zip(scene.agents, a_frames)])
    return InstanceFrameSet(
        scene_id=scene.id,
        agent_ids=[a.id for a in scene.agents],
        agent_types=scene.agent_types(),
        agent_frames=a_frames,
        map_frames=m_frames,
        actor_feats=np.stack(feats),
        actor_mask=np.stack(masks),
        map_feats=np.stack(m_feats) if m_feats else np.zeros((0, POLYLINE_POINTS, MAP_FEATURES)),
        rel_pose=relative_pose_matrix(a_frames + m_frames),
        future_local=fut_local,
        future_global=fut_global,
        n_lanes=sum(pl.type == "lane" for pl in scene.map),
    )


@dataclass
class Batch:
    """Zero-padded stack of :class:`InstanceFrameSet` with validity masks.

    Token axis order is ``[agents (A padded), polylines (M padded)]``.
    """

    items: list[InstanceFrameSet]
    actor_feats: np.ndarray  # [B, A, T_p, F_a]
    actor_mask: np.ndarray  # [B, A, T_p]
    agent_mask: np.ndarray  # [B, A]
    map_feats: np.ndarray  # [B, M, P, F_m]
    map_mask: np.ndarray  # [B, M]
    rel_pose: np.ndarray  # [B, N, N, 3]
    token_mask: np.ndarray  # [B, N]
    future_local: np.ndarray | None  # [B, A, T, 2]
    future_feats: np.ndarray | None  # [B, A, T, FUTURE_FEATURES]

    @property
    def size(self) -> int:
        return len(self.items)

    @property
    def max_agents(self) -> int:
        return self.agent_mask.shape[1]

    @property
    def has_future(self) -> bool:
        return self.future_local is not None


def collate(items: Sequence[InstanceFrameSet]) -> Batch:
    items = list(items)
    if not items:
        raise SceneError("collate: empty batch")
    B = len(items)
    A = max(it.n_agents for it in items)
    M = max(it.n_map for it in items)
    tp = items[0].actor_feats.shape[1]
    af = np.zeros((B, A, tp, ACTOR_FEATURES))
    am = np.zeros((B, A, tp))
    agm = np.zeros((B, A))
    mf = np.zeros((B, M, POLYLINE_POINTS, MAP_FEATURES))
    mm = np.zeros((B, M))
    rp = np.zeros((B, A + M, A + M, 3))
    has_future = all(it.future_local is not None for it in items)
    T = items[0].future_local.shape[1] if has_future else 0
    fl = np.zeros((B, A, T, 2)) if has_future else None
    for b, it in enumerate(items):
        na, nm = it.n_agents, it.n_map
        af[b, :na] = it.actor_feats
        am[b, :na] = it.actor_mask
        agm[b, :na] = 1.0
        if nm:
            mf[b, :nm] = it.map_feats
            mm[b, :nm] = 1.0
        idx = np.concatenate([np.arange(na), A + np.arange(nm)]).astype(int)
        rp[b][np.ix_(idx, idx)] = it.rel_pose
        if has_future:
            fl[b, :na] = it.future_local
    ff = None
    if has_future:
        ff = np.stack([np.stack([future_features(f) for f in fb]) for fb in fl])
        ff = ff * agm[:, :, None, None]
    return Batch(
        items=items,
        actor_feats=af,
        actor_mask=am,
        agent_mask=agm,
        map_feats=mf,
        map_mask=mm,
        rel_pose=rp,
        token_mask=np.concatenate([agm, mm], axis=1),
        future_local=fl,
        future_feats=ff,
    )


# rigid transforms ----------------------------------------------------------


def transform_scene(scene: Scene, angle: float, shift: Sequence[float]) -> Scene:
    """Rotate the whole scene by ``angle`` about the origin, then translate by ``shift``."""
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    t = np.asarray(shift, dtype=np.float64)

    def tf(p):
        return p @ R.T + t

    agents = []
    for a in scene.agents:
        past = a.past.copy()
        v = a.valid
        past[v, :2] = tf(a.past[v, :2])
        past[v, 2] = wrap_angle(a.past[v, 2] + angle)
        fut = None if a.future is None else tf(a.future)
        agents.append(AgentTrack(a.id, a.type, past, fut))
    polys = [MapPolyline(p.id, tf(p.points), p.type) for p in scene.map]
    return Scene(scene.id, agents, polys, scene.dt)


def permute_scene(scene: Scene, agent_perm: Sequence[int], map_perm: Sequence[int] | None = None) -> Scene:
    agents = [scene.agents[i] for i in agent_perm]
    polys = scene.map if map_perm is None else [scene.map[i] for i in map_perm]
    return Scene(scene.id, agents, polys, scene.dt)


# synthetic generator -------------------------------------------------------


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


class _Path:
    """Arc-length parameterised planar path whose heading changes smoothly."""

    def __init__(self, start, heading, turns=(), length=400.0, ds=0.05):
        s = np.arange(0.0, length + ds, ds)
        theta = np.full_like(s, float(heading))
        for s0, span, dtheta in turns:
            theta = theta + dtheta * _smoothstep((s - s0) / span)
        dx = np.cos(theta)
        dy = np.sin(theta)
        x = start[0] + np.concatenate([[0.0], np.cumsum(0.5 * (dx[1:] + dx[:-1]) * ds)])
        y = start[1] + np.concatenate([[0.0], np.cumsum(0.5 * (dy[1:] + dy[:-1]) * ds)])
        self.s, self.x, self.y, self.theta = s, x, y, theta

    def at(self, s):
        s = np.asarray(s)
        return (
            np.interp(s, self.s, self.x),
            np.interp(s, self.s, self.y),
            np.interp(s, self.s, self.theta),
        )

    def polyline(self, s0, s1, n=12):
        ss = np.linspace(s0, s1, n)
        x, y, _ = self.at(ss)
        return np.stack([x, y], axis=1)


def _speed_profile(t, v0, changes=()):
    """Speed over time: ``v0`` plus smooth ramps ``(t_start, duration, dv)``."""
    v = np.full_like(t, float(v0))
    for t0, span, dv in changes:
        v = v + dv * _smoothstep((t - t0) / span)
    return np.maximum(v, 0.0)


def _rollout(path: _Path, s_start: float, v0: float, changes, times: np.ndarray, fine: int = 20):
    """Positions, headings and speeds at ``times`` (seconds, relative to present)."""
    dt = times[1] - times[0]
    tf = np.linspace(times[0], times[-1], (len(times) - 1) * fine + 1)
    vf = _speed_profile(tf, v0, changes)
    sf = s_start + np.concatenate([[0.0], np.cumsum(0.5 * (vf[1:] + vf[:-1]) * dt / fine)])
    s = sf[::fine]
    x, y, th = path.at(s)
    return np.stack([x, y], axis=1), wrap_angle(th), vf[::fine]


@dataclass
class _Actor:
    id: str
    type: str
    path: _Path
    s0: float
    v0: float
    changes: tuple = ()


def _min_separation_ok(tracks: list[tuple[str, np.ndarray]], margin: float = 0.5) -> bool:
    for i in range(len(tracks)):
        for j in range(i + 1, len(tracks)):
            (ti, pi), (tj, pj) = tracks[i], tracks[j]
            d = np.hypot(*(pi - pj).T)
            if np.any(d < AGENT_RADIUS[ti] + AGENT_RADIUS[tj] + margin):
                return False
    return True


def generate_scene(
    kind: str,
    seed: int,
    *,
    n_agents: int | None = None,
    extra_polylines: int = 0,
    extra_lanes: int = 0,
    t_past: int = T_PAST,
    t_future: int = T_FUTURE,
    dt: float = DT,
    scene_id: str | None = None,
    branch: int | None = None,
) -> Scene:
    """Sample one kinematically smooth scenario.

    ``n_agents`` adds background vehicles on a distant highway until the
    scene holds that many agents. ``extra_polylines`` adds road-edge
    polylines and ``extra_lanes`` adds short unconnected lanes; both only
    grow the map. Ground-truth futures are collision-free under the circle
    model used by :func:`jointpred.evaluation.actor_collision_rate`.

    ``branch`` (turn scenes only: 0 straight, 1 left, 2 right) forces the
    ego manoeuvre. All random draws are unchanged, so two branches of one
    seed share the same past and map and differ only in the future (unless
    one of them needed a rejection redraw).
    """
    if kind not in SCENARIO_KINDS:
        raise SceneError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    rng = np.random.default_rng([seed, SCENARIO_KINDS.index(kind)])
    times = np.arange(-(t_past - 1), t_future + 1) * dt
    builder = _BUILDERS[kind]
    if branch is not None:
        if kind != "turn_multi_modal" or branch not in (0, 1, 2):
            raise SceneError(f"branch must be 0, 1 or 2 and needs kind 'turn_multi_modal', got {kind!r}")
        builder = functools.partial(builder, branch=branch)
    for _ in range(200):
        actors, polys = builder(rng)
        if n_agents is not None:
            _add_background(rng, actors, polys, n_agents)
        rolled = [(a, *_rollout(a.path, a.s0, a.v0, a.changes, times)) for a in actors]
        if _min_separation_ok([(a.type, xy[t_past - 1 :]) for a, xy, _, _ in rolled]):
            break
    else:
        raise SceneError(f"could not sample a collision-free {kind} scene for seed {seed}")
    for k in range(extra_polylines):
        x0, y0 = rng.uniform(-60, 60, size=2)
        h = rng.uniform(-np.pi, np.pi)
        p = _Path((x0, y0), h, length=30.0)
        polys.append(("road_edge", p.polyline(0.0, 25.0, 6)))
    for k in range(extra_lanes):
        x0, y0 = rng.uniform(-60, 60, size=2)
        h = rng.uniform(-np.pi, np.pi)
        polys.append(_lane_polys(_Path((x0, y0), h, length=30.0), 0.0, 25.0, 6))

    # random global pose so the scene's world frame carries no information
    angle = rng.uniform(-np.pi, np.pi)
    shift = rng.uniform(-500.0, 500.0, size=2)
    agents = []
    for a, xy, th, v in rolled:
        past = np.zeros((t_past, 5))
        past[:, :2] = xy[:t_past]
        past[:, 2] = th[:t_past]
        past[:, 3] = v[:t_past]
        past[:, 4] = 1.0
        if rng.random() < 0.15:
            past[: rng.integers(1, t_past // 2), :] = 0.0
        agents.append(AgentTrack(a.id, a.type, past, xy[t_past:].copy()))
    maps = [MapPolyline(f"m{i}", pts, lt) for i, (lt, pts) in enumerate(polys)]
    scene = Scene(scene_id or f"{kind}-{seed}", agents, maps, dt)
    scene = transform_scene(scene, angle, shift)
    return scene


def _lane_polys(path: _Path, s0: float, s1: float, n: int = 12):
    return ("lane", path.polyline(s0, s1, n))


def _build_straight(rng, constant=True):
    n = int(rng.integers(1, 4))
    actors, polys = [], []
    lanes = n + int(rng.integers(0, 2))
    for k in range(lanes):
        p = _Path((-80.0, k * LANE_WIDTH), 0.0)
        polys.append(_lane_polys(p, 0.0, 160.0))
    polys.append(("road_edge", _Path((-80.0, -LANE_WIDTH / 2), 0.0).polyline(0, 160, 8)))
    for i, lane in enumerate(rng.permutation(lanes)[:n]):
        p = _Path((-80.0, lane * LANE_WIDTH), 0.0)
        v = rng.uniform(5.0, 15.0)
        actors.append(_Actor(f"a{i}", "vehicle", p, rng.uniform(50.0, 90.0), v))
    return actors, polys


def _build_intersection_yield(rng):
    actors, polys = [], []
    east = _Path((-70.0, -LANE_WIDTH / 2), 0.0)
    north = _Path((LANE_WIDTH / 2, -70.0), np.pi / 2)
    west = _Path((70.0, LANE_WIDTH / 2), np.pi)
    south = _Path((-LANE_WIDTH / 2, 70.0), -np.pi / 2)
    for p in (east, north, west, south):
        polys.append(_lane_polys(p, 0.0, 140.0))
    polys.append(("crosswalk", np.array([[-8.0, -10.0], [8.0, -10.0]])))
    polys.append(("crosswalk", np.array([[-8.0, 10.0], [8.0, 10.0]])))
    # priority vehicle crosses the conflict point (x = 2.25) roughly 1-2 s into the future
    v1 = rng.uniform(8.0, 12.0)
    t_cross = rng.uniform(0.8, 1.8)
    s1 = 70.0 + LANE_WIDTH / 2 - v1 * t_cross
    actors.append(_Actor("a0", "vehicle", east, s1, v1))
    # yielding vehicle brakes towards the stop line then goes once the crossing is clear
    v2 = rng.uniform(5.0, 8.0)
    s2 = 70.0 - LANE_WIDTH / 2 - 9.0 - rng.uniform(0.0, 3.0) - v2 * 0.6
    brake = (rng.uniform(-0.6, 0.0), 1.2, -v2 * rng.uniform(0.75, 0.95))
    go = (t_cross + 0.6, 1.2, rng.uniform(4.0, 7.0))
    actors.append(_Actor("a1", "vehicle", north, s2, v2, (brake, go)))
    if rng.random() < 0.5:
        walk = _Path((-12.0, 14.0), 0.0)
        actors.append(_Actor("a2", "pedestrian", walk, 0.0, rng.uniform(0.8, 1.6)))
    return actors, polys


def _build_merge(rng):
    actors, polys = [], []
    main = _Path((-80.0, 0.0), 0.0)
    ramp_angle = rng.uniform(0.25, 0.4)
    # ramp heads up-right and bends back onto the main lane centre line
    probe = _Path((-80.0, 0.0), ramp_angle, turns=[(55.0, 30.0, -ramp_angle)])
    ramp = _Path((-80.0, -probe.at(120.0)[1]), ramp_angle, turns=[(55.0, 30.0, -ramp_angle)])
    polys.append(_lane_polys(main, 0.0, 170.0))
    polys.append(_lane_polys(ramp, 0.0, 90.0))
    polys.append(("road_edge", _Path((-80.0, 2.5), 0.0).polyline(0, 170, 8)))
    v_lead = rng.uniform(10.0, 14.0)
    actors.append(_Actor("a0", "vehicle", main, rng.uniform(75.0, 85.0), v_lead))
    v_ramp = rng.uniform(8.0, 11.0)
    actors.append(_Actor("a1", "vehicle", ramp, rng.uniform(35.0, 45.0), v_ramp, ((0.0, 2.0, rng.uniform(0.5, 2.5)),)))
    if rng.random() < 0.5:
        actors.append(_Actor("a2", "vehicle", main, rng.uniform(20.0, 35.0), rng.uniform(8.0, 11.0)))
    return actors, polys


def _build_turn_multi_modal(rng, branch=None):
    actors, polys = [], []
    choice = int(rng.integers(0, 3))  # 0 straight, 1 left, 2 right
    if branch is not None:
        choice = branch
    dtheta = (0.0, np.pi / 2, -np.pi / 2)[choice]
    v = rng.uniform(6.0, 9.0)
    s0 = 60.0 - v * 1.9 - rng.uniform(0.5, 4.0)  # present stays before the turn starts
    start = (LANE_WIDTH / 2, -60.0)
    ego = _Path(start, np.pi / 2, turns=[(60.0, 14.0, dtheta)] if choice else ())
    for th, turn in ((np.pi / 2, ()), (np.pi / 2, [(60.0, 14.0, np.pi / 2)]), (np.pi / 2, [(60.0, 14.0, -np.pi / 2)])):
        polys.append(_lane_polys(_Path(start, th, turns=turn), 20.0, 100.0))
    cross = _Path((-70.0, LANE_WIDTH / 2 + 3.0), 0.0)
    polys.append(_lane_polys(cross, 0.0, 140.0))
    brake = rng.uniform(1.0, 3.0)
    slow = ((0.2, 1.5, -brake),) if choice else ()
    actors.append(_Actor("a0", "vehicle", ego, s0, v, slow))
    if rng.random() < 0.6:
        bike = _Path((-LANE_WIDTH / 2 - 3.0, 40.0), -np.pi / 2)
        actors.append(_Actor("a1", "cyclist", bike, rng.uniform(0.0, 5.0), rng.uniform(3.0, 5.0)))
    return actors, polys


def _add_background(rng, actors: list, polys: list, n_agents: int) -> None:
    need = n_agents - len(actors)
    if need < 0:
        raise SceneError(f"scenario already has {len(actors)} agents > n_agents={n_agents}")
    lanes = max(1, math.ceil(need / 4))
    for k in range(lanes):
        p = _Path((-120.0, 200.0 + k * LANE_WIDTH), 0.0)
        polys.append(_lane_polys(p, 0.0, 240.0))
    for i in range(need):
        lane, slot = i % lanes, i // lanes
        p = _Path((-120.0, 200.0 + lane * LANE_WIDTH), 0.0)
        actors.append(_Actor(f"bg{i}", "vehicle", p, 40.0 + 25.0 * slot, 10.0))


_BUILDERS = {
    "straight": _build_straight,
    "intersection_yield": _build_intersection_yield,
    "merge": _build_merge,
    "turn_multi_modal": _build_turn_multi_modal,
}


# JSON I/O ------------------------------------------------------------------


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "dt": scene.dt,
        "agents": [
            {
                "id": a.id,
                "type": a.type,
                "past": a.past.tolist(),
                **({"future": a.future.tolist()} if a.future is not None else {}),
            }
            for a in scene.agents
        ],
        "map": [{"id": p.id, "type": p.type, "points": p.points.tolist()} for p in scene.map],
    }


def scene_from_dict(doc: dict) -> Scene:
    agents = [
        AgentTrack(a["id"], a["type"], np.array(a["past"], dtype=np.float64).reshape(-1, 5),
                   None if "future" not in a else np.array(a["future"], dtype=np.float64).reshape(-1, 2))
        for a in doc["agents"]
    ]
    polys = [MapPolyline(p["id"], np.array(p["points"], dtype=np.float64), p.get("type", "lane")) for p in doc["map"]]
    return Scene(str(doc["id"]), agents, polys, float(doc["dt"]))


def _schema(name: str) -> dict:
    return json.loads(resources.files("jointpred").joinpath("schemas", name).read_text())


def validate_scene_doc(doc: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(doc, _schema("scene.schema.json"))
    except jsonschema.ValidationError as e:
        raise SceneError(f"scene document invalid: {e.message}") from None


def dump_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":"))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dump_scene(scene))


def load_scene(path, validate: bool = True) -> Scene:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SceneError(f"{path}: {e}") from None
    if validate:
        validate_scene_doc(doc)
    try:
        return scene_from_dict(doc)
    except SceneError as e:
        raise SceneError(f"{path}: {e}") from None


INDEX_FILE = "index.json"


def write_dataset(out_dir, scenes: Sequence[Scene], splits: dict[str, list[int]], meta: dict | None = None) -> Path:
    """Write one JSON file per scene plus ``index.json`` mapping split names to file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, sc in enumerate(scenes):
        name = f"scene_{i:05d}.json"
        save_scene(sc, out / name)
        names.append(name)
    index = {
        "version": 1,
        "splits": {k: [names[i] for i in v] for k, v in splits.items()},
        **({"meta": meta} if meta else {}),
    }
    (out / INDEX_FILE).write_text(json.dumps(index, indent=1, sort_keys=True))
    return out


def load_dataset(data_dir, split: str | None = None) -> list[Scene]:
    """Load scenes of ``split`` (all splits, in index order, when ``None``)."""
    d = Path(data_dir)
    try:
        index = json.loads((d / INDEX_FILE).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SceneError(f"{d / INDEX_FILE}: {e}") from None
    import jsonschema

    try:
        jsonschema.validate(index, _schema("index.schema.json"))
    except jsonschema.ValidationError as e:
        raise SceneError(f"{d / INDEX_FILE}: {e.message}") from None
    if split is None:
        names = [n for v in index["splits"].values() for n in v]
    elif split not in index["splits"]:
        raise SceneError(f"{d}: no split {split!r}; have {sorted(index['splits'])}")
    else:
        names = index["splits"][split]
    return [load_scene(d / n) for n in names]
