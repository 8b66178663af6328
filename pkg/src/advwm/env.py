"""Deterministic synthetic first-person environment.

A 64x64 toroidal heightfield rendered as a 64-ray depth scan. The camera
action space is discretized so that every yaw command is an integer number
of ray ticks (5.625 degrees), which makes pure rotation an exact circular
shift of the rendered frame. Scripted demonstrators generate the passive
datasets the world model pretrains on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .seeding import substream

GRID = 64
N_RAYS = 64
RAY_TICK_DEG = 5.625  # 360 / 64, exactly representable in binary
CAM_DEGREES = (-45.0, -22.5, -11.25, -5.625, 0.0, 5.625, 11.25, 22.5, 45.0)
CAM_TICKS = (-8, -4, -2, -1, 0, 1, 2, 4, 8)  # same bins in ray-tick units
NOOP_BIN = 4
BUTTONS = ("fwd", "back", "strafe_l", "strafe_r", "jump", "sprint", "atk", "use")
DEMO_KINDS = ("walker", "climber", "builder")

CHUNK = 3  # latent frames per prediction chunk; episode lengths are multiples

EYE_HEIGHT = 0.25
RAY_RANGE = 16.0
RAY_STEP = 0.05
STEP_LEN = 0.5
CLIMB_LIMIT = 0.2
MARK_DELTA = 0.1

_N_SAMPLES = int(round(RAY_RANGE / RAY_STEP))
_RAY_T = (np.arange(_N_SAMPLES) + 1.0) * RAY_STEP
_TICK_RAD = np.deg2rad(np.arange(N_RAYS) * RAY_TICK_DEG)
_TICK_COS = np.cos(_TICK_RAD)
_TICK_SIN = np.sin(_TICK_RAD)


@dataclass(frozen=True)
class Action:
    """One discretized control step: two camera bins plus eight buttons."""

    yaw_bin: int = NOOP_BIN
    pitch_bin: int = NOOP_BIN
    buttons: tuple[int, ...] = (0,) * 8

    def __post_init__(self):
        if not (0 <= self.yaw_bin <= 8 and 0 <= self.pitch_bin <= 8):
            raise ValueError(f"camera bins out of range: {self.yaw_bin}, {self.pitch_bin}")
        if len(self.buttons) != 8 or any(b not in (0, 1) for b in self.buttons):
            raise ValueError(f"buttons must be eight 0/1 flags, got {self.buttons!r}")

    @property
    def yaw_degrees(self) -> float:
        return CAM_DEGREES[self.yaw_bin]

    @property
    def pitch_degrees(self) -> float:
        return CAM_DEGREES[self.pitch_bin]

    def pressed(self, name: str) -> bool:
        return bool(self.buttons[BUTTONS.index(name)])

    def buttons_str(self) -> str:
        return "".join(str(b) for b in self.buttons)

    @staticmethod
    def from_buttons_str(yaw_bin: int, pitch_bin: int, s: str) -> "Action":
        if len(s) != 8 or set(s) - {"0", "1"}:
            raise ValueError(f"bad buttons string {s!r}")
        return Action(yaw_bin, pitch_bin, tuple(int(c) for c in s))

    @staticmethod
    def make(yaw_bin: int = NOOP_BIN, pitch_bin: int = NOOP_BIN, **pressed: bool) -> "Action":
        unknown = set(pressed) - set(BUTTONS)
        if unknown:
            raise ValueError(f"unknown buttons {sorted(unknown)}")
        btns = tuple(1 if pressed.get(n, False) else 0 for n in BUTTONS)
        return Action(yaw_bin, pitch_bin, btns)


NO_OP = Action()


@dataclass
class WorldMap:
    """Seeded heightfield plus the per-episode terrain-edit marker bits."""

    seed: int
    base: np.ndarray  # (GRID, GRID) in [0, 1]
    dug: np.ndarray = field(default_factory=lambda: np.zeros((GRID, GRID), dtype=bool))
    built: np.ndarray = field(default_factory=lambda: np.zeros((GRID, GRID), dtype=bool))

    def heights(self) -> np.ndarray:
        h = self.base + MARK_DELTA * self.built - MARK_DELTA * self.dug
        return np.clip(h, 0.0, 1.0)

    def fresh_copy(self) -> "WorldMap":
        return WorldMap(self.seed, self.base)


@dataclass
class AgentState:
    x: float
    y: float
    yaw: float  # degrees in [0, 360); stays on the 5.625-degree ray lattice
    pitch: float  # degrees, clamped to [-90, 90]


def _value_noise(rng: np.random.Generator, lattice: int) -> np.ndarray:
    """Periodic bilinear interpolation of a seeded random lattice."""
    grid = rng.random((lattice, lattice))
    u = np.arange(GRID) * (lattice / GRID)
    i0 = np.floor(u).astype(int)
    f = u - i0
    i1 = (i0 + 1) % lattice
    rows = grid[i0][:, i0] * np.outer(1 - f, 1 - f)
    rows += grid[i1][:, i0] * np.outer(f, 1 - f)
    rows += grid[i0][:, i1] * np.outer(1 - f, f)
    rows += grid[i1][:, i1] * np.outer(f, f)
    return rows


def generate_world(map_seed: int) -> WorldMap:
    """Three octaves of seeded value noise, min-max normalized to [0, 1]."""
    rng = substream("worldmap", map_seed)
    h = _value_noise(rng, 4) + 0.5 * _value_noise(rng, 8) + 0.25 * _value_noise(rng, 16)
    lo, hi = h.min(), h.max()
    base = (h - lo) / (hi - lo) if hi > lo else np.zeros_like(h)
    return WorldMap(map_seed, base)


def render(world: WorldMap, state: AgentState) -> np.ndarray:
    """64-ray depth scan around the agent; 1.0 where nothing is hit in range.

    Ray k points at yaw + k ticks, so a one-tick yaw change permutes ray
    indices and nothing else: the frame circularly shifts bitwise.
    """
    heights = world.heights()
    m = int(round(state.yaw / RAY_TICK_DEG)) % N_RAYS
    idx = (m + np.arange(N_RAYS)) % N_RAYS
    pitch_rad = np.deg2rad(state.pitch)
    cp, sp = np.cos(pitch_rad), np.sin(pitch_rad)
    dx = _TICK_COS[idx] * cp
    dy = _TICK_SIN[idx] * cp

    cell = heights[int(state.x) % GRID, int(state.y) % GRID]
    eye = cell + EYE_HEIGHT

    px = state.x + dx[:, None] * _RAY_T[None, :]
    py = state.y + dy[:, None] * _RAY_T[None, :]
    pz = eye + sp * _RAY_T  # same for every ray
    hx = np.floor(px).astype(np.int64) % GRID
    hy = np.floor(py).astype(np.int64) % GRID
    hit = heights[hx, hy] >= pz[None, :]
    first = hit.argmax(axis=1)
    any_hit = hit.any(axis=1)
    depth = np.where(any_hit, _RAY_T[first] / RAY_RANGE, 1.0)
    return depth


def env_reset(map_seed: int, spawn_seed: int) -> tuple[WorldMap, AgentState, np.ndarray]:
    """Fresh world and a seeded spawn: cell center, lattice yaw, pitch 0."""
    world = generate_world(map_seed)
    rng = substream("spawn", spawn_seed)
    cx, cy = rng.integers(0, GRID, size=2)
    yaw = float(rng.integers(0, N_RAYS)) * RAY_TICK_DEG
    state = AgentState(x=float(cx) + 0.5, y=float(cy) + 0.5, yaw=yaw, pitch=0.0)
    return world, state, render(world, state)


def env_step(world: WorldMap, state: AgentState, action: Action) -> tuple[AgentState, np.ndarray]:
    """Apply camera, then movement, then terrain edits; render the result.

    Movement is blocked (no displacement at all) when the target cell is
    more than CLIMB_LIMIT above the current cell and jump is not held.
    atk/use toggle the faced cell's dug/built marker bits. world is mutated
    in place (marker bits only); each episode must own its map copy.
    """
    yaw = (state.yaw + CAM_DEGREES[action.yaw_bin]) % 360.0
    pitch = float(np.clip(state.pitch + CAM_DEGREES[action.pitch_bin], -90.0, 90.0))

    tick = int(round(yaw / RAY_TICK_DEG)) % N_RAYS
    hd = np.array([_TICK_COS[tick], _TICK_SIN[tick]])
    right_tick = (tick - N_RAYS // 4) % N_RAYS
    right = np.array([_TICK_COS[right_tick], _TICK_SIN[right_tick]])

    fwd_speed = STEP_LEN * (2.0 if action.pressed("sprint") else 1.0)
    along = fwd_speed * action.buttons[0] - STEP_LEN * action.buttons[1]
    across = STEP_LEN * (action.buttons[3] - action.buttons[2])
    disp = along * hd + across * right

    x, y = state.x, state.y
    if along != 0.0 or across != 0.0:
        heights = world.heights()
        tx, ty = (x + disp[0]) % GRID, (y + disp[1]) % GRID
        h_cur = heights[int(x) % GRID, int(y) % GRID]
        h_tgt = heights[int(tx) % GRID, int(ty) % GRID]
        if h_tgt - h_cur <= CLIMB_LIMIT or action.pressed("jump"):
            x, y = float(tx), float(ty)

    if action.pressed("atk") or action.pressed("use"):
        fx = int(np.floor(x + hd[0])) % GRID
        fy = int(np.floor(y + hd[1])) % GRID
        if action.pressed("atk"):
            world.dug[fx, fy] = ~world.dug[fx, fy]
        if action.pressed("use"):
            world.built[fx, fy] = ~world.built[fx, fy]

    new_state = AgentState(x=x, y=y, yaw=yaw, pitch=pitch)
    return new_state, render(world, new_state)


def _choice(rng: np.random.Generator, values, probs) -> int:
    return int(values[rng.choice(len(values), p=probs)])


def script_action(kind: str, state: AgentState, rng: np.random.Generator) -> Action:
    """Scripted demonstrator step. Calm camera: bins within +/-11.25 degrees.

    walker: mostly forward with small heading drift.
    climber: forward with frequent jumps, taking ledges head on.
    builder: turns in place and toggles the faced terrain with use/atk.
    """
    cam_bins = (2, 3, 4, 5, 6)
    if kind == "walker":
        yaw = _choice(rng, cam_bins, (0.06, 0.09, 0.70, 0.09, 0.06))
        pitch = _choice(rng, (3, 4, 5), (0.05, 0.90, 0.05))
        u = rng.random(3)
        return Action.make(yaw, pitch, fwd=u[0] < 0.8, sprint=u[1] < 0.15, jump=u[2] < 0.05)
    if kind == "climber":
        yaw = _choice(rng, cam_bins, (0.10, 0.15, 0.50, 0.15, 0.10))
        pitch = _choice(rng, (3, 4, 5), (0.10, 0.80, 0.10))
        u = rng.random(3)
        return Action.make(yaw, pitch, fwd=u[0] < 0.85, jump=u[1] < 0.5, sprint=u[2] < 0.25)
    if kind == "builder":
        yaw = _choice(rng, cam_bins, (0.12, 0.18, 0.40, 0.18, 0.12))
        pitch = _choice(rng, (3, 4, 5), (0.25, 0.65, 0.10))
        u = rng.random(3)
        return Action.make(yaw, pitch, fwd=u[0] < 0.4, atk=u[1] < 0.2, use=u[2] < 0.2)
    raise ValueError(f"unknown demonstrator kind {kind!r}")


@dataclass
class Trajectory:
    """One seeded episode: per-step actions and the frames they produced."""

    traj_id: str
    map_seed: int
    spawn_seed: int
    source: str  # demonstrator kind or policy id
    actions: list[Action]
    frames: np.ndarray  # (T, N_RAYS); frames[t] is the observation after actions[t]

    def __len__(self) -> int:
        return len(self.actions)


def run_episode(
    policy_fn,
    map_seed: int,
    spawn_seed: int,
    length: int,
    traj_id: str,
    source: str,
) -> Trajectory:
    """Roll an episode with policy_fn(state, frame) -> Action."""
    world, state, frame = env_reset(map_seed, spawn_seed)
    actions: list[Action] = []
    frames = np.empty((length, N_RAYS))
    for t in range(length):
        a = policy_fn(state, frame)
        state, frame = env_step(world, state, a)
        actions.append(a)
        frames[t] = frame
    return Trajectory(traj_id, map_seed, spawn_seed, source, actions, frames)


def gen_passive_dataset(
    kind: str, n_episodes: int, episode_len: int, base_seed: int
) -> list[Trajectory]:
    """Scripted demonstration episodes; map seeds occupy [base, base + n)."""
    if kind not in DEMO_KINDS:
        raise ValueError(f"unknown demonstrator kind {kind!r}")
    if episode_len % CHUNK != 0:
        raise ValueError(f"episode_len must be a multiple of {CHUNK}")
    out = []
    for e in range(n_episodes):
        rng = substream("demo", base_seed, e)
        traj = run_episode(
            lambda state, frame: script_action(kind, state, rng),
            map_seed=base_seed + e,
            spawn_seed=base_seed + 50021 + e,
            length=episode_len,
            traj_id=f"{kind}-{base_seed}-{e:04d}",
            source=kind,
        )
        out.append(traj)
    return out


def replay_features(traj: Trajectory) -> np.ndarray:
    """(T, 66) policy features seen before each recorded action.

    Features are the current frame plus yaw/360 and pitch/90. Recovered by
    replaying the episode from its seeds; replay determinism is part of
    the environment contract.
    """
    world, state, frame = env_reset(traj.map_seed, traj.spawn_seed)
    feats = np.empty((len(traj), N_RAYS + 2))
    for t, a in enumerate(traj.actions):
        feats[t, :N_RAYS] = frame
        feats[t, N_RAYS] = state.yaw / 360.0
        feats[t, N_RAYS + 1] = state.pitch / 90.0
        state, frame = env_step(world, state, a)
    return feats


SCHEMA_VERSION = 1


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    """One file per trajectory: a JSON header line, then one line per step."""
    path = Path(path)
    header = {
        "schema_version": SCHEMA_VERSION,
        "map_seed": traj.map_seed,
        "spawn_seed": traj.spawn_seed,
        "source": traj.source,
        "length": len(traj),
        "traj_id": traj.traj_id,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for t, a in enumerate(traj.actions):
            row = {
                "t": t,
                "yaw_bin": a.yaw_bin,
                "pitch_bin": a.pitch_bin,
                "buttons": a.buttons_str(),
                "frame": traj.frames[t].tolist(),
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_trajectory(path: str | Path) -> Trajectory:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trajectory schema in {path}")
        n = header["length"]
        actions = []
        frames = np.empty((n, N_RAYS))
        for t in range(n):
            row = json.loads(f.readline())
            actions.append(
                Action.from_buttons_str(row["yaw_bin"], row["pitch_bin"], row["buttons"])
            )
            frames[t] = row["frame"]
    return Trajectory(
        header["traj_id"], header["map_seed"], header["spawn_seed"],
        header["source"], actions, frames,
    )


def save_dataset(trajs: Iterable[Trajectory], dirpath: str | Path) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for traj in trajs:
        save_trajectory(traj, dirpath / f"{traj.traj_id}.jsonl")


def load_dataset(dirpath: str | Path) -> list[Trajectory]:
    paths = sorted(Path(dirpath).glob("*.jsonl"))
    return [load_trajectory(p) for p in paths]
