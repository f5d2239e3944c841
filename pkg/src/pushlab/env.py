"""Deterministic planar pushing task on a unit table.

A velocity-controlled disc pusher must shove a target disc off the table
without disturbing a ring of obstacle discs around it. Kinematics are
quasi-static and frictionless: the pusher moves exactly as commanded, and
any disc it (or another displaced disc) overlaps is translated along the
center-to-center line by the penetration depth. Discs have velocity only on
steps in which they were displaced.

The task has three spatial phases keyed off the pusher position: approach
(far from everything), pre-manipulation (inside the ring boundary about the
table center) and manipulation (within contact range of the target). Each
step yields three binary reward components: obstacle avoidance, manipulation
progress (pushing the target away from the center while closing in on it),
and per-phase time pressure against the previous episode's phase duration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import EnvConfig
from .rewards import CircleBoundary, InvalidStateError

N_OBJECTIVES = 3
N_PHASES = 3


@dataclass
class StepEvents:
    touched_obstacle: bool
    target_moved: bool
    success: bool
    phase: int  # 1-based, in {1, 2, 3}


@dataclass
class EnvState:
    pusher_pos: np.ndarray
    target_pos: np.ndarray
    target_vel: np.ndarray
    obstacle_pos: np.ndarray  # (M, 2)
    obstacle_vel: np.ndarray  # (M, 2)
    step_count: int = 0
    prev_action: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prev_d: float = 0.0  # target distance from table center, previous step
    prev_l: float = 0.0  # pusher-target distance, previous step
    phase_steps: list = field(default_factory=lambda: [0, 0, 0])  # t_k, this episode
    prev_phase_steps: list = field(default_factory=lambda: [0, 0, 0])  # Gamma_k
    target_travel: float = 0.0
    terminated: bool = False


def phase_of(pusher_pos, target_pos, config: EnvConfig) -> int:
    """1-based phase from the pusher position: contact > ring > approach."""
    if math.hypot(*(np.asarray(pusher_pos) - np.asarray(target_pos))) <= config.contact_radius:
        return 3
    cx, cy = config.center
    if math.hypot(pusher_pos[0] - cx, pusher_pos[1] - cy) <= config.phase1_radius:
        return 2
    return 1


def f_obstacle(any_obstacle_moved: bool) -> float:
    """-1 on steps where any obstacle was displaced, +1 otherwise."""
    return -1.0 if any_obstacle_moved else 1.0


def f_manipulation(d: float, l: float, d_prev: float, l_prev: float) -> float:
    """+1 when target-from-center minus pusher-to-target distance grew."""
    return 1.0 if (d - l) > (d_prev - l_prev) else -1.0


def f_time(t_k: int, gamma_k: int) -> float:
    """+1 while the phase is still faster than its previous-episode duration."""
    return 1.0 if t_k < gamma_k else -1.0


def phase_boundaries(target_pos, config: EnvConfig):
    """Current boundary circles: ring about the center, contact about the target."""
    return (
        CircleBoundary(config.center, config.phase1_radius),
        CircleBoundary((float(target_pos[0]), float(target_pos[1])), config.contact_radius),
    )


def signed_phase_distance(pusher_pos, target_pos, config: EnvConfig):
    """Nearest phase boundary and its signed distance (positive on the later side)."""
    b12, b23 = phase_boundaries(target_pos, config)
    s12 = b12.radius - math.hypot(pusher_pos[0] - b12.center[0], pusher_pos[1] - b12.center[1])
    s23 = b23.radius - math.hypot(pusher_pos[0] - b23.center[0], pusher_pos[1] - b23.center[1])
    if abs(s12) <= abs(s23):
        return "b12", s12
    return "b23", s23


class PlanarPushEnv:
    """One environment instance; single-threaded, fully deterministic per seed."""

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.config.validate()
        self.state: EnvState | None = None
        self._episode_count = 0

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def act_dim(self) -> int:
        return 2

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.config
        rng = np.random.default_rng(seed)
        jitter = rng.uniform(-cfg.start_jitter, cfg.start_jitter, size=2)
        angles = np.deg2rad(np.asarray(cfg.obstacle_angles_deg, dtype=np.float64))
        obstacles = np.stack(
            [
                cfg.center[0] + cfg.obstacle_ring_radius * np.cos(angles),
                cfg.center[1] + cfg.obstacle_ring_radius * np.sin(angles),
            ],
            axis=1,
        )
        if self.state is None:
            gamma = [cfg.max_steps] * N_PHASES
        else:
            gamma = [
                t if t > 0 else g
                for t, g in zip(self.state.phase_steps, self.state.prev_phase_steps)
            ]
        pusher = np.asarray(cfg.pusher_start, dtype=np.float64) + jitter
        target = np.asarray(cfg.center, dtype=np.float64)
        self.state = EnvState(
            pusher_pos=pusher,
            target_pos=target,
            target_vel=np.zeros(2),
            obstacle_pos=obstacles,
            obstacle_vel=np.zeros_like(obstacles),
            prev_d=0.0,
            prev_l=float(np.hypot(*(pusher - target))),
            prev_phase_steps=gamma,
        )
        self._episode_count += 1
        return self.observation()

    def step(self, action):
        """Advance one step; returns (observation, components, events)."""
        st = self.state
        if st is None:
            raise InvalidStateError("reset() must be called before step()")
        if st.terminated:
            raise InvalidStateError("episode is terminated; call reset()")
        cfg = self.config
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if a.shape != (2,) or not np.all(np.isfinite(a)):
            raise ValueError(f"action must be a finite 2-vector, got {action!r}")

        st.pusher_pos = st.pusher_pos + a * cfg.max_speed
        target_before = st.target_pos.copy()
        obstacles_before = st.obstacle_pos.copy()
        self._resolve_overlaps()

        target_disp = st.target_pos - target_before
        obstacle_disp = st.obstacle_pos - obstacles_before
        st.target_vel = target_disp / cfg.dt
        st.obstacle_vel = obstacle_disp / cfg.dt
        st.target_travel += float(np.hypot(*target_disp))

        target_moved = bool(np.hypot(*target_disp) > 0.0)
        touched_obstacle = bool(np.any(np.hypot(obstacle_disp[:, 0], obstacle_disp[:, 1]) > 0.0))

        cx, cy = cfg.center
        d = float(np.hypot(st.target_pos[0] - cx, st.target_pos[1] - cy))
        l = float(np.hypot(*(st.pusher_pos - st.target_pos)))
        phase = phase_of(st.pusher_pos, st.target_pos, cfg)
        st.phase_steps[phase - 1] += 1

        components = np.array(
            [
                f_obstacle(touched_obstacle),
                f_manipulation(d, l, st.prev_d, st.prev_l),
                f_time(st.phase_steps[phase - 1], st.prev_phase_steps[phase - 1]),
            ]
        )
        st.prev_d, st.prev_l = d, l
        st.prev_action = a
        st.step_count += 1

        success = bool(
            st.target_pos[0] < 0.0
            or st.target_pos[0] > 1.0
            or st.target_pos[1] < 0.0
            or st.target_pos[1] > 1.0
        )
        if success or st.step_count >= cfg.max_steps:
            st.terminated = True
        events = StepEvents(
            touched_obstacle=touched_obstacle,
            target_moved=target_moved,
            success=success,
            phase=phase,
        )
        return self.observation(), components, events

    def _resolve_overlaps(self):
        """Translate overlapped discs out along center-to-center lines.

        Only the pusher and discs displaced this step push other discs.
        Passes repeat until stable; the final pass guarantees the pusher
        itself overlaps nothing.
        """
        st = self.state
        cfg = self.config
        # disc index 0 = target, 1.. = obstacles
        radii = [cfg.target_radius] + [cfg.obstacle_radius] * cfg.n_obstacles
        moved = [False] * len(radii)

        def pos(i):
            return st.target_pos if i == 0 else st.obstacle_pos[i - 1]

        def set_pos(i, p):
            if i == 0:
                st.target_pos = p
            else:
                st.obstacle_pos[i - 1] = p

        def push_out(center, radius, i):
            p = pos(i)
            delta = p - center
            dist = float(np.hypot(*delta))
            depth = radius + radii[i] - dist
            if depth <= 1e-12:
                return False
            if dist <= 1e-12:
                # concentric: push along the commanded move direction, or +x
                direction = st.prev_action.copy()
                norm = float(np.hypot(*direction))
                direction = direction / norm if norm > 0 else np.array([1.0, 0.0])
                depth = radius + radii[i]
            else:
                direction = delta / dist
            set_pos(i, p + direction * depth)
            moved[i] = True
            return True

        for _ in range(32):
            changed = False
            for i in range(len(radii)):
                changed |= push_out(st.pusher_pos, cfg.pusher_radius, i)
            for i in range(len(radii)):
                if not moved[i]:
                    continue
                for j in range(len(radii)):
                    if j != i:
                        changed |= push_out(pos(i), radii[i], j)
            if not changed:
                break
        else:
            for i in range(len(radii)):
                push_out(st.pusher_pos, cfg.pusher_radius, i)

    def observation(self) -> np.ndarray:
        """Current flat observation vector (see module docstring for layout)."""
        st = self.state
        return np.concatenate(
            [
                st.pusher_pos,
                st.target_pos,
                st.target_vel,
                st.obstacle_pos.ravel(),
                st.obstacle_vel.ravel(),
                st.prev_action,
            ]
        ).astype(np.float64)
