"""Priority-ordered reward hierarchies with constraint gates and phase blending.

A task exposes N raw reward components (one per objective) and K spatial
phases. Each phase holds a priority ordering of the objectives and a current
hierarchy level j: the phase reward is the sum of the j highest-priority
components. Levels advance when their episode-sum series converges; the
converged level's recent average becomes a hard floor (a constraint gate)
that aborts any later episode whose running sum in that phase drops below it.
Priorities themselves are determined from collected per-objective episode
returns once a phase has been visited often enough, then frozen.

Near a phase boundary the rewards of the two adjacent phases are blended by
a tanh weight of the signed distance to the boundary, so the scalar reward
handed to the agent transitions smoothly instead of jumping.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np


class InvalidStateError(RuntimeError):
    """An operation was called in a state its contract does not allow."""


@dataclass(frozen=True)
class PriorityAssignment:
    """Objective indices ordered by priority; order[0] holds priority 1."""

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"order {self.order!r} is not a permutation of 0..N-1")

    @property
    def n(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class CircleBoundary:
    """A circular phase boundary; the later phase lies inside the circle."""

    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class TransitionSpec:
    """Blend-band parameters plus the K-1 boundaries ordered by phase index."""

    alpha: float
    delta: float
    boundaries: tuple[CircleBoundary, ...]

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError("alpha must be finite and positive")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValueError("delta must be finite and positive")


def hierarchy_reward(components, assignment: PriorityAssignment, level: int) -> float:
    """Sum of the `level` highest-priority components."""
    n = assignment.n
    if not 1 <= level <= n:
        raise ValueError(f"level must lie in [1, {n}], got {level}")
    return float(sum(components[i] for i in assignment.order[:level]))


def constraint_threshold(history) -> float:
    """Mean of the given per-episode sums; the gate floor for the next level."""
    values = list(history)
    if not values:
        raise InvalidStateError("constraint threshold requires at least one episode sum")
    return float(sum(values) / len(values))


def constraint_satisfied(running_sum: float, tau) -> bool:
    """True while no gate is installed or the within-episode sum holds the floor."""
    return tau is None or running_sum >= tau


def level_converged(series, window: int = 10, tol: float = 0.05) -> bool:
    """Two-window test: recent mean within tol (relative) of the previous one."""
    values = list(series)
    if len(values) < 2 * window:
        return False
    recent = sum(values[-window:]) / window
    previous = sum(values[-2 * window : -window]) / window
    return abs(recent - previous) <= tol * max(1.0, abs(previous))


def determine_priorities(r_bar) -> PriorityAssignment:
    """Order objectives by |mean episode return| descending, ties by lower index."""
    magnitudes = np.abs(np.asarray(r_bar, dtype=np.float64))
    order = np.argsort(-magnitudes, kind="stable")
    return PriorityAssignment(tuple(int(i) for i in order))


def transition_weight(signed_distance: float, spec: TransitionSpec) -> float:
    """Blend weight of the later phase: 0.5*(1+tanh(alpha*s)), saturated outside the band.

    s < 0 on the earlier-phase side of the boundary, s > 0 on the later side;
    beyond +/-delta the weight is exactly 0 or 1.
    """
    if signed_distance < -spec.delta:
        return 0.0
    if signed_distance > spec.delta:
        return 1.0
    w = 0.5 * (1.0 + math.tanh(spec.alpha * signed_distance))
    return min(1.0, max(0.0, w))


def blended_reward(reward_old: float, reward_new: float, w: float) -> float:
    """Complementary blend of the earlier- and later-phase rewards."""
    return (1.0 - w) * reward_old + w * reward_new


def boundary_distance(position, boundary: CircleBoundary) -> float:
    """Signed distance to a circular boundary: positive inside (later phase)."""
    dx = position[0] - boundary.center[0]
    dy = position[1] - boundary.center[1]
    return boundary.radius - math.hypot(dx, dy)


class ObjectiveReturnTable:
    """Per-phase, per-objective episode sums of the raw reward components."""

    def __init__(self, n_objectives: int, n_phases: int):
        self.n_objectives = n_objectives
        self.n_phases = n_phases
        self._entries: list[list[np.ndarray]] = [[] for _ in range(n_phases)]

    def append(self, phase: int, sums) -> None:
        sums = np.asarray(sums, dtype=np.float64)
        if sums.shape != (self.n_objectives,):
            raise ValueError(f"expected {self.n_objectives} objective sums, got shape {sums.shape}")
        if not np.all(np.isfinite(sums)):
            raise ValueError("episode sums must be finite")
        self._entries[phase].append(sums)

    def visits(self, phase: int) -> int:
        return len(self._entries[phase])

    def entries(self, phase: int):
        return list(self._entries[phase])


def record_episode_returns(trajectory, table: ObjectiveReturnTable) -> ObjectiveReturnTable:
    """Fold one episode into the table: per visited phase, sum raw components."""
    sums = phase_component_sums(trajectory, table.n_objectives, table.n_phases)
    for phase, total in sums.items():
        table.append(phase, total)
    return table


def phase_component_sums(trajectory, n_objectives: int, n_phases: int):
    """Per-phase vector sums of the raw components over an episode's steps.

    `trajectory` needs `.phases` (0-based ints) and `.components` (per-step
    arrays of length n_objectives). Only visited phases appear in the result.
    """
    out: dict[int, np.ndarray] = {}
    for phase, comps in zip(trajectory.phases, trajectory.components):
        if phase not in out:
            out[phase] = np.zeros(n_objectives, dtype=np.float64)
        out[phase] += comps
    return out


def average_returns(table: ObjectiveReturnTable, phase: int, most_recent: int | None = None):
    """Per-objective mean episode return for a phase.

    Uses all collected entries, capped at the `most_recent` newest ones when
    more exist (the determination rule averages a fixed number of visits).
    """
    entries = table.entries(phase)
    if not entries:
        raise InvalidStateError(f"phase {phase} has no recorded episodes")
    if most_recent is not None and len(entries) > most_recent:
        entries = entries[-most_recent:]
    return np.mean(np.stack(entries), axis=0)


class MechanismState:
    """Mutable hierarchy state for one run: assignments, levels, gates, histories.

    Indices are 0-based everywhere (phases 0..K-1, objectives 0..N-1,
    hierarchy levels stay 1-based because level j means "top j components").
    """

    def __init__(self, n_objectives: int, n_phases: int, window: int = 10, tol: float = 0.05):
        self.n_objectives = n_objectives
        self.n_phases = n_phases
        self.window = window
        self.tol = tol
        identity = PriorityAssignment(tuple(range(n_objectives)))
        self.assignment: list[PriorityAssignment] = [identity] * n_phases
        self.level: list[int] = [1] * n_phases
        # tau[k][j] gates level j+1 while phase k learns it; installed when level j converges
        self.tau: list[dict[int, float]] = [dict() for _ in range(n_phases)]
        self.visits: list[int] = [0] * n_phases
        self.determined: list[bool] = [False] * n_phases
        # per phase, per level: ring buffer of episode sums of that level's reward
        self.history: list[dict[int, deque]] = [dict() for _ in range(n_phases)]

    def gate_threshold(self, phase: int):
        """Active gate floor for the phase, or None before any level converged."""
        return self.tau[phase].get(self.level[phase] - 1)

    def record_level_sum(self, phase: int, episode_sum: float) -> None:
        """Append one episode's phase sum of the current level's reward."""
        buf = self.history[phase].setdefault(
            self.level[phase], deque(maxlen=2 * self.window)
        )
        buf.append(episode_sum)

    def advance_if_converged(self, phase: int) -> bool:
        """Install the gate and move to the next level once the series settles."""
        lvl = self.level[phase]
        buf = self.history[phase].get(lvl)
        if buf is None or lvl >= self.n_objectives:
            return False
        if not level_converged(buf, self.window, self.tol):
            return False
        recent = list(buf)[-self.window :]
        self.tau[phase][lvl] = constraint_threshold(recent)
        self.level[phase] = lvl + 1
        return True

    def set_assignment(self, phase: int, assignment: PriorityAssignment, frozen: bool = True):
        if self.determined[phase]:
            raise InvalidStateError(f"phase {phase} priorities are frozen")
        self.assignment[phase] = assignment
        self.determined[phase] = frozen

    def snapshot(self) -> dict:
        """JSON-ready view of the mechanism state."""
        return {
            "levels": list(self.level),
            "assignments": [list(a.order) for a in self.assignment],
            "determined": list(self.determined),
            "visits": list(self.visits),
            "tau": [{str(k): v for k, v in taus.items()} for taus in self.tau],
        }


def nearest_adjacent_boundary(position, phase: int, spec: TransitionSpec):
    """Closest boundary adjacent to `phase` as (earlier, later, signed distance).

    Returns None when the phase chain has no boundaries. Phase k (0-based)
    borders boundary k-1 (to the earlier phase) and boundary k (to the later).
    """
    k = len(spec.boundaries) + 1
    candidates = []
    if phase > 0:
        candidates.append((phase - 1, phase, spec.boundaries[phase - 1]))
    if phase < k - 1:
        candidates.append((phase, phase + 1, spec.boundaries[phase]))
    if not candidates:
        return None
    best = min(candidates, key=lambda c: abs(boundary_distance(position, c[2])))
    earlier, later, boundary = best
    return earlier, later, boundary_distance(position, boundary)


def shaped_reward(
    components,
    position,
    phase: int,
    state: MechanismState,
    spec: TransitionSpec,
) -> float:
    """Scalar reward for one step: the phase hierarchy reward, boundary-blended.

    Inside the blend band of the nearest adjacent boundary, the earlier and
    later phases' hierarchy rewards (each at its own level and assignment)
    are mixed by the tanh transition weight; elsewhere this is exactly the
    current phase's hierarchy reward.
    """
    current = hierarchy_reward(components, state.assignment[phase], state.level[phase])
    near = nearest_adjacent_boundary(position, phase, spec)
    if near is None:
        return current
    earlier, later, s = near
    if abs(s) > spec.delta:
        return current
    r_earlier = hierarchy_reward(components, state.assignment[earlier], state.level[earlier])
    r_later = hierarchy_reward(components, state.assignment[later], state.level[later])
    return blended_reward(r_earlier, r_later, transition_weight(s, spec))
