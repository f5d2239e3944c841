"""Experiment orchestration: training runs, policy evaluation, run comparison.

One run = one variant + seed: episodes are rolled out with the variant's
scalar reward (hierarchical with constraint gates and boundary blending, or
a plain component sum for the linear-sum baseline), fed into fixed-size PPO
rollouts, and logged to episodes.csv / priorities.json / checkpoint.bin plus
a config echo. Everything is deterministic given the RunConfig.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agent as ppo
from .config import OBJECTIVE_NAMES, EnvConfig, RunConfig, save_config
from .env import N_OBJECTIVES, N_PHASES, PlanarPushEnv, phase_boundaries
from .rewards import (
    InvalidStateError,
    MechanismState,
    ObjectiveReturnTable,
    PriorityAssignment,
    TransitionSpec,
    average_returns,
    constraint_satisfied,
    determine_priorities,
    hierarchy_reward,
    record_episode_returns,
    shaped_reward,
)

EPISODE_COLUMNS = (
    "episode",
    "variant",
    "seed",
    "total_steps",
    "terminated_by_constraint",
    "success",
    "phase1_steps",
    "phase2_steps",
    "phase3_steps",
    "sum_f1",
    "sum_f2",
    "sum_f3",
    "shaped_return",
    "level_phase1",
    "level_phase2",
    "level_phase3",
)


class Trajectory:
    """Time-ordered step storage for one episode."""

    def __init__(self):
        self.obs = []
        self.actions = []
        self.pre_squash = []
        self.log_probs = []
        self.values = []
        self.rewards = []  # shaped scalar reward per step
        self.phases = []  # 0-based phase index per step
        self.components = []  # raw objective vector per step
        self.dones = []
        self.violated = []  # constraint-gate flag per step (at most the last)

    def append(self, obs, act_result, reward, phase0, components, done, violated):
        self.obs.append(obs)
        self.actions.append(act_result.action)
        self.pre_squash.append(act_result.pre_squash)
        self.log_probs.append(act_result.log_prob)
        self.values.append(act_result.value)
        self.rewards.append(reward)
        self.phases.append(phase0)
        self.components.append(components)
        self.dones.append(1.0 if done else 0.0)
        self.violated.append(bool(violated))

    def __len__(self):
        return len(self.obs)


@dataclass
class EpisodeRecord:
    """Per-episode bookkeeping used for logging and the mechanism updates."""

    total_steps: int
    success: bool
    terminated_by_constraint: bool
    shaped_return: float
    component_sums: np.ndarray  # (N,) raw sums across all phases
    phase_steps: list  # t_k for the three phases
    prev_phase_steps: list  # Gamma_k in effect during the episode
    levels: list  # hierarchy level per phase during the episode
    level_sums: list = field(default_factory=list)  # per-phase sums of the level reward


def assignment_from_names(names) -> PriorityAssignment:
    return PriorityAssignment(tuple(OBJECTIVE_NAMES.index(n) for n in names))


def names_from_assignment(assignment: PriorityAssignment):
    return [OBJECTIVE_NAMES[i] for i in assignment.order]


def mechanism_state_for_variant(variant: str, mech) -> MechanismState | None:
    """Initial hierarchy state: learned (ahrm), fixed per phase (mhrm/fhrm), none (ls)."""
    if variant == "ls":
        return None
    state = MechanismState(
        N_OBJECTIVES, N_PHASES, window=mech.tau_window, tol=mech.convergence_tol
    )
    if variant == "mhrm":
        for k, names in enumerate(mech.mhrm_orders):
            state.set_assignment(k, assignment_from_names(names), frozen=True)
    elif variant == "fhrm":
        fixed = assignment_from_names(mech.fhrm_order)
        for k in range(N_PHASES):
            state.set_assignment(k, fixed, frozen=True)
    return state


def run_episode(
    env: PlanarPushEnv,
    params: ppo.NetParams,
    state: MechanismState | None,
    variant: str,
    mech,
    rng,
    reset_seed: int,
    mode: str = "stochastic",
):
    """Roll one episode; returns (Trajectory, EpisodeRecord, terminated_by_constraint).

    The constraint gate runs per step: once a phase's hierarchy level has a
    threshold installed, the episode ends at the first step whose running
    phase sum of the gated (level-1) reward drops below it.
    """
    obs = env.reset(reset_seed)
    traj = Trajectory()
    gate_sums = [0.0] * N_PHASES
    level_sums = [0.0] * N_PHASES
    levels = list(state.level) if state is not None else [0] * N_PHASES
    terminated_by_constraint = False
    shaped_return = 0.0

    while True:
        act_result = ppo.act(params, obs, mode=mode, rng=rng)
        next_obs, components, events = env.step(act_result.action)
        k = events.phase - 1
        if state is None:
            reward = float(components.sum())
            violated = False
        else:
            spec = TransitionSpec(
                mech.transition_alpha,
                mech.transition_delta,
                phase_boundaries(env.state.target_pos, env.config),
            )
            reward = shaped_reward(components, env.state.pusher_pos, k, state, spec)
            level_sums[k] += hierarchy_reward(components, state.assignment[k], state.level[k])
            violated = False
            if state.level[k] >= 2:
                gate_sums[k] += hierarchy_reward(
                    components, state.assignment[k], state.level[k] - 1
                )
                if not constraint_satisfied(gate_sums[k], state.gate_threshold(k)):
                    violated = True
                    terminated_by_constraint = True
        done = violated or events.success or env.state.terminated
        traj.append(obs, act_result, reward, k, components, done, violated)
        shaped_return += reward
        obs = next_obs
        if done:
            break

    sums = np.zeros(N_OBJECTIVES)
    for comps in traj.components:
        sums += comps
    record = EpisodeRecord(
        total_steps=len(traj),
        success=bool(events.success),
        terminated_by_constraint=terminated_by_constraint,
        shaped_return=shaped_return,
        component_sums=sums,
        phase_steps=list(env.state.phase_steps),
        prev_phase_steps=list(env.state.prev_phase_steps),
        levels=levels,
        level_sums=level_sums,
    )
    return traj, record, terminated_by_constraint


def _update_mechanism(
    state: MechanismState,
    table: ObjectiveReturnTable,
    traj: Trajectory,
    record: EpisodeRecord,
    variant: str,
    mech,
    episode: int,
    events_log: list,
):
    """Post-episode hierarchy bookkeeping: visits, histories, gates, priorities."""
    record_episode_returns(traj, table)
    visited = sorted(set(traj.phases))
    for k in visited:
        state.visits[k] += 1
        state.record_level_sum(k, record.level_sums[k])
        state.advance_if_converged(k)
    if variant != "ahrm":
        return
    for k in visited:
        visits = state.visits[k]
        if visits < mech.visit_threshold:
            continue
        if mech.redetermine_every > 0:
            due = (visits - mech.visit_threshold) % mech.redetermine_every == 0
        else:
            due = not state.determined[k]
        if not due:
            continue
        r_bar = average_returns(table, k, most_recent=mech.visit_threshold)
        assignment = determine_priorities(r_bar)
        state.set_assignment(k, assignment, frozen=mech.redetermine_every == 0)
        events_log.append(
            {
                "episode": episode,
                "phase": k + 1,
                "visits": visits,
                "assignment": names_from_assignment(assignment),
                "rbar": [float(v) for v in r_bar],
            }
        )


def _format_row(values):
    parts = []
    for v in values:
        if isinstance(v, bool):
            parts.append(str(int(v)))
        elif isinstance(v, float):
            parts.append(repr(v))
        else:
            parts.append(str(v))
    return ",".join(parts) + "\n"


def _priorities_payload(variant, state, events_log):
    if state is None:
        return {"variant": variant, "priorities": "not applicable"}
    phases = {}
    determined_at = {}
    for event in events_log:
        determined_at.setdefault(event["phase"], event)
    for k in range(N_PHASES):
        event = determined_at.get(k + 1)
        entry = {
            "determined_at_episode": event["episode"] if event else (0 if state.determined[k] else None),
            "assignment": names_from_assignment(state.assignment[k]),
            "rbar": event["rbar"] if event else None,
        }
        phases[str(k + 1)] = entry
    return {
        "variant": variant,
        "objectives": list(OBJECTIVE_NAMES),
        "phases": phases,
        "events": events_log,
        "final_state": state.snapshot(),
    }


@dataclass
class TrainResult:
    out_dir: Path
    episodes: int
    updates: int
    success_count: int
    constraint_terminations: int
    paths: dict = field(default_factory=dict)


def train(cfg: RunConfig, verbose: bool = False) -> TrainResult:
    """Run one full training; writes episodes.csv, priorities.json, checkpoint, config echo."""
    cfg.validate()
    if not cfg.out_dir:
        raise ValueError("RunConfig.out_dir must be set")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "episodes": out / "episodes.csv",
        "priorities": out / "priorities.json",
        "checkpoint": out / "checkpoint.bin",
        "config": out / "config.json",
    }
    save_config(cfg, paths["config"])

    env = PlanarPushEnv(cfg.env)
    params = ppo.init(env.obs_dim, env.act_dim, cfg.ppo.hidden_widths, seed=cfg.seed)
    updater = ppo.Updater(cfg.ppo)
    action_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    update_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))

    state = mechanism_state_for_variant(cfg.variant, cfg.mechanism)
    table = ObjectiveReturnTable(N_OBJECTIVES, N_PHASES)
    events_log: list = []

    buffer = {key: [] for key in ("obs", "pre_squash", "log_prob", "values", "rewards", "dones")}
    updates = 0
    successes = 0
    gated = 0

    with open(paths["episodes"], "w") as csv:
        csv.write(",".join(EPISODE_COLUMNS) + "\n")
        for episode in range(1, cfg.episodes + 1):
            reset_seed = cfg.seed * 1_000_000 + episode
            traj, record, was_gated = run_episode(
                env, params, state, cfg.variant, cfg.mechanism, action_rng, reset_seed
            )
            if state is not None:
                _update_mechanism(
                    state, table, traj, record, cfg.variant, cfg.mechanism, episode, events_log
                )
            successes += int(record.success)
            gated += int(was_gated)

            if not (cfg.discard_violations and was_gated):
                buffer["obs"].extend(traj.obs)
                buffer["pre_squash"].extend(traj.pre_squash)
                buffer["log_prob"].extend(traj.log_probs)
                buffer["values"].extend(traj.values)
                buffer["rewards"].extend(traj.rewards)
                buffer["dones"].extend(traj.dones)
            while len(buffer["obs"]) >= cfg.ppo.horizon:
                h = cfg.ppo.horizon
                if buffer["dones"][h - 1] > 0.0:
                    bootstrap = 0.0
                else:
                    bootstrap = float(buffer["values"][h])
                rollout = ppo.Rollout(
                    obs=np.asarray(buffer["obs"][:h]),
                    pre_squash=np.asarray(buffer["pre_squash"][:h]),
                    log_prob=np.asarray(buffer["log_prob"][:h]),
                    values=np.asarray(buffer["values"][:h]),
                    rewards=np.asarray(buffer["rewards"][:h]),
                    dones=np.asarray(buffer["dones"][:h]),
                    bootstrap_value=bootstrap,
                )
                params, stats = updater.update(params, rollout, update_rng)
                updates += 1
                if stats.aborted:
                    dump = {
                        "episode": episode,
                        "update": updates,
                        "detail": stats.detail,
                        "mechanism": state.snapshot() if state else None,
                    }
                    (out / "state_dump.json").write_text(json.dumps(dump, indent=2))
                    raise RuntimeError(f"non-finite training signal: {stats.detail}")
                for key in buffer:
                    buffer[key] = buffer[key][h:]

            row = (
                episode,
                cfg.variant,
                cfg.seed,
                record.total_steps,
                record.terminated_by_constraint,
                record.success,
                record.phase_steps[0],
                record.phase_steps[1],
                record.phase_steps[2],
                float(record.component_sums[0]),
                float(record.component_sums[1]),
                float(record.component_sums[2]),
                float(record.shaped_return),
                record.levels[0],
                record.levels[1],
                record.levels[2],
            )
            csv.write(_format_row(row))
            if verbose and episode % 50 == 0:
                print(
                    f"[{cfg.variant} seed={cfg.seed}] episode {episode}/{cfg.episodes} "
                    f"successes={successes} gated={gated} updates={updates}"
                )

    ppo.save(params, paths["checkpoint"])
    paths["priorities"] = out / "priorities.json"
    paths["priorities"].write_text(
        json.dumps(_priorities_payload(cfg.variant, state, events_log), indent=2, sort_keys=True)
        + "\n"
    )
    return TrainResult(
        out_dir=out,
        episodes=cfg.episodes,
        updates=updates,
        success_count=successes,
        constraint_terminations=gated,
        paths=paths,
    )


@dataclass
class EvalReport:
    n_evals: int
    successes: int
    success_rate: float
    obstacle_touches: int
    time_to_success_mean_s: float | None
    time_to_success_std_s: float | None
    target_travel_mean: float
    target_travel_std: float

    def to_dict(self):
        return dict(self.__dict__)


def _eval_episodes(env: PlanarPushEnv, act_fn, n: int, seed: int) -> EvalReport:
    successes = 0
    touches = 0
    times = []
    travels = []
    for i in range(n):
        env.reset(seed + i)
        touching = False
        success = False
        steps = 0
        while not env.state.terminated:
            obs, _, events = env.step(act_fn(env))
            steps += 1
            if events.touched_obstacle and not touching:
                touches += 1
            touching = events.touched_obstacle
            if events.success:
                success = True
        if success:
            successes += 1
            times.append(steps * env.config.dt)
        travels.append(env.state.target_travel)
    return EvalReport(
        n_evals=n,
        successes=successes,
        success_rate=successes / n,
        obstacle_touches=touches,
        time_to_success_mean_s=float(np.mean(times)) if times else None,
        time_to_success_std_s=float(np.std(times)) if times else None,
        target_travel_mean=float(np.mean(travels)),
        target_travel_std=float(np.std(travels)),
    )


def evaluate(checkpoint_path, env_config: EnvConfig, n: int = 40, seed: int = 10_000) -> EvalReport:
    """Deterministic-policy evaluation over n seeded resets; side-effect free."""
    params = ppo.load(checkpoint_path)
    env = PlanarPushEnv(env_config)
    ppo.check_compat(params, env.obs_dim, env.act_dim)

    def act_fn(env_inst):
        return ppo.act(params, env_inst.observation(), mode="deterministic").action

    return _eval_episodes(env, act_fn, n, seed)


def scripted_pusher_action(env: PlanarPushEnv) -> np.ndarray:
    """Hand-written straight-line controller: approach through the south gap,
    line up under the target, push it north off the table."""
    cfg = env.config
    st = env.state
    tx, ty = st.target_pos
    px, py = st.pusher_pos
    aligned = abs(px - tx) <= 0.005 and py <= ty - cfg.contact_radius * 0.65
    if aligned:
        goal = st.target_pos
    elif py >= 0.29 and abs(px - 0.5) <= 0.02:
        goal = np.array([tx, ty - 0.12])
    else:
        goal = np.array([0.5, 0.30])
    step = goal - st.pusher_pos
    dist = float(np.hypot(*step))
    if dist <= 1e-12:
        return np.zeros(2)
    if dist > cfg.max_speed:
        return step / dist
    return step / cfg.max_speed


def evaluate_scripted(env_config: EnvConfig, n: int = 40, seed: int = 10_000) -> EvalReport:
    """Certify the task is solvable: run the scripted controller like a policy."""
    env = PlanarPushEnv(env_config)
    return _eval_episodes(env, scripted_pusher_action, n, seed)


def _moving_average(values, window: int):
    out = np.empty(len(values))
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out[i] = acc / min(i + 1, window)
    return out


def read_episodes_csv(path):
    """episodes.csv -> dict of column -> list (numbers parsed)."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    cols = {name: [] for name in header}
    for line in lines[1:]:
        for name, cell in zip(header, line.split(",")):
            if name == "variant":
                cols[name].append(cell)
            else:
                cols[name].append(float(cell))
    return cols


def compare(run_dirs, out_dir, smooth_window: int = 10):
    """Aggregate completed runs into a summary CSV and SVG learning curves."""
    from .svgplot import line_plot

    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    missing = []
    for d in run_dirs:
        for name in ("episodes.csv", "eval.json"):
            if not (d / name).exists():
                missing.append(str(d / name))
    if missing:
        raise FileNotFoundError("missing run files: " + ", ".join(missing))

    by_variant: dict[str, list] = {}
    for d in run_dirs:
        episodes = read_episodes_csv(d / "episodes.csv")
        report = json.loads((d / "eval.json").read_text())
        variant = episodes["variant"][0]
        by_variant.setdefault(variant, []).append((d, episodes, report))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    series = []
    for variant in sorted(by_variant):
        runs = by_variant[variant]
        lengths = {len(e["episode"]) for _, e, _ in runs}
        if len(lengths) != 1:
            raise ValueError(f"runs for variant {variant} have differing episode counts: {lengths}")
        returns = np.mean([e["shaped_return"] for _, e, _ in runs], axis=0)
        smoothed = _moving_average(list(returns), smooth_window)
        series.append((variant, np.arange(1, len(smoothed) + 1), smoothed))
        times = [r["time_to_success_mean_s"] for _, _, r in runs if r["time_to_success_mean_s"] is not None]
        rows.append(
            {
                "variant": variant,
                "runs": len(runs),
                "mean_successes": float(np.mean([r["successes"] for _, _, r in runs])),
                "mean_success_rate": float(np.mean([r["success_rate"] for _, _, r in runs])),
                "mean_obstacle_touches": float(np.mean([r["obstacle_touches"] for _, _, r in runs])),
                "time_to_success_mean_s": float(np.mean(times)) if times else None,
                "target_travel_mean": float(
                    np.mean([r["target_travel_mean"] for _, _, r in runs])
                ),
                "final_smoothed_return": float(smoothed[-1]),
            }
        )

    csv_path = out / "compare.csv"
    header = list(rows[0].keys())
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(_format_row([row[h] if row[h] is not None else "" for h in header]))
    svg_path = out / "curves.svg"
    line_plot(
        series,
        title="Smoothed episode return by variant",
        xlabel="episode",
        ylabel=f"return (window {smooth_window})",
        path=svg_path,
    )
    return {"csv": csv_path, "svg": svg_path, "rows": rows}


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
