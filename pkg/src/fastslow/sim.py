"""Kinematic whole-body simulator, scripted expert, dataset generator, and
task evaluator.

The scene is a desk-scale serving counter: a cup and a scoop at randomized
spots, a fixed bowl, a fixed place slot, and a sliding cabinet door for the
second instruction.  The robot is three independently commanded kinematic
units (torso, left EE, right EE) plus two grippers; deltas are applied in
the world frame, grippers take absolute widths, and grasping is a latch
(object within 2 cm of an EE whose gripper is commanded below 0.2).

Instruction 0 is the four-stage long-horizon task (pick the cup, grab the
scoop, dip the scoop in the bowl and carry it over the held cup, set the
scoop back and place the cup on the slot).  Instruction 1 slides the
cabinet door shut.  Observations are the flattened robot state plus object
offsets with Gaussian feature noise; there are no images.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .actions import ActionChunk, WholeBodyAction, clip_grip
from .dataset import Dataset, EpisodeRecord
from .errors import UnreachableGoal
from .geometry import Pose

# -- scene constants (meters, radians) ----------------------------------------

TORSO_HOME = np.array([0.0, 0.0, 0.90])
LEFT_HOME = np.array([0.32, 0.24, 0.82])
RIGHT_HOME = np.array([0.32, -0.24, 0.82])
CUP_BASE = np.array([0.52, 0.22, 0.76])
SCOOP_BASE = np.array([0.50, -0.30, 0.78])
BOWL_POS = np.array([0.62, -0.50, 0.80])
SLOT_POS = np.array([0.42, 0.38, 0.76])
CUP_HOLD = np.array([0.42, 0.12, 0.88])     # where the left hand parks the cup
DOOR_HANDLE = np.array([0.15, -0.55, 1.05])
DOOR_TRAVEL = 0.18                            # +x slide distance to closed

IN_DIST_RANGE = 0.06          # +-x/y placement jitter seen in the dataset
OUT_DIST_OFFSET = (0.08, 0.14)  # extra radial shift for unseen placements

GRASP_DIST = 0.02
GRASP_GRIP = 0.2
RELEASE_GRIP = 0.5
LIFT_HEIGHT = 0.06            # cup must rise this much for subtask 0
REGION_RADIUS = 0.06          # bowl-dip / pour-over acceptance radius
PLACE_RADIUS = 0.05
POUR_ABOVE = 0.12

FEATURE_NOISE_STD = 0.01
FEATURE_DIM = 47
PROPRIO_DIM = 29
CONTROL_HZ = 30.0
F_CAM = 30.0

MAX_POS_STEP = 0.25 / CONTROL_HZ   # expert speed caps per control step
MAX_ROT_STEP = 0.8 / CONTROL_HZ
MAX_GRIP_STEP = 2.0 / CONTROL_HZ

SUBTASK_NAMES = ("pick_cup", "grab_scoop", "scoop_pour", "place_cup")
N_INSTRUCTIONS = 2


@dataclass
class SimState:
    torso: Pose
    left: Pose
    right: Pose
    grips: np.ndarray                  # (2,) left, right
    objects: dict                      # name -> (3,) position
    attached: dict                     # object name -> (ee name, offset)
    cup_present: bool
    cup_start_z: float
    visited_bowl: bool
    visited_pour: bool
    door_state: float                  # 0 open .. 1 closed
    time: float
    subtask_done: list                 # four bools, monotone

    def copy(self) -> "SimState":
        return SimState(
            self.torso.copy(), self.left.copy(), self.right.copy(),
            self.grips.copy(), {k: v.copy() for k, v in self.objects.items()},
            dict(self.attached), self.cup_present, self.cup_start_z,
            self.visited_bowl, self.visited_pour, self.door_state,
            self.time, list(self.subtask_done))

    @property
    def subtask_index(self) -> int:
        return sum(self.subtask_done)

    def ee(self, name: str) -> Pose:
        return self.left if name == "left" else self.right

    def door_handle(self) -> np.ndarray:
        return DOOR_HANDLE + np.array([self.door_state * DOOR_TRAVEL, 0.0, 0.0])


def make_initial_state(rng: np.random.Generator, placement: str = "in_dist") -> SimState:
    """Randomized start; 'out_dist' pushes the cup beyond the training range."""
    cup = CUP_BASE + np.array([rng.uniform(-IN_DIST_RANGE, IN_DIST_RANGE),
                               rng.uniform(-IN_DIST_RANGE, IN_DIST_RANGE), 0.0])
    scoop = SCOOP_BASE + np.array([rng.uniform(-IN_DIST_RANGE, IN_DIST_RANGE),
                                   rng.uniform(-IN_DIST_RANGE, IN_DIST_RANGE), 0.0])
    if placement == "out_dist":
        ang = rng.uniform(0, 2 * np.pi)
        r = rng.uniform(*OUT_DIST_OFFSET)
        cup = cup + np.array([r * np.cos(ang), r * np.sin(ang), 0.0])
    elif placement != "in_dist":
        raise ValueError(f"unknown placement mode {placement!r}")
    return SimState(
        torso=Pose(TORSO_HOME.copy(), np.eye(3)),
        left=Pose(LEFT_HOME.copy(), np.eye(3)),
        right=Pose(RIGHT_HOME.copy(), np.eye(3)),
        grips=np.array([1.0, 1.0]),
        objects={"cup": cup, "scoop": scoop},
        attached={},
        cup_present=True,
        cup_start_z=float(cup[2]),
        visited_bowl=False,
        visited_pour=False,
        door_state=0.0,
        time=0.0,
        subtask_done=[False, False, False, False])


def remove_cup(state: SimState) -> SimState:
    """Anomaly injection: the cup disappears mid-episode."""
    s = state.copy()
    s.cup_present = False
    s.attached.pop("cup", None)
    return s


# -- dynamics -------------------------------------------------------------------


def step(state: SimState, action: WholeBodyAction, dt: float = 1.0 / CONTROL_HZ) -> SimState:
    """Pure kinematic update; deterministic, no contact physics."""
    s = state.copy()
    right_dx = float(action.pos[6])
    s.torso = geometry.apply_delta(s.torso, action.delta_pose(0))
    s.left = geometry.apply_delta(s.left, action.delta_pose(1))
    s.right = geometry.apply_delta(s.right, action.delta_pose(2))
    s.grips = clip_grip(action.grip, warn=False)

    # attached objects ride along
    for obj, (ee_name, offset) in list(s.attached.items()):
        s.objects[obj] = s.ee(ee_name).position + offset

    # release before latch so one step cannot hand an object between EEs
    for obj, (ee_name, _) in list(s.attached.items()):
        grip = s.grips[0] if ee_name == "left" else s.grips[1]
        if grip > RELEASE_GRIP:
            del s.attached[obj]
    for obj, pos in s.objects.items():
        if obj in s.attached or (obj == "cup" and not s.cup_present):
            continue
        for idx, ee_name in enumerate(("left", "right")):
            if s.grips[idx] < GRASP_GRIP and np.linalg.norm(s.ee(ee_name).position - pos) <= GRASP_DIST:
                if any(e == ee_name for e, _ in s.attached.values()):
                    continue  # one object per hand
                s.attached[obj] = (ee_name, pos - s.ee(ee_name).position)
                break

    # cabinet door slides while the right EE pushes near the handle
    if np.linalg.norm(s.right.position - s.door_handle()) < 0.05 and right_dx > 0:
        s.door_state = float(np.clip(s.door_state + right_dx / DOOR_TRAVEL, 0.0, 1.0))

    s.time = state.time + dt
    _update_subtasks(s)
    return s


def _update_subtasks(s: SimState) -> None:
    cup = s.objects["cup"]
    if not s.subtask_done[0]:
        if s.cup_present and "cup" in s.attached and cup[2] >= s.cup_start_z + LIFT_HEIGHT:
            s.subtask_done[0] = True
    if s.subtask_done[0] and not s.subtask_done[1]:
        if "scoop" in s.attached:
            s.subtask_done[1] = True
    if s.subtask_done[1]:
        scoop = s.objects["scoop"]
        if "scoop" in s.attached:
            if np.linalg.norm(scoop - (BOWL_POS + np.array([0, 0, 0.03]))) <= REGION_RADIUS:
                s.visited_bowl = True
            pour_target = cup + np.array([0, 0, POUR_ABOVE])
            if s.visited_bowl and np.linalg.norm(scoop - pour_target) <= REGION_RADIUS:
                s.visited_pour = True
        if not s.subtask_done[2] and s.visited_bowl and s.visited_pour:
            s.subtask_done[2] = True
    if s.subtask_done[2] and not s.subtask_done[3]:
        if ("cup" not in s.attached and s.cup_present
                and np.linalg.norm(cup - SLOT_POS) <= PLACE_RADIUS
                and s.grips[0] > RELEASE_GRIP):
            s.subtask_done[3] = True


def door_closed(s: SimState) -> bool:
    return s.door_state >= 0.95


# -- observations -----------------------------------------------------------------


def proprio_vector(s: SimState) -> np.ndarray:
    """Robot state in action layout: 9 positions, 18 rotation dims, 2 grips."""
    pos = np.concatenate([s.torso.position, s.left.position, s.right.position])
    rot = np.concatenate([geometry.matrix_to_sixd(s.torso.orientation),
                          geometry.matrix_to_sixd(s.left.orientation),
                          geometry.matrix_to_sixd(s.right.orientation)])
    return np.concatenate([pos, rot, s.grips])


def observe(s: SimState, rng: np.random.Generator | None = None) -> np.ndarray:
    """Feature vector: proprio, object offsets, latch flags, door; plus noise."""
    cup = s.objects["cup"] if s.cup_present else s.left.position  # zero offset when absent
    feats = np.concatenate([
        proprio_vector(s),
        cup - s.left.position,
        s.objects["scoop"] - s.right.position,
        BOWL_POS - s.right.position,
        SLOT_POS - cup,
        np.array([1.0 if "cup" in s.attached else 0.0,
                  1.0 if "scoop" in s.attached else 0.0]),
        s.door_handle() - s.right.position,
        np.array([s.door_state]),
    ])
    if rng is not None:
        feats = feats + rng.normal(0.0, FEATURE_NOISE_STD, size=feats.shape)
    return feats


# -- scripted expert ------------------------------------------------------------------

_GRASP_TOL = 0.012
_CLOSED = 0.05
_OPEN = 1.0


def _expert_targets(s: SimState, instruction_id: int) -> dict:
    """Waypoint ladder derived purely from the state, so it is recoverable."""
    t = {"left": None, "right": None, "torso_yaw": 0.0,
         "grip_left": None, "grip_right": None}
    if instruction_id == 1:
        handle = s.door_handle()
        t["grip_right"] = _CLOSED
        if door_closed(s):
            t["right"] = RIGHT_HOME
            t["left"] = LEFT_HOME
            t["grip_right"] = _OPEN
        elif np.linalg.norm(s.right.position - handle) > 0.03:
            t["right"] = handle
            t["torso_yaw"] = -0.3
        else:
            t["right"] = handle + np.array([0.05, 0.0, 0.0])  # push along the slide
            t["torso_yaw"] = -0.3
        return t

    cup = s.objects["cup"]
    scoop = s.objects["scoop"]
    if not s.cup_present and "cup" not in s.attached:
        # anomaly: target object is gone, retreat home and open up
        t["left"], t["right"] = LEFT_HOME, RIGHT_HOME
        t["grip_left"], t["grip_right"] = _OPEN, _OPEN
        return t

    if "cup" not in s.attached and not s.subtask_done[3]:
        grasp = cup + np.array([0, 0, 0.015])
        t["torso_yaw"] = 0.15
        t["grip_left"] = _OPEN
        if np.linalg.norm(s.left.position[:2] - grasp[:2]) > 0.02 and s.left.position[2] < grasp[2] + 0.08:
            t["left"] = cup + np.array([0, 0, 0.10])
        elif np.linalg.norm(s.left.position - grasp) > _GRASP_TOL:
            t["left"] = grasp
        else:
            t["left"] = grasp
            t["grip_left"] = _CLOSED
        return t

    if not s.subtask_done[0]:
        t["left"] = np.array([s.left.position[0], s.left.position[1],
                              s.cup_start_z + LIFT_HEIGHT + 0.05])
        t["grip_left"] = _CLOSED
        t["torso_yaw"] = 0.15
        return t

    t["left"] = CUP_HOLD
    t["grip_left"] = _CLOSED

    if "scoop" not in s.attached and not s.subtask_done[2]:
        grasp = scoop + np.array([0, 0, 0.015])
        t["torso_yaw"] = -0.25
        t["grip_right"] = _OPEN
        if np.linalg.norm(s.right.position[:2] - grasp[:2]) > 0.02 and s.right.position[2] < grasp[2] + 0.08:
            t["right"] = scoop + np.array([0, 0, 0.10])
        elif np.linalg.norm(s.right.position - grasp) > _GRASP_TOL:
            t["right"] = grasp
        else:
            t["right"] = grasp
            t["grip_right"] = _CLOSED
        return t

    if not s.visited_bowl and "scoop" in s.attached:
        above = BOWL_POS + np.array([0, 0, 0.12])
        dip = BOWL_POS + np.array([0, 0, 0.03])
        t["torso_yaw"] = -0.25
        t["grip_right"] = _CLOSED
        t["right"] = dip if np.linalg.norm(s.right.position[:2] - BOWL_POS[:2]) <= 0.02 else above
        return t

    if not s.visited_pour and "scoop" in s.attached:
        above = BOWL_POS + np.array([0, 0, 0.12])
        t["torso_yaw"] = -0.05
        t["grip_right"] = _CLOSED
        if s.right.position[2] < above[2] - 0.015 and np.linalg.norm(s.right.position[:2] - BOWL_POS[:2]) < 0.05:
            t["right"] = above  # lift out of the bowl first
        else:
            hold_cup = s.objects["cup"]
            # the scoop rides below the hand; aim the scoop at the pour point
            offset = s.attached["scoop"][1]
            t["right"] = hold_cup + np.array([0, 0, POUR_ABOVE]) - offset
        return t

    if "scoop" in s.attached:  # subtask 2 done, set the scoop back
        rest = SCOOP_BASE + np.array([0, 0, 0.015]) - s.attached["scoop"][1]
        t["torso_yaw"] = -0.2
        if np.linalg.norm(s.right.position[:2] - rest[:2]) > 0.02:
            t["right"] = rest + np.array([0, 0, 0.10])
            t["grip_right"] = _CLOSED
        elif np.linalg.norm(s.right.position - rest) > _GRASP_TOL:
            t["right"] = rest
            t["grip_right"] = _CLOSED
        else:
            t["right"] = rest
            t["grip_right"] = _OPEN
        return t

    if "cup" in s.attached:
        place = SLOT_POS + np.array([0, 0, 0.015]) - s.attached["cup"][1]
        t["torso_yaw"] = 0.2
        t["right"] = RIGHT_HOME
        t["grip_right"] = _OPEN
        if np.linalg.norm(s.left.position[:2] - place[:2]) > 0.02:
            t["left"] = place + np.array([0, 0, 0.10])
            t["grip_left"] = _CLOSED
        elif np.linalg.norm(s.left.position - place) > _GRASP_TOL:
            t["left"] = place
            t["grip_left"] = _CLOSED
        else:
            t["left"] = place
            t["grip_left"] = _OPEN
        return t

    t["left"], t["right"] = LEFT_HOME, RIGHT_HOME
    t["grip_left"], t["grip_right"] = _OPEN, _OPEN
    t["torso_yaw"] = 0.0
    return t


def expert_action(s: SimState, instruction_id: int = 0) -> WholeBodyAction:
    """One speed-capped control step toward the current waypoint ladder."""
    t = _expert_targets(s, instruction_id)

    def pos_delta(current: np.ndarray, target) -> np.ndarray:
        if target is None:
            return np.zeros(3)
        err = np.asarray(target) - current
        n = np.linalg.norm(err)
        return err if n <= MAX_POS_STEP else err * (MAX_POS_STEP / n)

    pos = np.concatenate([
        np.zeros(3),
        pos_delta(s.left.position, t["left"]),
        pos_delta(s.right.position, t["right"])])

    yaw_target = geometry.rotation_about_axis(np.array([0, 0, 1.0]), t["torso_yaw"])
    torso_step = geometry.rotation_step_toward(s.torso.orientation, yaw_target, MAX_ROT_STEP)
    ident = geometry.IDENTITY_SIXD
    rot = np.concatenate([geometry.matrix_to_sixd(torso_step), ident, ident])

    def grip_cmd(current: float, target) -> float:
        if target is None:
            return current
        lo, hi = current - MAX_GRIP_STEP, current + MAX_GRIP_STEP
        return float(np.clip(target, lo, hi))

    grip = np.array([grip_cmd(s.grips[0], t["grip_left"]),
                     grip_cmd(s.grips[1], t["grip_right"])])
    return WholeBodyAction(pos, rot, np.clip(grip, 0.0, 1.0))


def scripted_expert(state: SimState, instruction_id: int = 0,
                    T: int = 32) -> ActionChunk:
    """Roll the expert controller T steps ahead on a copy of the state."""
    s = state.copy()
    rows = []
    for _ in range(T):
        a = expert_action(s, instruction_id)
        rows.append(a.vector)
        s = step(s, a)
    return ActionChunk(np.stack(rows))


# -- episode generation -----------------------------------------------------------


def run_expert_episode(rng: np.random.Generator, instruction_id: int = 0,
                       placement: str = "in_dist", max_seconds: float = 40.0,
                       extra_steps: int = 80) -> tuple[EpisodeRecord, SimState]:
    """Roll one expert episode and record frames/actions.

    Raises UnreachableGoal if the task does not complete inside the budget.
    """
    s = make_initial_state(rng, placement)
    feats, acts, bounds = [], [], [-1, -1, -1, -1]
    max_steps = int(max_seconds * CONTROL_HZ)
    done_countdown = None
    for k in range(max_steps):
        feats.append(observe(s, rng))
        a = expert_action(s, instruction_id)
        acts.append(a.vector)
        s = step(s, a)
        for j in range(4):
            if s.subtask_done[j] and bounds[j] < 0:
                bounds[j] = k
        finished = door_closed(s) if instruction_id == 1 else all(s.subtask_done)
        if finished and done_countdown is None:
            done_countdown = extra_steps  # keep recording the retreat home
        if done_countdown is not None:
            done_countdown -= 1
            if done_countdown <= 0:
                break
    else:
        raise UnreachableGoal(
            f"expert did not finish instruction {instruction_id} in {max_seconds}s "
            f"(subtasks={s.subtask_done})")
    rec = EpisodeRecord(np.asarray(feats, dtype=np.float32),
                        np.asarray(acts, dtype=np.float32),
                        instruction_id, bounds)
    return rec, s


def generate_dataset(n_episodes: int, seed: int = 0, placement: str = "in_dist",
                     door_fraction: float = 0.1) -> Dataset:
    """Expert demonstrations; a fraction of episodes runs the door task."""
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(n_episodes):
        instruction = 1 if rng.uniform() < door_fraction else 0
        rec, _ = run_expert_episode(rng, instruction, placement)
        episodes.append(rec)
    return Dataset(episodes, f_cam=F_CAM, control_hz=CONTROL_HZ)


# -- evaluation ----------------------------------------------------------------------


@dataclass
class TrialResult:
    subtasks: list
    steps: int
    wall_time: float


@dataclass
class EvalReport:
    trials: list
    placement: str

    def conditional(self) -> list[tuple[int, int]]:
        """(successes, reachable) per subtask; reachable means prior stages done."""
        out = []
        for k in range(4):
            reachable = [t for t in self.trials if all(t.subtasks[:k])]
            out.append((sum(1 for t in reachable if t.subtasks[k]), len(reachable)))
        return out

    def overall(self) -> tuple[int, int]:
        return sum(1 for t in self.trials if all(t.subtasks)), len(self.trials)


def format_rate(num: int, den: int) -> str:
    if den == 0:
        return f"-- (0/0)"
    pct = 100.0 * num / den
    text = f"{pct:.0f}%" if abs(pct - round(pct)) < 1e-9 else f"{pct:.1f}%"
    return f"{text} ({num}/{den})"


def evaluate(runner, n_trials: int = 20, placement: str = "in_dist",
             seed: int = 0, max_seconds: float = 30.0,
             instruction_id: int = 0) -> EvalReport:
    """Roll `runner` for n_trials and score conditional subtask success.

    The runner protocol is reset(trial_seed) then
    act(t, features, proprio, state) -> WholeBodyAction; honest policies
    ignore the state argument (it exists for oracle runners).
    """
    rng = np.random.default_rng(seed)
    trials = []
    for trial in range(n_trials):
        state = make_initial_state(rng, placement)
        obs_rng = np.random.default_rng(seed * 100003 + trial)
        runner.reset(int(rng.integers(0, 2 ** 31)))
        t0 = _time.perf_counter()
        for k in range(int(max_seconds * CONTROL_HZ)):
            feats = observe(state, obs_rng)
            action = runner.act(state.time, feats, proprio_vector(state), state)
            state = step(state, action)
            if all(state.subtask_done):
                break
        trials.append(TrialResult(list(state.subtask_done), k + 1,
                                  _time.perf_counter() - t0))
    return EvalReport(trials, placement)


class ExpertRunner:
    """Oracle runner: drives the simulator with the scripted controller."""

    def __init__(self, instruction_id: int = 0):
        self.instruction_id = instruction_id

    def reset(self, seed: int) -> None:
        pass

    def act(self, t, features, proprio, state) -> WholeBodyAction:
        return expert_action(state, self.instruction_id)


class RandomRunner:
    """Baseline: small random deltas and random gripper commands."""

    def __init__(self):
        self.rng = np.random.default_rng(0)

    def reset(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def act(self, t, features, proprio, state) -> WholeBodyAction:
        pos = self.rng.normal(0.0, 0.005, size=9)
        rot_blocks = []
        for _ in range(3):
            axis = self.rng.standard_normal(3)
            axis /= max(np.linalg.norm(axis), 1e-9)
            R = geometry.rotation_about_axis(axis, self.rng.normal(0.0, 0.02))
            rot_blocks.append(geometry.matrix_to_sixd(R))
        grip = self.rng.uniform(0.0, 1.0, size=2)
        return WholeBodyAction(pos, np.concatenate(rot_blocks), grip)


def evaluate_anomaly(runner, n_trials: int = 8, seed: int = 0,
                     remove_at: float = 2.0, settle: float = 6.0,
                     home_tol: float = 0.06) -> tuple[int, int]:
    """Optional metric: cup vanishes mid-episode; success is retreating home."""
    rng = np.random.default_rng(seed)
    ok = 0
    for trial in range(n_trials):
        state = make_initial_state(rng, "in_dist")
        obs_rng = np.random.default_rng(seed * 77003 + trial)
        runner.reset(int(rng.integers(0, 2 ** 31)))
        horizon = int((remove_at + settle) * CONTROL_HZ)
        for k in range(horizon):
            if abs(state.time - remove_at) < 0.5 / CONTROL_HZ:
                state = remove_cup(state)
            feats = observe(state, obs_rng)
            action = runner.act(state.time, feats, proprio_vector(state), state)
            state = step(state, action)
        near_home = (np.linalg.norm(state.left.position - LEFT_HOME) <= home_tol
                     and np.linalg.norm(state.right.position - RIGHT_HOME) <= home_tol)
        if near_home and not state.attached:
            ok += 1
    return ok, n_trials
