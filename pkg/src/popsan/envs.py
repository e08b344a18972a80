"""Deterministic continuous-control tasks.

``point_reach``
    A 2-D double integrator that must be driven to a goal. Observations are
    the goal offset and the velocity.

``planar_pick``
    A kinematic 2-link planar arm with a binary gripper. The arm must reach
    an object on the floor, grasp it and hold it at a target height. Reward
    is staged: negative end-effector distance before the grasp, negative
    height error after it.

Both tasks are pure functions of ``(state, action)``; :class:`Env` wraps
them with the usual ``reset``/``step`` interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ContractError

SUCCESS_BONUS = 10.0


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_ranges: tuple[tuple[float, float], ...]
    action_ranges: tuple[tuple[float, float], ...]
    horizon: int
    dt: float

    def __post_init__(self):
        for lo, hi in (*self.obs_ranges, *self.action_ranges):
            if not lo < hi:
                raise ContractError(f"{self.name}: range [{lo}, {hi}] is empty")
        if self.horizon < 1:
            raise ContractError(f"{self.name}: horizon must be >= 1")

    @property
    def obs_dim(self) -> int:
        return len(self.obs_ranges)

    @property
    def act_dim(self) -> int:
        return len(self.action_ranges)

    @property
    def obs_bounds(self) -> np.ndarray:
        return np.array(self.obs_ranges, dtype=np.float64)

    @property
    def action_low(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.action_ranges])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([hi for _, hi in self.action_ranges])

    def clip_action(self, action) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=np.float64), self.action_low, self.action_high)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    success: bool


def _check_action(action, spec: EnvSpec) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (spec.act_dim,):
        raise ContractError(f"{spec.name} expects an action of shape ({spec.act_dim},), got {action.shape}")
    if not np.all(np.isfinite(action)):
        raise ContractError(f"{spec.name}: action contains non-finite values")
    return spec.clip_action(action)


# -- point reach ------------------------------------------------------------------

POINT_WORKSPACE = 1.0
POINT_MAX_SPEED = 1.0
POINT_SUCCESS_RADIUS = 0.05
POINT_SPAWN = 0.5

POINT_REACH_SPEC = EnvSpec(
    name="point_reach",
    obs_ranges=((-2.0, 2.0), (-2.0, 2.0), (-POINT_MAX_SPEED, POINT_MAX_SPEED), (-POINT_MAX_SPEED, POINT_MAX_SPEED)),
    action_ranges=((-1.0, 1.0), (-1.0, 1.0)),
    horizon=80,
    dt=0.05,
)


@dataclass
class PointReachState:
    pos: np.ndarray
    vel: np.ndarray
    goal: np.ndarray
    t: int = 0
    done: bool = False


def point_reach_obs(state: PointReachState, spec: EnvSpec = POINT_REACH_SPEC) -> np.ndarray:
    obs = np.concatenate([state.goal - state.pos, state.vel])
    return np.clip(obs, spec.obs_bounds[:, 0], spec.obs_bounds[:, 1])


def point_reach_reset(seed: int, spec: EnvSpec = POINT_REACH_SPEC) -> PointReachState:
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-POINT_SPAWN, POINT_SPAWN, size=2)
    goal = rng.uniform(-POINT_SPAWN, POINT_SPAWN, size=2)
    return PointReachState(pos=pos, vel=np.zeros(2), goal=goal)


def point_reach_step(
    state: PointReachState, action, spec: EnvSpec = POINT_REACH_SPEC
) -> tuple[PointReachState, StepResult]:
    """Integrate one step: velocity first (speed-capped), then position."""
    if state.done:
        return state, StepResult(point_reach_obs(state, spec), 0.0, True, False)
    accel = _check_action(action, spec)
    vel = state.vel + accel * spec.dt
    speed = float(np.linalg.norm(vel))
    if speed > POINT_MAX_SPEED:
        vel = vel * (POINT_MAX_SPEED / speed)
    pos = state.pos + vel * spec.dt
    outside = np.abs(pos) > POINT_WORKSPACE
    pos = np.clip(pos, -POINT_WORKSPACE, POINT_WORKSPACE)
    vel = np.where(outside, 0.0, vel)

    dist = float(np.linalg.norm(pos - state.goal))
    success = dist < POINT_SUCCESS_RADIUS
    reward = -dist + (SUCCESS_BONUS if success else 0.0)
    t = state.t + 1
    done = success or t >= spec.horizon
    new = PointReachState(pos=pos, vel=vel, goal=state.goal, t=t, done=done)
    return new, StepResult(point_reach_obs(new, spec), reward, done, success)


def point_reach_scripted(obs: np.ndarray) -> np.ndarray:
    """PD controller on the goal offset; solves every spawn well within the horizon."""
    offset, vel = obs[:2], obs[2:]
    return np.clip(6.0 * offset - 3.0 * vel, -1.0, 1.0)


# -- planar pick ------------------------------------------------------------------

LINK_LENGTHS = (0.5, 0.5)
MAX_JOINT_SPEED = 2.0
GRASP_RADIUS = 0.05
GRIPPER_CLOSED = 0.5
HOLD_TOLERANCE = 0.02
HOLD_STEPS = 10
OBJECT_X_RANGE = (0.3, 0.8)
TARGET_HEIGHT_RANGE = (0.3, 0.6)
INITIAL_JOINTS = (math.pi / 2, -math.pi / 2)

PLANAR_PICK_SPEC = EnvSpec(
    name="planar_pick",
    obs_ranges=(
        (-math.pi, math.pi),
        (-math.pi, math.pi),
        (-MAX_JOINT_SPEED, MAX_JOINT_SPEED),
        (-MAX_JOINT_SPEED, MAX_JOINT_SPEED),
        (-2.0, 2.0),
        (-2.0, 2.0),
        (-1.0, 1.0),
        (0.0, 1.0),
    ),
    action_ranges=((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)),
    horizon=200,
    dt=0.05,
)


@dataclass
class PlanarPickState:
    joints: np.ndarray
    joint_vel: np.ndarray
    obj: np.ndarray
    target_height: float
    grasped: bool = False
    hold: int = 0
    t: int = 0
    done: bool = False


def forward_kinematics(joints: np.ndarray) -> np.ndarray:
    l1, l2 = LINK_LENGTHS
    q1, q2 = joints
    return np.array([l1 * math.cos(q1) + l2 * math.cos(q1 + q2), l1 * math.sin(q1) + l2 * math.sin(q1 + q2)])


def inverse_kinematics(target: np.ndarray) -> np.ndarray:
    """Elbow-down solution; targets beyond reach are pulled onto the boundary."""
    l1, l2 = LINK_LENGTHS
    x, y = target
    r2 = x * x + y * y
    c2 = np.clip((r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2), -1.0, 1.0)
    q2 = -math.acos(c2)
    q1 = math.atan2(y, x) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    return np.array([q1, q2])


def planar_pick_obs(state: PlanarPickState, spec: EnvSpec = PLANAR_PICK_SPEC) -> np.ndarray:
    ee = forward_kinematics(state.joints)
    obs = np.concatenate(
        [state.joints, state.joint_vel, ee - state.obj, [state.obj[1] - state.target_height, float(state.grasped)]]
    )
    return np.clip(obs, spec.obs_bounds[:, 0], spec.obs_bounds[:, 1])


def planar_pick_reset(seed: int, spec: EnvSpec = PLANAR_PICK_SPEC) -> PlanarPickState:
    rng = np.random.default_rng(seed)
    obj = np.array([rng.uniform(*OBJECT_X_RANGE), 0.0])
    return PlanarPickState(
        joints=np.array(INITIAL_JOINTS),
        joint_vel=np.zeros(2),
        obj=obj,
        target_height=float(rng.uniform(*TARGET_HEIGHT_RANGE)),
    )


def planar_pick_step(
    state: PlanarPickState, action, spec: EnvSpec = PLANAR_PICK_SPEC
) -> tuple[PlanarPickState, StepResult]:
    if state.done:
        return state, StepResult(planar_pick_obs(state, spec), 0.0, True, False)
    action = _check_action(action, spec)
    joint_vel = action[:2] * MAX_JOINT_SPEED
    joints = np.clip(state.joints + joint_vel * spec.dt, -math.pi, math.pi)
    ee = forward_kinematics(joints)
    closed = action[2] > GRIPPER_CLOSED

    grasped = state.grasped and closed
    if not grasped and closed and np.linalg.norm(ee - state.obj) < GRASP_RADIUS:
        grasped = True
    if grasped:
        obj = np.array([np.clip(ee[0], -1.0, 1.0), np.clip(ee[1], 0.0, 1.0)])
    else:
        obj = np.array([state.obj[0], 0.0])  # released objects rest on the floor

    if grasped:
        err = abs(obj[1] - state.target_height)
        reward = -err
        hold = state.hold + 1 if err < HOLD_TOLERANCE else 0
    else:
        reward = -float(np.linalg.norm(ee - obj))
        hold = 0
    success = hold >= HOLD_STEPS
    if success:
        reward += SUCCESS_BONUS
    t = state.t + 1
    new = PlanarPickState(
        joints=joints,
        joint_vel=joint_vel,
        obj=obj,
        target_height=state.target_height,
        grasped=grasped,
        hold=hold,
        t=t,
        done=success or t >= spec.horizon,
    )
    return new, StepResult(planar_pick_obs(new, spec), float(reward), new.done, success)


def planar_pick_scripted(state: PlanarPickState) -> np.ndarray:
    """Joint-space P-control toward IK targets: object first, then the target height.

    Needs the full state (object and target positions), which the observation
    only carries as offsets.
    """
    ee = forward_kinematics(state.joints)
    if state.grasped:
        goal = np.array([state.obj[0], state.target_height])
        gripper = 1.0
    else:
        goal = state.obj
        gripper = 1.0 if np.linalg.norm(ee - state.obj) < 0.04 else -1.0
    q_goal = inverse_kinematics(goal)
    joint_cmd = np.clip(5.0 * (q_goal - state.joints) / MAX_JOINT_SPEED, -1.0, 1.0)
    return np.array([joint_cmd[0], joint_cmd[1], gripper])


# -- gym-style wrapper ------------------------------------------------------------


@dataclass
class _Task:
    spec: EnvSpec
    reset: callable
    step: callable
    obs: callable
    state_type: type


TASKS = {
    "point_reach": _Task(POINT_REACH_SPEC, point_reach_reset, point_reach_step, point_reach_obs, PointReachState),
    "planar_pick": _Task(PLANAR_PICK_SPEC, planar_pick_reset, planar_pick_step, planar_pick_obs, PlanarPickState),
}
ENV_NAMES = tuple(TASKS)


@dataclass
class Env:
    """Stateful wrapper holding the current task state."""

    name: str
    state: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.name not in TASKS:
            raise ContractError(f"unknown environment {self.name!r}; choose from {', '.join(ENV_NAMES)}")
        self._task = TASKS[self.name]

    @property
    def spec(self) -> EnvSpec:
        return self._task.spec

    def reset(self, seed: int) -> np.ndarray:
        self.state = self._task.reset(seed, self.spec)
        return self._task.obs(self.state, self.spec)

    def step(self, action) -> StepResult:
        if self.state is None:
            raise ContractError("call reset() before step()")
        self.state, result = self._task.step(self.state, action, self.spec)
        return result

    def state_tensors(self, prefix: str = "env") -> dict[str, np.ndarray]:
        """Flatten the task state for checkpointing."""
        out = {}
        for f in fields(self.state):
            out[f"{prefix}.{f.name}"] = np.asarray(getattr(self.state, f.name), dtype=np.float64)
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], prefix: str = "env") -> None:
        template = self._task.reset(0, self.spec)
        values = {}
        for f in fields(template):
            arr = tensors[f"{prefix}.{f.name}"]
            default = getattr(template, f.name)
            if isinstance(default, bool):
                values[f.name] = bool(arr)
            elif isinstance(default, int):
                values[f.name] = int(arr)
            elif isinstance(default, float):
                values[f.name] = float(arr)
            else:
                values[f.name] = arr.copy()
        self.state = replace(template, **values)


def make_env(name: str) -> Env:
    return Env(name)
