"""Deterministic planar manipulation sandbox.

A point end-effector moves in the unit square among disk objects. Actions
are (dx, dy, grip): the translation is norm-capped, the gripper attaches
the nearest object within reach, and a carried object rides along above
the plane (no contacts while carrying). A free end-effector pushes disks
kinematically by projecting them out of contact. Tasks: carry an object
into the goal region (pick), shove it there without gripping (push), or
place object 0 onto object 1 (stack).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import DomainError

WORKSPACE = 1.0
OBJECT_RADIUS = 0.05
ATTACH_RADIUS = 0.04
ACTION_CAP = 0.05
SUCCESS_TOL = 0.03
HORIZON = 100

TASKS = ("pick", "push", "stack")


@dataclass(frozen=True)
class SimState:
    ee: np.ndarray            # (2,) end-effector position
    grip: bool
    objects: np.ndarray       # (n, 2) disk centers
    attached: int             # object index or -1
    goal: np.ndarray          # (2,) goal region center
    task: str

    def __post_init__(self):
        object.__setattr__(self, "ee", np.asarray(self.ee, dtype=np.float64))
        object.__setattr__(self, "objects",
                           np.asarray(self.objects, dtype=np.float64))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))
        if self.task not in TASKS:
            raise DomainError(f"unknown task kind {self.task!r}")

    @property
    def robot_state(self) -> np.ndarray:
        return np.array([self.ee[0], self.ee[1], float(self.grip)])

    @property
    def goal_point(self) -> np.ndarray:
        """Where object 0 is supposed to end up."""
        if self.task == "stack":
            return self.objects[1]
        return self.goal


def _cap(delta: np.ndarray, limit: float = ACTION_CAP) -> np.ndarray:
    norm = float(np.hypot(delta[0], delta[1]))
    if norm > limit:
        return delta * (limit / norm)
    return delta


def step(state: SimState, action: np.ndarray) -> SimState:
    """Advance one tick; pure function of (state, action)."""
    action = np.asarray(action, dtype=np.float64)
    delta = _cap(action[:2].copy())
    grip = bool(action[2] > 0.5)
    ee = np.clip(state.ee + delta, 0.0, WORKSPACE)
    moved = ee - state.ee
    objects = state.objects.copy()
    attached = state.attached if grip else -1
    if attached >= 0:
        objects[attached] = np.clip(objects[attached] + moved, 0.0, WORKSPACE)
    elif grip:
        dists = np.linalg.norm(objects - ee, axis=1)
        near = int(np.argmin(dists))
        if dists[near] <= ATTACH_RADIUS:
            attached = near
    if attached < 0:
        # free end-effector shoves disks out of contact
        for i in range(objects.shape[0]):
            off = objects[i] - ee
            dist = float(np.hypot(off[0], off[1]))
            if dist < OBJECT_RADIUS:
                if dist < 1e-12:
                    off = np.array([OBJECT_RADIUS, 0.0])
                else:
                    off = off * (OBJECT_RADIUS / dist)
                objects[i] = np.clip(ee + off, 0.0, WORKSPACE)
    return replace(state, ee=ee, grip=grip, objects=objects, attached=attached)


def success(state: SimState) -> bool:
    return float(np.linalg.norm(state.objects[0] - state.goal_point)) <= SUCCESS_TOL


def make_task(kind: str, seed: int) -> SimState:
    """Seeded episode generator; layouts keep entities off the walls."""
    if kind not in TASKS:
        raise DomainError(f"unknown task kind {kind!r}")
    rng = np.random.default_rng([TASKS.index(kind), seed])

    def draw(min_gaps):
        # rejection-sample a point at least min_gap from each anchor
        while True:
            p = rng.uniform(0.2, 0.8, 2)
            if all(np.linalg.norm(p - a) >= g for a, g in min_gaps):
                return p

    target = rng.uniform(0.2, 0.8, 2)
    other = draw([(target, 0.18)])
    if kind == "stack":
        goal = other.copy()
    else:
        goal = draw([(target, 0.22), (other, 0.14)])
    ee = draw([(target, 0.12), (other, 0.12)])
    return SimState(ee=ee, grip=False, objects=np.stack([target, other]),
                    attached=-1, goal=goal, task=kind)


# ------------------------------------------------------------- experts


def _carry_action(state: SimState) -> np.ndarray:
    """Grab object 0 and ferry it to the goal point."""
    obj = state.objects[0]
    goal = state.goal_point
    if float(np.linalg.norm(obj - goal)) <= 0.6 * SUCCESS_TOL:
        return np.array([0.0, 0.0, float(state.grip)])
    if state.attached != 0:
        to_obj = obj - state.ee
        grip = 1.0 if float(np.linalg.norm(to_obj)) <= 0.12 else 0.0
        return np.array([*_cap(to_obj), grip])
    target_ee = goal + (state.ee - obj)
    return np.array([*_cap(target_ee - state.ee), 1.0])


def _push_action(state: SimState) -> np.ndarray:
    """Shove object 0 toward the goal from behind, never gripping."""
    obj = state.objects[0]
    goal = state.goal_point
    to_goal = goal - obj
    dist_goal = float(np.linalg.norm(to_goal))
    if dist_goal <= 0.6 * SUCCESS_TOL:
        return np.zeros(3)
    push_dir = to_goal / dist_goal
    rel = state.ee - obj
    dist_ee = float(np.linalg.norm(rel))
    behind = dist_ee > 1e-9 and float(rel @ -push_dir) / dist_ee > 0.95
    if behind and dist_ee <= OBJECT_RADIUS + 0.08:
        # march into the disk; the contact projection advances the object
        depth = min(0.45 * OBJECT_RADIUS, 0.5 * dist_goal)
        target_ee = obj - push_dir * (OBJECT_RADIUS - depth)
        return np.array([*_cap(target_ee - state.ee), 0.0])
    # orbit to the staging point behind the object
    staging = obj - push_dir * (OBJECT_RADIUS + 0.03)
    if dist_ee < OBJECT_RADIUS + 0.015:
        out = rel / max(dist_ee, 1e-9)
        return np.array([*_cap(out * 0.03), 0.0])
    to_staging = staging - state.ee
    direct = np.linalg.norm(to_staging)
    # detour tangentially when the straight path would clip the disk
    if direct > 1e-9 and dist_ee < OBJECT_RADIUS + 0.05:
        radial = rel / dist_ee
        tangent = np.array([-radial[1], radial[0]])
        if float(tangent @ to_staging) < 0:
            tangent = -tangent
        keep_out = radial * (OBJECT_RADIUS + 0.03 - dist_ee)
        return np.array([*_cap(tangent * ACTION_CAP + keep_out), 0.0])
    return np.array([*_cap(to_staging), 0.0])


def expert_action(state: SimState) -> np.ndarray:
    if state.task == "push":
        return _push_action(state)
    return _carry_action(state)


def scripted_expert(state: SimState, steps: int = HORIZON):
    """Run the controller forward; returns (actions (T, 3), states (T+1,))."""
    states = [state]
    actions = []
    for _ in range(steps):
        a = expert_action(states[-1])
        actions.append(a)
        states.append(step(states[-1], a))
        if success(states[-1]):
            break
    return np.array(actions), states
