"""Oracle motions: planned paths dressed with a procedural gait and terminal poses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .language import CommandSpec, render_text
from .planning import OccupancyGrid, PlanningError, plan_oracle_path
from .scene import ObjectInstance, SceneSpec, max_penetration
from .skeleton import Skeleton, desk_skeleton, forward_kinematics, matrix_to_rot6d, yaw_matrix

STRIDE = 1.2        # meters per gait cycle
HIP_SWING = 0.3     # radians
KNEE_FLEX = 0.6
STANDOFF = 0.35     # walking stops this far in front of the target box
COLLISION_TOL = 0.01


@dataclass
class MotionSample:
    sample_id: str
    scene_id: str
    command: CommandSpec
    target_id: int
    goal: np.ndarray     # (3,) target object center
    frames: np.ndarray   # (N, 9 + 3J) float32
    text: str = ""
    path: np.ndarray = field(init=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.goal = np.asarray(self.goal, dtype=np.float32)
        self.path = self.frames[:, :3].copy()
        if not self.text:
            self.text = render_text(self.command)

    @property
    def N(self) -> int:
        return len(self.frames)

    @property
    def action_index(self) -> int:
        return self.command.action_index

    @property
    def category_index(self) -> int:
        return self.command.category_index


def n_blend_frames(n: int) -> int:
    return int(math.ceil(0.25 * n))


def seat_point(obj: ObjectInstance) -> np.ndarray:
    """Pelvis position when seated: toward the front edge, on the seat surface."""
    shift = max(0.0, obj.half_extents[0] - 0.25)
    xy = np.asarray(obj.center[:2]) + obj.facing() * shift
    return np.array([xy[0], xy[1], obj.seat_height])


def lie_point(obj: ObjectInstance) -> np.ndarray:
    return np.array([obj.center[0], obj.center[1], obj.seat_height])


def rise_point(obj: ObjectInstance, skeleton: Skeleton) -> np.ndarray:
    """Standing pelvis position right in front of the object after standing up."""
    xy = np.asarray(obj.center[:2]) + obj.facing() * (obj.half_extents[0] + 0.04)
    return np.array([xy[0], xy[1], skeleton.standing_height])


def lie_matrix(obj: ObjectInstance) -> np.ndarray:
    """Body faces up with the head along the object's long axis."""
    long_axis = obj.yaw if obj.half_extents[0] >= obj.half_extents[1] else obj.yaw + np.pi / 2
    cb, sb = math.cos(long_axis), math.sin(long_axis)
    return np.array([[0.0, sb, cb], [0.0, -cb, sb], [1.0, 0.0, 0.0]])


def interaction_point(scene: SceneSpec, obj: ObjectInstance, action: str,
                      skeleton: Skeleton | None = None, grid: OccupancyGrid | None = None) -> np.ndarray:
    """Where the pelvis should end for ``action`` on ``obj``."""
    skeleton = skeleton or desk_skeleton()
    if action == "sit on":
        return seat_point(obj)
    if action == "lie on":
        return lie_point(obj)
    if action == "stand up from":
        return rise_point(obj, skeleton)
    grid = grid or OccupancyGrid(scene)
    xy = grid.center_of(grid.approach_cell(obj, STANDOFF))
    return np.array([xy[0], xy[1], skeleton.standing_height])


def _smoothstep(a):
    return a * a * (3 - 2 * a)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _headings(xy: np.ndarray, fallback: float) -> np.ndarray:
    n = len(xy)
    yaw = np.full(n, fallback)
    d = np.diff(xy, axis=0)
    moving = np.linalg.norm(d, axis=1) > 1e-6
    last = None
    for i in range(n - 1):
        if moving[i]:
            last = math.atan2(d[i, 1], d[i, 0])
        if last is not None:
            yaw[i + 1] = last
    first = np.flatnonzero(moving)
    if first.size:
        yaw[: first[0] + 1] = math.atan2(d[first[0], 1], d[first[0], 0])
    return np.unwrap(yaw)


def _gait(xy: np.ndarray, skeleton: Skeleton, phase0: float) -> np.ndarray:
    """Per-frame joint axis-angles (N, J, 3) for walking along ``xy``."""
    n = len(xy)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
    total = s[-1]
    env = np.clip(np.minimum(s, total - s) / 0.25, 0.0, 1.0) if total > 0 else np.zeros(n)
    phi = phase0 + 2 * np.pi * s / STRIDE
    p = np.zeros((n, skeleton.J, 3))
    for side, sign in (("l", 1.0), ("r", -1.0)):
        swing = sign * np.sin(phi)
        p[:, skeleton.index(f"{side}_hip"), 1] = -HIP_SWING * env * swing
        p[:, skeleton.index(f"{side}_knee"), 1] = KNEE_FLEX * env * np.clip(np.cos(phi + (sign < 0) * np.pi), 0, None)
    return p


def _seated_joints(skeleton: Skeleton) -> np.ndarray:
    p = np.zeros((skeleton.J, 3))
    for side in ("l", "r"):
        p[skeleton.index(f"{side}_hip"), 1] = -np.pi / 2
        p[skeleton.index(f"{side}_knee"), 1] = np.pi / 2
    return p


def _assemble(t, R, p) -> np.ndarray:
    n = len(t)
    return np.hstack([t, matrix_to_rot6d(R), p.reshape(n, -1)])


def _walk(scene, grid, start, end_xy, n, skeleton, face_xy, rng):
    h = skeleton.standing_height
    path = plan_oracle_path(scene, start, end_xy, n, height=h, grid=grid)
    xy = path[:, :2]
    to_target = math.atan2(face_xy[1] - xy[-1, 1], face_xy[0] - xy[-1, 0])
    yaw = _headings(xy, to_target)
    nb = n_blend_frames(n)
    w = np.zeros(n)
    if n > 1:
        w[n - nb:] = _smoothstep(np.linspace(0.0, 1.0, nb + 1)[1:])
    yaw = yaw + w * _wrap(to_target - yaw)
    p = _gait(xy, skeleton, float(rng.uniform(0, 2 * np.pi)))
    return path, yaw_matrix(yaw), p


def _blend(t0, R0, p0, t1, R1, p1, k):
    """k frames moving from (t0, R0, p0) to (t1, R1, p1), the last one exact."""
    a = _smoothstep(np.arange(1, k + 1) / k)
    t = t0 + a[:, None] * (t1 - t0)
    rots = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([R0, R1])))(a).as_matrix()
    rots[-1] = R1
    p = p0 + a[:, None, None] * (p1 - p0)
    return t, rots, p


def _start_point(grid, goal_xy, rng, min_dist=1.0, tries=100):
    best, best_d = None, -1.0
    for _ in range(tries):
        q = grid.random_free_point(rng)
        d = float(np.linalg.norm(q - goal_xy))
        if d >= min_dist:
            return q
        if d > best_d:
            best, best_d = q, d
    return best


def synthesize_oracle_motion(scene: SceneSpec, command: CommandSpec, n: int,
                             rng: np.random.Generator, skeleton: Skeleton | None = None,
                             grid: OccupancyGrid | None = None, sample_id: str = "sample",
                             max_retries: int = 20) -> MotionSample:
    """Ground-truth motion for a command; target drawn uniformly from ``target_ids``.

    Retries with new start points until no joint penetrates a non-target box
    by more than 1 cm.
    """
    if n < 1:
        raise ValueError("synthesize_oracle_motion: N must be >= 1")
    if not command.target_ids:
        raise ValueError("command has no target ids")
    skeleton = skeleton or desk_skeleton()
    grid = grid or OccupancyGrid(scene)
    target_id = int(command.target_ids[int(rng.integers(len(command.target_ids)))])
    obj = scene.object(target_id)
    for _ in range(max_retries):
        frames = _compose(scene, grid, command.action, obj, n, skeleton, rng).astype(np.float32)
        joints = forward_kinematics(frames, skeleton)
        if np.all(max_penetration(joints, scene, exclude=(target_id,)) <= COLLISION_TOL):
            return MotionSample(sample_id, scene.id, command, target_id,
                                np.asarray(obj.center), frames)
    raise PlanningError(f"no collision-free {command.action!r} motion for object {target_id} "
                        f"in scene {scene.id} after {max_retries} attempts")


def _compose(scene, grid, action, obj, n, skeleton, rng) -> np.ndarray:
    h = skeleton.standing_height
    nb = n_blend_frames(n)
    center = np.asarray(obj.center[:2])
    if action == "stand up from":
        seated_t = seat_point(obj)
        seated_R = yaw_matrix(obj.yaw)
        n_sit = n // 4
        k = min(nb, n - n_sit)
        t = np.repeat(seated_t[None], n, axis=0)
        R = np.repeat(seated_R[None], n, axis=0)
        p = np.repeat(_seated_joints(skeleton)[None], n, axis=0)
        if k > 0:
            end = rise_point(obj, skeleton)
            tb, Rb, pb = _blend(seated_t, seated_R, p[0], end, seated_R,
                                np.zeros((skeleton.J, 3)), k)
            t[n_sit:n_sit + k], R[n_sit:n_sit + k], p[n_sit:n_sit + k] = tb, Rb, pb
            t[n_sit + k:], R[n_sit + k:], p[n_sit + k:] = end, seated_R, 0.0
        return _assemble(t, R, p)

    approach = grid.center_of(grid.approach_cell(obj, STANDOFF))
    start = _start_point(grid, approach, rng)
    if action == "walk to":
        path, R, p = _walk(scene, grid, start, approach, n, skeleton, center, rng)
        return _assemble(path, R, p)
    if action == "sit on":
        end_t, end_R, end_p = seat_point(obj), yaw_matrix(obj.yaw), _seated_joints(skeleton)
    elif action == "lie on":
        end_t, end_R, end_p = lie_point(obj), lie_matrix(obj), np.zeros((skeleton.J, 3))
    else:
        raise ValueError(f"unknown action {action!r}")
    n_walk = n - nb
    if n_walk < 1:
        # too short to walk: settle in place at the terminal pose
        t = np.repeat(end_t[None], n, axis=0)
        return _assemble(t, np.repeat(end_R[None], n, axis=0), np.repeat(end_p[None], n, axis=0))
    path, R, p = _walk(scene, grid, start, approach, n_walk, skeleton, center, rng)
    tb, Rb, pb = _blend(path[-1], R[-1], p[-1], end_t, end_R, end_p, nb)
    return _assemble(np.vstack([path, tb]), np.concatenate([R, Rb]), np.concatenate([p, pb]))
