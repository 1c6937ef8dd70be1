"""Parametric skeletons, the 6D rotation representation and forward kinematics.

Body frame convention: x forward, y left, z up.  A motion frame is the flat
vector ``[t (3), r (6), p_joints (3J)]`` where ``r`` holds the first two
columns of the root rotation matrix and ``p_joints`` per-joint axis-angles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: np.ndarray  # (J, 3) bone offset from the parent in the parent frame

    def __post_init__(self):
        J = len(self.names)
        if len(self.parents) != J or self.offsets.shape != (J, 3):
            raise ValueError("skeleton: names, parents and offsets disagree on J")
        if self.parents[0] != -1:
            raise ValueError("skeleton: joint 0 must be the root")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise ValueError(f"skeleton: parent of joint {j} must precede it")
            if np.linalg.norm(self.offsets[j]) <= 0:
                raise ValueError(f"skeleton: bone {self.names[j]} has zero length")

    @property
    def J(self) -> int:
        return len(self.names)

    @property
    def frame_width(self) -> int:
        return 9 + 3 * self.J

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def standing_height(self) -> float:
        """Pelvis height above the floor with straight legs (ankle on the floor)."""
        j = self.index("l_ankle")
        z = 0.0
        while j > 0:
            z -= self.offsets[j, 2]
            j = self.parents[j]
        return float(z)


def desk_skeleton() -> Skeleton:
    names = ("pelvis", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle", "head")
    parents = (-1, 0, 1, 2, 0, 4, 5, 0)
    offsets = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.1, -0.05], [0.0, 0.0, -0.42], [0.0, 0.0, -0.42],
        [0.0, -0.1, -0.05], [0.0, 0.0, -0.42], [0.0, 0.0, -0.42],
        [0.0, 0.0, 0.62],
    ])
    return Skeleton(names, parents, offsets)


def paper_skeleton() -> Skeleton:
    """22-joint body tree with the usual pelvis-rooted hierarchy."""
    names = ("pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
             "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
             "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist")
    parents = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)
    offsets = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.09, -0.07], [0.0, -0.09, -0.07], [-0.01, 0.0, 0.11],
        [0.0, 0.0, -0.38], [0.0, 0.0, -0.38], [0.01, 0.0, 0.13],
        [0.0, 0.0, -0.40], [0.0, 0.0, -0.40], [0.0, 0.0, 0.05],
        [0.12, 0.0, -0.04], [0.12, 0.0, -0.04], [0.0, 0.0, 0.21],
        [0.0, 0.08, 0.12], [0.0, -0.08, 0.12], [0.03, 0.0, 0.09],
        [0.0, 0.12, 0.03], [0.0, -0.12, 0.03], [0.0, 0.26, 0.0],
        [0.0, -0.26, 0.0], [0.0, 0.25, 0.0], [0.0, -0.25, 0.0],
    ])
    return Skeleton(names, parents, offsets)


def skeleton_for(joints: int) -> Skeleton:
    if joints == 8:
        return desk_skeleton()
    if joints == 22:
        return paper_skeleton()
    raise ValueError(f"no built-in skeleton with {joints} joints (choose 8 or 22)")


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, batched over leading axes."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta < 1e-12
    k = aa / np.where(small, 1.0, theta)
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([np.stack([zero, -kz, ky], -1),
                  np.stack([kz, zero, -kx], -1),
                  np.stack([-ky, kx, zero], -1)], -2)
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + s * K + (1 - c) * (K @ K)
    return np.where(small[..., None], eye, R)


def matrix_to_rot6d(R: np.ndarray) -> np.ndarray:
    """First two columns, concatenated column-wise."""
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_to_matrix(r6: np.ndarray, eps: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt orthonormalization; returns (R, degenerate flag)."""
    r6 = np.asarray(r6, dtype=np.float64)
    a1, a2 = r6[..., :3], r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    bad1 = n1 < eps
    b1 = np.where(bad1, np.array([1.0, 0.0, 0.0]), a1 / np.where(bad1, 1.0, n1))
    u2 = a2 - (b1 * a2).sum(-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    bad2 = n2 < eps * np.maximum(1.0, np.linalg.norm(a2, axis=-1, keepdims=True))
    # any unit vector orthogonal to b1 will do for a degenerate second column
    helper = np.where(np.abs(b1[..., :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    alt = helper - (b1 * helper).sum(-1, keepdims=True) * b1
    alt /= np.linalg.norm(alt, axis=-1, keepdims=True)
    b2 = np.where(bad2, alt, u2 / np.where(bad2, 1.0, n2))
    b3 = np.cross(b1, b2)
    R = np.stack([b1, b2, b3], axis=-1)
    return R, (bad1 | bad2)[..., 0]


def yaw_matrix(yaw) -> np.ndarray:
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1),
                     np.stack([z, z, o], -1)], -2)


def split_frame(frames: np.ndarray, J: int):
    frames = np.asarray(frames)
    if frames.shape[-1] != 9 + 3 * J:
        raise ValueError(f"frame width {frames.shape[-1]} != 9 + 3*{J}")
    t = frames[..., :3]
    r6 = frames[..., 3:9]
    p = frames[..., 9:].reshape(frames.shape[:-1] + (J, 3))
    return t, r6, p


def forward_kinematics(frames: np.ndarray, skeleton: Skeleton,
                       return_flags: bool = False):
    """World joint positions ``(..., J, 3)`` for frames ``(..., 9 + 3J)``.

    The root sits at ``t`` with orientation from ``r`` composed with its own
    axis-angle; each child is placed at ``x_parent + G_parent @ offset`` and
    rotates by ``G_parent @ R(p_j)``.
    """
    t, r6, p = split_frame(frames, skeleton.J)
    root, degenerate = rot6d_to_matrix(r6)
    local = axis_angle_to_matrix(p)
    G = [None] * skeleton.J
    X = [None] * skeleton.J
    G[0] = root @ local[..., 0, :, :]
    X[0] = np.asarray(t, dtype=np.float64)
    for j in range(1, skeleton.J):
        q = skeleton.parents[j]
        X[j] = X[q] + (G[q] @ skeleton.offsets[j])
        G[j] = G[q] @ local[..., j, :, :]
    joints = np.stack(X, axis=-2)
    return (joints, degenerate) if return_flags else joints
