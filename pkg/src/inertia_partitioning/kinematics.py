"""Forward kinematics and body-frame Jacobian propagation.

Each body's Jacobian is obtained from its parent's by the adjoint of the
child-from-parent transform plus the joint's own screw column::

    J_child = Ad(T_child,parent) @ J_parent + column

A coupled-revolute joint contributes ``axis * dzeta/ddelta`` in the column
of the coordinate that drives it, so closed chains need no extra machinery.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .liegroup import Transform, adjoint, inverse, rotation_about, skew
from .model import BodyModule, ModelGraph, coupling_eval


@dataclass(frozen=True, eq=False)
class KinematicState:
    q: np.ndarray
    q_dot: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        qd = np.array(self.q_dot, dtype=float).reshape(-1)
        if q.shape != qd.shape:
            raise ValueError("q and q_dot must have equal length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "q_dot", qd)

    @classmethod
    def at_rest(cls, q) -> "KinematicState":
        q = np.asarray(q, dtype=float)
        return cls(q, np.zeros_like(q))


@dataclass(frozen=True, eq=False)
class FramePoseSet:
    """Poses in ``S`` and body-frame Jacobians of every body and auxiliary frame."""

    poses: dict
    jacobians: dict

    def twist(self, frame: str, q_dot) -> np.ndarray:
        return self.jacobians[frame] @ np.asarray(q_dot, dtype=float)


def _positions(s) -> np.ndarray:
    if isinstance(s, KinematicState):
        return s.q
    return np.asarray(s, dtype=float).reshape(-1)


def joint_transform(body: BodyModule, q: np.ndarray) -> tuple[Transform, np.ndarray]:
    """Parent-attachment-to-body transform and the joint's 6-vector screw column."""
    jt = body.joint
    x = q[jt.coordinate]
    col = np.zeros(6)
    if jt.kind == "revolute":
        motion = Transform(rotation_about(jt.axis, x), np.zeros(3))
        col[:3] = jt.axis
    elif jt.kind == "prismatic":
        motion = Transform(np.eye(3), jt.axis * x)
        col[3:] = jt.axis
    else:
        zeta, dzeta = coupling_eval(jt.coupling, x)
        motion = Transform(rotation_about(jt.axis, zeta), np.zeros(3))
        col[:3] = jt.axis * dzeta
    return body.attachment @ motion, col


@dataclass(frozen=True, eq=False)
class _BodyData:
    parent: int
    kind: str
    coordinate: int
    axis: np.ndarray
    K: np.ndarray
    K2: np.ndarray
    R_att: np.ndarray
    p_att: np.ndarray
    S_att: np.ndarray
    coupling: object


@lru_cache(maxsize=64)
def _compile(m: ModelGraph) -> tuple[_BodyData, ...]:
    names = [b.name for b in m.bodies]
    out = []
    for b in m.bodies:
        K = skew(b.joint.axis)
        out.append(_BodyData(
            parent=-1 if b.parent is None else names.index(b.parent),
            kind=b.joint.kind,
            coordinate=b.joint.coordinate,
            axis=b.joint.axis,
            K=K,
            K2=K @ K,
            R_att=b.attachment.rotation,
            p_att=b.attachment.translation,
            S_att=skew(b.attachment.translation),
            coupling=b.joint.coupling,
        ))
    return tuple(out)


def batch_body_kinematics(m: ModelGraph, Q: np.ndarray):
    """Vectorized propagation over a batch of configurations ``Q`` of shape (B, n).

    Returns per body ``(R_SB, p_SB, J_B)`` with shapes (B,3,3), (B,3), (B,6,n).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    B, n = Q.shape
    if n != m.n:
        raise ValueError(f"expected {m.n} coordinates, got {n}")
    out = []
    for bd in _compile(m):
        x = Q[:, bd.coordinate]
        col = np.zeros(6)
        rate = None
        if bd.kind == "prismatic":
            R_pb = np.broadcast_to(bd.R_att, (B, 3, 3))
            p_pb = bd.p_att + x[:, None] * (bd.R_att @ bd.axis)
            S_pb = np.stack([skew(p) for p in p_pb])
            col[3:] = bd.axis
        else:
            if bd.kind == "coupled-revolute":
                zr = np.array([coupling_eval(bd.coupling, xi) for xi in x])
                angle, rate = zr[:, 0], zr[:, 1]
            else:
                angle = x
            sn = np.sin(angle)[:, None, None]
            cs = np.cos(angle)[:, None, None]
            R_j = np.eye(3) + sn * bd.K + (1.0 - cs) * bd.K2
            R_pb = bd.R_att @ R_j
            p_pb = np.broadcast_to(bd.p_att, (B, 3))
            S_pb = bd.S_att
            col[:3] = bd.axis
        if bd.parent < 0:
            R_sb, p_sb = R_pb, p_pb
            J = np.zeros((B, 6, n))
        else:
            R_sp, p_sp, J_p = out[bd.parent]
            R_sb = R_sp @ R_pb
            p_sb = np.einsum("bij,bj->bi", R_sp, p_pb) + p_sp
            Rt = np.swapaxes(R_pb, 1, 2)
            Jw, Jv = J_p[:, :3], J_p[:, 3:]
            J = np.concatenate([Rt @ Jw, Rt @ (Jv - S_pb @ Jw)], axis=1)
        if rate is None:
            J[:, :, bd.coordinate] += col
        else:
            J[:, :, bd.coordinate] += rate[:, None] * col
        out.append((np.ascontiguousarray(R_sb), np.ascontiguousarray(p_sb), J))
    return out


def body_kinematics(m: ModelGraph, q) -> list[tuple[Transform, np.ndarray]]:
    """``(T_S,Bi, J_Bi)`` for every body, in model order."""
    q = _positions(q)
    if q.shape != (m.n,):
        raise ValueError(f"expected {m.n} coordinates, got {q.shape[0]}")
    return [(Transform(R[0], p[0]), J[0]) for R, p, J in batch_body_kinematics(m, q[None, :])]


def forward_kinematics(m: ModelGraph, s) -> FramePoseSet:
    """Poses and Jacobians for all body frames and their auxiliary frames.

    ``s`` is a :class:`KinematicState` or a plain coordinate vector.
    """
    poses: dict[str, Transform] = {}
    jacs: dict[str, np.ndarray] = {}
    for body, (T_sb, J_b) in zip(m.bodies, body_kinematics(m, s)):
        poses[body.name] = T_sb
        jacs[body.name] = J_b
        for fname, T_bf in body.frames.items():
            poses[fname] = T_sb @ T_bf
            jacs[fname] = adjoint(inverse(T_bf)) @ J_b
    return FramePoseSet(poses, jacs)


def _locate(m: ModelGraph, frame: str) -> tuple[int, Transform | None]:
    for i, b in enumerate(m.bodies):
        if b.name == frame:
            return i, None
        if frame in b.frames:
            return i, b.frames[frame]
    raise KeyError(f"unknown frame {frame!r}")


def frame_pose_and_jacobian(m: ModelGraph, s, frame: str) -> tuple[Transform, np.ndarray]:
    i, T_bf = _locate(m, frame)
    T_sb, J_b = body_kinematics(m, s)[i]
    if T_bf is None:
        return T_sb, J_b
    return T_sb @ T_bf, adjoint(inverse(T_bf)) @ J_b


def frame_pose(m: ModelGraph, s, frame: str) -> Transform:
    return frame_pose_and_jacobian(m, s, frame)[0]


def frame_jacobian(m: ModelGraph, s, frame: str) -> np.ndarray:
    return frame_pose_and_jacobian(m, s, frame)[1]


def frame_twist(m: ModelGraph, s: KinematicState, frame: str) -> np.ndarray:
    """Body twist ``J_frame @ q_dot`` of ``frame``."""
    return frame_jacobian(m, s, frame) @ s.q_dot


def fd_step(x: float) -> float:
    """Central-difference step used for every coordinate derivative."""
    return 1e-6 * max(1.0, abs(x))


def jacobian_partial(m: ModelGraph, s, frame: str, j: int, h: float | None = None) -> np.ndarray:
    """``dJ_frame/dq_j`` by central differences."""
    q = _positions(s)
    if not 0 <= j < m.n:
        raise IndexError(f"coordinate index {j} out of range")
    h = fd_step(q[j]) if h is None else h
    qp, qm = q.copy(), q.copy()
    qp[j] += h
    qm[j] -= h
    return (frame_jacobian(m, qp, frame) - frame_jacobian(m, qm, frame)) / (2.0 * h)

