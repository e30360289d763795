"""SE(3) / se(3) primitives.

Twists are 6-vectors ordered ``(omega, v)`` (angular block first) and
wrenches are ordered ``(moment, force)`` so that ``twist @ wrench`` is power.
Both are plain ``numpy`` arrays of shape ``(6,)``; every 6x6 object in the
package follows the same angular-over-linear ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-8
SKEW_DEFECT_TOL = 1e-8


class InconsistentDerivativeError(ValueError):
    """``T^-1 dT/dt`` does not have a skew-symmetric rotational block."""


def skew(v) -> np.ndarray:
    """Matrix ``[v]`` with ``[v] @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def unskew(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def as_rotation(R, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    """Validate a user-supplied rotation and project it onto SO(3).

    Matrices off by more than ``tol`` (orthonormality or determinant) are
    rejected rather than silently repaired.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    defect = np.max(np.abs(R.T @ R - np.eye(3)))
    if defect > tol:
        raise ValueError(f"rotation not orthonormal (defect {defect:.3g} > {tol:g})")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")
    # Already orthonormal to rounding: keep the bits so save/load is idempotent.
    if defect <= 8.0 * np.finfo(float).eps:
        return R.copy()
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation by ``angle`` about the unit vector ``axis``."""
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid pose ``T_AB``: orientation of B in A and position of B's origin in A."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        p = _frozen(self.translation).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Transform":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_user(cls, rotation, translation, tol: float = ORTHONORMAL_TOL) -> "Transform":
        return cls(as_rotation(rotation, tol), np.asarray(translation, dtype=float))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Transform":
        return inverse(self)

    def __matmul__(self, other: "Transform") -> "Transform":
        return compose(self, other)

    def __repr__(self) -> str:
        return f"Transform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: Transform, b: Transform) -> Transform:
    """``T_AC = T_AB T_BC``."""
    return Transform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: Transform) -> Transform:
    Rt = t.rotation.T
    return Transform(Rt, -Rt @ t.translation)


def adjoint(t: Transform) -> np.ndarray:
    """6x6 ``Ad_T = [[R, 0], [[p] R, R]]`` mapping twists in B to twists in A."""
    R = t.rotation
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = R
    Ad[3:, 3:] = R
    Ad[3:, :3] = skew(t.translation) @ R
    return Ad


def twist(angular=(0.0, 0.0, 0.0), linear=(0.0, 0.0, 0.0)) -> np.ndarray:
    return np.concatenate([np.asarray(angular, dtype=float), np.asarray(linear, dtype=float)])


def wrench(moment=(0.0, 0.0, 0.0), force=(0.0, 0.0, 0.0)) -> np.ndarray:
    return np.concatenate([np.asarray(moment, dtype=float), np.asarray(force, dtype=float)])


def body_twist_from_derivative(t: Transform, t_dot, tol: float = SKEW_DEFECT_TOL) -> np.ndarray:
    """Body twist of a moving frame from its pose and the pose's time derivative.

    ``t_dot`` is the elementwise derivative of ``t.matrix()``. The rotational
    block of ``T^-1 dT`` must be skew-symmetric up to ``tol`` (scaled by its
    magnitude when that exceeds one); small defects are symmetrized away.
    """
    t_dot = np.asarray(t_dot, dtype=float)
    if t_dot.shape != (4, 4):
        raise ValueError("t_dot must be 4x4")
    X = inverse(t).matrix() @ t_dot
    W = X[:3, :3]
    defect = np.max(np.abs(W + W.T))
    if defect > tol * max(1.0, np.max(np.abs(W))):
        raise InconsistentDerivativeError(
            f"rotational block of T^-1 dT is not skew-symmetric (defect {defect:.3g})"
        )
    return twist(unskew(0.5 * (W - W.T)), X[:3, 3])
