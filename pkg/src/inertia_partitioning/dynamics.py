"""Inertia partitioning and the equations of motion in minimal coordinates.

Every body contributes a local generalized inertia ``Gamma_i = J^T M_i J``
computed from the Jacobian of its own body frame. The system matrix is their
sum, and all velocity-dependent terms come from coordinate derivatives of
that sum::

    Gamma qdd + Gamma_dot qd - 1/2 grad_q(qd^T Gamma qd) = Q
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kinematics import (
    KinematicState,
    batch_body_kinematics,
    body_kinematics,
    fd_step,
    frame_pose_and_jacobian,
)
from .liegroup import Transform, adjoint, inverse, skew
from .model import BodyModule, ModelGraph, SpatialInertiaParams


class NearSingularConfigurationError(ArithmeticError):
    def __init__(self, min_eig: float):
        super().__init__(
            f"generalized inertia is not positive definite (min eigenvalue ~ {min_eig:.3e})"
        )
        self.min_eig = min_eig


def spatial_inertia(p: SpatialInertiaParams) -> np.ndarray:
    """6x6 inertia about the body frame whose origin is ``p.com`` away from the COM."""
    m = p.mass
    S = skew(p.com)
    M = np.zeros((6, 6))
    M[:3, :3] = p.inertia + m * S @ S.T
    M[:3, 3:] = m * S
    M[3:, :3] = -m * S
    M[3:, 3:] = m * np.eye(3)
    return M


@lru_cache(maxsize=256)
def _body_inertia(body: BodyModule) -> np.ndarray:
    M = spatial_inertia(body.inertia)
    M.flags.writeable = False
    return M


def local_generalized_inertia(M: np.ndarray, J: np.ndarray) -> np.ndarray:
    return J.T @ M @ J


def _q(s) -> np.ndarray:
    return s.q if isinstance(s, KinematicState) else np.asarray(s, dtype=float).reshape(-1)


def _batch_body_inertias(m: ModelGraph, kin) -> list[np.ndarray]:
    return [np.swapaxes(J, 1, 2) @ _body_inertia(body) @ J for body, (_, _, J) in zip(m.bodies, kin)]


def _sum_in_order(m: ModelGraph, parts: list[np.ndarray], batch: int) -> np.ndarray:
    # Fixed body order keeps the sum reproducible bit for bit.
    total = np.zeros((batch, m.n, m.n))
    for G in parts:
        total = total + G
    return total


def body_inertias(m: ModelGraph, s) -> list[np.ndarray]:
    """Local generalized inertia of every body, in model order."""
    kin = batch_body_kinematics(m, _q(s)[None, :])
    return [G[0] for G in _batch_body_inertias(m, kin)]


def global_inertia(m: ModelGraph, s) -> np.ndarray:
    kin = batch_body_kinematics(m, _q(s)[None, :])
    return _sum_in_order(m, _batch_body_inertias(m, kin), 1)[0]


def _stencil(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = q.shape[0]
    h = np.array([fd_step(x) for x in q])
    Q = np.empty((2 * n, n))
    Q[:n] = q + np.diag(h)
    Q[n:] = q - np.diag(h)
    return Q, h


def _partials_from(G: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    D = (G[:n] - G[n:]) / (2.0 * h[:, None, None])
    return 0.5 * (D + np.swapaxes(D, 1, 2))


def inertia_partials(m: ModelGraph, s) -> np.ndarray:
    """Stack ``P`` with ``P[j] = dGamma/dq_j`` (central differences, symmetrized)."""
    return evaluate_inertia(m, s).partials


def inertia_partial(m: ModelGraph, s, j: int) -> np.ndarray:
    if not 0 <= j < m.n:
        raise IndexError(f"coordinate index {j} out of range")
    return inertia_partials(m, s)[j]


@dataclass(frozen=True, eq=False)
class InertiaTerms:
    """``Gamma(q)`` and its coordinate partials, evaluated once and reused."""

    gamma: np.ndarray
    partials: np.ndarray

    def gamma_dot(self, q_dot) -> np.ndarray:
        return np.tensordot(np.asarray(q_dot, dtype=float), self.partials, axes=1)

    def quadratic_gradient(self, v) -> np.ndarray:
        """``grad_q (v^T Gamma(q) v)`` with ``v`` held fixed."""
        v = np.asarray(v, dtype=float)
        return np.einsum("i,jik,k->j", v, self.partials, v)

    def coriolis(self, q_dot) -> np.ndarray:
        """Christoffel-symbol Coriolis matrix; ``Gamma_dot - 2C`` is skew."""
        qd = np.asarray(q_dot, dtype=float)
        P = self.partials
        return 0.5 * (self.gamma_dot(qd) + (P @ qd).T - np.einsum("kij,i->kj", P, qd))

    def bias(self, q_dot) -> np.ndarray:
        """``Gamma_dot qd - 1/2 grad_q(qd^T Gamma qd)``."""
        qd = np.asarray(q_dot, dtype=float)
        return self.gamma_dot(qd) @ qd - 0.5 * self.quadratic_gradient(qd)

    def solve(self, rhs) -> np.ndarray:
        try:
            factor = cho_factor(self.gamma, check_finite=False)
        except LinAlgError:
            raise NearSingularConfigurationError(float(np.linalg.eigvalsh(self.gamma)[0])) from None
        return cho_solve(factor, np.asarray(rhs, dtype=float), check_finite=False)


def _gravity_from(m: ModelGraph, kin, k: int = 0) -> np.ndarray:
    # Each weight is a pure force at the COM, resolved in COM-frame axes
    # (parallel to the body frame).
    Q = np.zeros(m.n)
    for body, (R_sb, _, J_b) in zip(m.bodies, kin):
        mass = body.inertia.mass
        if mass == 0.0:
            continue
        Jw, Jv = J_b[k, :3], J_b[k, 3:]
        J_c_linear = Jv - skew(body.inertia.com) @ Jw
        Q += J_c_linear.T @ (R_sb[k].T @ (mass * m.gravity))
    return Q


def _evaluate(m: ModelGraph, q: np.ndarray, with_gravity: bool):
    Q, h = _stencil(q)
    kin = batch_body_kinematics(m, np.vstack([q[None, :], Q]))
    total = _sum_in_order(m, _batch_body_inertias(m, kin), Q.shape[0] + 1)
    terms = InertiaTerms(total[0], _partials_from(total[1:], h))
    if not with_gravity:
        return terms, None
    grav = _gravity_from(m, kin) if np.any(m.gravity) else np.zeros(m.n)
    return terms, grav


def evaluate_inertia(m: ModelGraph, s) -> InertiaTerms:
    return _evaluate(m, _q(s), False)[0]


def evaluate_dynamics(m: ModelGraph, s) -> tuple[InertiaTerms, np.ndarray]:
    """``Gamma`` with partials plus the gravity force, from one kinematics pass."""
    return _evaluate(m, _q(s), True)


def gamma_dot(m: ModelGraph, s: KinematicState) -> np.ndarray:
    return evaluate_inertia(m, s).gamma_dot(s.q_dot)


def coriolis_matrix(m: ModelGraph, s: KinematicState) -> np.ndarray:
    return evaluate_inertia(m, s).coriolis(s.q_dot)


def kinetic_energy(m: ModelGraph, s: KinematicState) -> float:
    return 0.5 * float(s.q_dot @ global_inertia(m, s) @ s.q_dot)


def body_kinetic_energies(m: ModelGraph, s: KinematicState) -> list[float]:
    """``1/2 V^T M V`` per body, from body twists rather than ``Gamma``."""
    out = []
    for body, (_, J) in zip(m.bodies, body_kinematics(m, s.q)):
        V = J @ s.q_dot
        out.append(0.5 * float(V @ _body_inertia(body) @ V))
    return out


def _com_frame(body: BodyModule) -> Transform:
    return Transform(np.eye(3), body.inertia.com)


def gravity_generalized_force(m: ModelGraph, s) -> np.ndarray:
    """Weight of each body applied as a wrench at its center of mass."""
    if not np.any(m.gravity):
        return np.zeros(m.n)
    return _gravity_from(m, batch_body_kinematics(m, _q(s)[None, :]))


def gravity_generalized_force_wrench_form(m: ModelGraph, s) -> np.ndarray:
    """Same force assembled literally as ``sum J_Ci^T blockdiag(R_CiS, R_CiS) (0, m g)``."""
    Q = np.zeros(m.n)
    for body, (T_sb, J_b) in zip(m.bodies, body_kinematics(m, _q(s))):
        if body.inertia.mass == 0.0:
            continue
        T_bc = _com_frame(body)
        J_c = adjoint(inverse(T_bc)) @ J_b
        R_cs = (T_sb @ T_bc).rotation.T
        X = np.zeros((6, 6))
        X[:3, :3] = R_cs
        X[3:, 3:] = R_cs
        W = X @ np.concatenate([np.zeros(3), body.inertia.mass * m.gravity])
        Q += J_c.T @ W
    return Q


def potential_energy(m: ModelGraph, s) -> float:
    U = 0.0
    for body, (T_sb, _) in zip(m.bodies, body_kinematics(m, _q(s))):
        p_sc = T_sb.rotation @ body.inertia.com + T_sb.translation
        U -= body.inertia.mass * float(m.gravity @ p_sc)
    return U


def external_generalized_force(
    m: ModelGraph, s, wrenches: Iterable[tuple[str, np.ndarray]]
) -> np.ndarray:
    """Generalized force of wrenches, each expressed in its application frame."""
    Q = np.zeros(m.n)
    for frame, W in wrenches:
        _, J = frame_pose_and_jacobian(m, _q(s), frame)
        Q += J.T @ np.asarray(W, dtype=float)
    return Q


def inverse_dynamics(m: ModelGraph, s: KinematicState, q_ddot, terms: InertiaTerms | None = None) -> np.ndarray:
    terms = evaluate_inertia(m, s) if terms is None else terms
    return terms.gamma @ np.asarray(q_ddot, dtype=float) + terms.bias(s.q_dot)


def forward_dynamics(m: ModelGraph, s: KinematicState, Q_total, terms: InertiaTerms | None = None) -> np.ndarray:
    """Solve the equations of motion for ``qdd`` with a Cholesky factorization.

    Raises :class:`NearSingularConfigurationError` instead of regularizing.
    """
    terms = evaluate_inertia(m, s) if terms is None else terms
    return terms.solve(np.asarray(Q_total, dtype=float) - terms.bias(s.q_dot))
