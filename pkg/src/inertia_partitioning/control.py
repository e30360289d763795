"""Model-based tracking control per coordinate, with Lyapunov diagnostics.

Each coordinate ``j`` gets its own actuator force

    Q_j,a = (Gamma qdd_d + Gamma_dot qd_d)_j - 1/2 qd_d^T dGamma/dq_j qd_d
            - Q_j,e - kp_j e_j - kv_j edot_j

where ``Gamma`` and its derivatives are evaluated at the *actual* ``q`` (and
``Gamma_dot`` at the actual ``qd``), and ``Q_e`` collects gravity and any
known external wrenches. Stacking the per-coordinate laws gives the global
law exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .dynamics import (
    InertiaTerms,
    evaluate_inertia,
    external_generalized_force,
    forward_dynamics,
    global_inertia,
    gravity_generalized_force,
    inertia_partial,
)
from .kinematics import KinematicState
from .model import ModelGraph

DEFAULT_GAIN = 20.0


class ReferenceSample(NamedTuple):
    q: np.ndarray
    q_dot: np.ndarray
    q_ddot: np.ndarray


@dataclass(frozen=True, eq=False)
class Gains:
    """Diagonals of ``K_p`` and ``K_v``.

    Zero entries are accepted so a coordinate can run feedforward-only; the
    Lyapunov argument needs them strictly positive (see :attr:`positive`).
    """

    kp: np.ndarray
    kv: np.ndarray

    def __post_init__(self):
        kp = np.array(self.kp, dtype=float).reshape(-1)
        kv = np.array(self.kv, dtype=float).reshape(-1)
        if kp.shape != kv.shape:
            raise ValueError("kp and kv must have equal length")
        if not (np.all(np.isfinite(kp)) and np.all(np.isfinite(kv))):
            raise ValueError("gains must be finite")
        if np.any(kp < 0) or np.any(kv < 0):
            raise ValueError("gains must be non-negative")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kv", kv)

    @classmethod
    def uniform(cls, n: int, kp: float = DEFAULT_GAIN, kv: float = DEFAULT_GAIN) -> "Gains":
        return cls(np.full(n, float(kp)), np.full(n, float(kv)))

    @property
    def positive(self) -> bool:
        return bool(np.all(self.kp > 0) and np.all(self.kv > 0))


@dataclass(frozen=True, eq=False)
class TrackingError:
    e: np.ndarray
    e_dot: np.ndarray


def tracking_error(s: KinematicState, ref: ReferenceSample) -> TrackingError:
    return TrackingError(s.q - np.asarray(ref[0], dtype=float), s.q_dot - np.asarray(ref[1], dtype=float))


def known_generalized_force(m: ModelGraph, s, wrenches: Iterable = ()) -> np.ndarray:
    """All non-actuator generalized forces the controller knows about."""
    Q = gravity_generalized_force(m, s)
    wrenches = list(wrenches)
    if wrenches:
        Q = Q + external_generalized_force(m, s, wrenches)
    return Q


def _check(m: ModelGraph, g: Gains):
    if g.kp.shape != (m.n,):
        raise ValueError(f"gains have length {g.kp.shape[0]}, model has {m.n} coordinates")


def control_force(
    m: ModelGraph,
    s: KinematicState,
    ref: ReferenceSample,
    g: Gains,
    wrenches: Iterable = (),
    *,
    terms: InertiaTerms | None = None,
    Q_e: np.ndarray | None = None,
) -> np.ndarray:
    """Global actuator force ``Q_a``; ``terms``/``Q_e`` may be passed in to reuse work."""
    _check(m, g)
    terms = evaluate_inertia(m, s) if terms is None else terms
    Q_e = known_generalized_force(m, s, wrenches) if Q_e is None else Q_e
    q_d, qd_d, qdd_d = (np.asarray(r, dtype=float) for r in ref)
    err = tracking_error(s, ref)
    feedforward = (
        terms.gamma @ qdd_d
        + terms.gamma_dot(s.q_dot) @ qd_d
        - 0.5 * terms.quadratic_gradient(qd_d)
    )
    return feedforward - Q_e - g.kp * err.e - g.kv * err.e_dot


def control_force_single(
    m: ModelGraph,
    s: KinematicState,
    ref: ReferenceSample,
    g: Gains,
    j: int,
    wrenches: Iterable = (),
) -> float:
    """Actuator force of coordinate ``j`` alone, assembled from its own pieces."""
    _check(m, g)
    q_d, qd_d, qdd_d = (np.asarray(r, dtype=float) for r in ref)
    gamma_row = global_inertia(m, s)[j]
    gamma_dot_row = sum(inertia_partial(m, s, i)[j] * s.q_dot[i] for i in range(m.n))
    P_j = inertia_partial(m, s, j)
    model_part = (
        gamma_row @ qdd_d
        + gamma_dot_row @ qd_d
        - 0.5 * qd_d @ P_j @ qd_d
        - known_generalized_force(m, s, wrenches)[j]
    )
    correction = -g.kp[j] * (s.q[j] - q_d[j]) - g.kv[j] * (s.q_dot[j] - qd_d[j])
    return float(model_part + correction)


def lyapunov_value(
    m: ModelGraph, s: KinematicState, ref: ReferenceSample, g: Gains,
    gamma: np.ndarray | None = None,
) -> float:
    """``V = 1/2 edot^T Gamma edot + 1/2 e^T Kp e``."""
    err = tracking_error(s, ref)
    gamma = global_inertia(m, s) if gamma is None else gamma
    return 0.5 * float(err.e_dot @ gamma @ err.e_dot) + 0.5 * float(err.e @ (g.kp * err.e))


def lyapunov_rate(m: ModelGraph, s: KinematicState, ref: ReferenceSample, g: Gains) -> float:
    """Closed-form rate ``-edot^T Kv edot``."""
    err = tracking_error(s, ref)
    return -float(err.e_dot @ (g.kv * err.e_dot))


def lyapunov_rate_skew_form(m: ModelGraph, s: KinematicState, ref: ReferenceSample, g: Gains) -> float:
    """``-edot^T Kv edot - 1/2 edot^T (Gamma_dot - 2C) edot``, built from ``C``."""
    err = tracking_error(s, ref)
    terms = evaluate_inertia(m, s)
    N = terms.gamma_dot(s.q_dot) - 2.0 * terms.coriolis(s.q_dot)
    return -float(err.e_dot @ (g.kv * err.e_dot)) - 0.5 * float(err.e_dot @ N @ err.e_dot)


def lyapunov_rate_closed_loop(
    m: ModelGraph, s: KinematicState, ref: ReferenceSample, g: Gains, wrenches: Iterable = ()
) -> float:
    """``dV/dt`` from the actual closed-loop acceleration, with no structural shortcut.

    Equals :func:`lyapunov_rate` when the reference velocity is zero; while
    tracking a moving reference the feedforward's velocity terms leave a
    residual ``1/2 edot^T [grad(qd^T Gamma qd) - grad(qd_d^T Gamma qd_d)] -
    1/2 edot^T Gamma_dot edot``.
    """
    wrenches = list(wrenches)
    terms = evaluate_inertia(m, s)
    Q_e = known_generalized_force(m, s, wrenches)
    Q_a = control_force(m, s, ref, g, terms=terms, Q_e=Q_e)
    qdd = forward_dynamics(m, s, Q_a + Q_e, terms=terms)
    err = tracking_error(s, ref)
    edd = qdd - np.asarray(ref[2], dtype=float)
    return (
        float(err.e_dot @ terms.gamma @ edd)
        + 0.5 * float(err.e_dot @ terms.gamma_dot(s.q_dot) @ err.e_dot)
        + float(err.e_dot @ (g.kp * err.e))
    )
