"""Adding and removing coordinates without rebuilding a model.

Added coordinates enter a body's Jacobian as zero columns. Removed coordinates
are dropped with a selection matrix ``P`` (one 1 per row), either per body,
``J P^T``, or once on the assembled inertia, ``P Gamma P^T``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dynamics import _body_inertia, body_inertias, global_inertia
from .kinematics import body_kinematics
from .model import Coordinate, ModelGraph


def selection_matrix(keep: Sequence[int], n: int) -> np.ndarray:
    """``P`` keeping coordinates ``keep`` (in the given order) out of ``n``."""
    keep = [int(k) for k in keep]
    P = np.zeros((len(keep), n))
    for row, k in enumerate(keep):
        if not 0 <= k < n:
            raise ValueError(f"coordinate index {k} out of range for n={n}")
        P[row, k] = 1.0
    validate_selection(P)
    return P


def validate_selection(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2:
        raise ValueError("selection matrix must be 2-D")
    m, n = P.shape
    if m > n:
        raise ValueError(f"selection matrix has more rows ({m}) than columns ({n})")
    if not np.all((P == 0.0) | (P == 1.0)):
        raise ValueError("selection matrix entries must be 0 or 1")
    if not np.all(P.sum(axis=1) == 1.0):
        raise ValueError("each row of a selection matrix needs exactly one 1")
    if np.any(P.sum(axis=0) > 1.0):
        raise ValueError("a column of a selection matrix holds more than one 1")
    return P


def _conform(A: np.ndarray, P: np.ndarray, what: str):
    if A.shape[-1] != P.shape[1]:
        raise ValueError(f"{what} has {A.shape[-1]} columns, selection expects {P.shape[1]}")


def augment_jacobian(J, added: int) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if added < 0:
        raise ValueError("added must be non-negative")
    return np.concatenate([J, np.zeros(J.shape[:-1] + (added,))], axis=-1)


def reduce_jacobian(J, P) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    P = validate_selection(P)
    _conform(J, P, "Jacobian")
    return J @ P.T


def reduce_global_inertia(G, P) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    P = validate_selection(P)
    if G.shape != (P.shape[1], P.shape[1]):
        raise ValueError(f"inertia is {G.shape}, selection expects {P.shape[1]}x{P.shape[1]}")
    return P @ G @ P.T


def reduced_inertia_per_body(m: ModelGraph, s, P) -> np.ndarray:
    """``sum_i (J_i P^T)^T M_i (J_i P^T)``: reduce every body first, then add."""
    P = validate_selection(P)
    total = np.zeros((P.shape[0], P.shape[0]))
    for body, (_, J) in zip(m.bodies, body_kinematics(m, s)):
        Jr = reduce_jacobian(J, P)
        total = total + Jr.T @ _body_inertia(body) @ Jr
    return total


def reduced_inertia_global(m: ModelGraph, s, P) -> np.ndarray:
    return reduce_global_inertia(global_inertia(m, s), P)


def reduced_body_inertias(m: ModelGraph, s, P) -> list[np.ndarray]:
    P = validate_selection(P)
    return [P @ G @ P.T for G in body_inertias(m, s)]


def reduce_coordinates(coords: Sequence[Coordinate], P) -> tuple[Coordinate, ...]:
    """Coordinate metadata that survives the selection, in row order."""
    P = validate_selection(P)
    if P.shape[1] != len(coords):
        raise ValueError(f"selection expects {P.shape[1]} coordinates, got {len(coords)}")
    return tuple(coords[int(np.argmax(row))] for row in P)


def augment_coordinates(coords: Sequence[Coordinate], added: Sequence[Coordinate]) -> tuple[Coordinate, ...]:
    names = [c.name for c in coords]
    for c in added:
        if c.name in names:
            raise ValueError(f"duplicate coordinate name {c.name!r}")
        names.append(c.name)
    return tuple(coords) + tuple(added)
