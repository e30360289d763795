"""Closed-loop simulation, reference trajectories and tracking metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, TextIO

import numpy as np

from .control import Gains, ReferenceSample, control_force, lyapunov_value
from .dynamics import NearSingularConfigurationError, evaluate_dynamics, external_generalized_force
from .kinematics import KinematicState, _locate, batch_body_kinematics
from .model import CouplingSingularityError, ModelGraph, coupling_eval

Reference = Callable[[float], ReferenceSample]

# Default joint-space sweep for the builtin manipulator.
SWEEP_Q0 = (0.0, 0.3, 0.05)
SWEEP_AMPLITUDE = (0.4, 0.2, 0.05)


class SimulationAborted(RuntimeError):
    def __init__(self, msg: str, trajectory: "Trajectory", t_last: float):
        super().__init__(f"{msg} (last good time t={t_last:.6g} s)")
        self.trajectory = trajectory
        self.t_last = t_last


@dataclass(frozen=True, eq=False)
class CosineReference:
    """``q_d(t) = q0 + A (1 - cos(2 pi t / T))``, smooth and at rest at t = 0."""

    q0: np.ndarray
    amplitude: np.ndarray
    period: float

    def __post_init__(self):
        object.__setattr__(self, "q0", np.array(self.q0, dtype=float))
        object.__setattr__(self, "amplitude", np.array(self.amplitude, dtype=float))
        if self.period <= 0:
            raise ValueError("period must be positive")

    def __call__(self, t: float) -> ReferenceSample:
        w = 2.0 * math.pi / self.period
        A = self.amplitude
        return ReferenceSample(
            self.q0 + A * (1.0 - math.cos(w * t)),
            A * w * math.sin(w * t),
            A * w * w * math.cos(w * t),
        )

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        ends = np.stack([self.q0, self.q0 + 2.0 * self.amplitude])
        return ends.min(axis=0), ends.max(axis=0)


@dataclass(frozen=True, eq=False)
class ConstantReference:
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.array(self.q, dtype=float))

    def __call__(self, t: float) -> ReferenceSample:
        z = np.zeros_like(self.q)
        return ReferenceSample(self.q.copy(), z, z.copy())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.q.copy(), self.q.copy()


REFERENCE_KINDS = ("sweep", "setpoint")


def reference_trajectory(
    kind: str = "sweep",
    duration: float = 10.0,
    model: ModelGraph | None = None,
    q0=SWEEP_Q0,
    amplitude=SWEEP_AMPLITUDE,
):
    """Build a C2 reference; with ``model`` given, check it stays coupling-feasible."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if kind == "sweep":
        ref = CosineReference(q0, amplitude, duration)
    elif kind == "setpoint":
        ref = ConstantReference(q0)
    else:
        raise ValueError(f"unknown reference kind {kind!r}; choose from {REFERENCE_KINDS}")
    if model is not None:
        lo, hi = ref.bounds()
        if lo.shape != (model.n,):
            raise ValueError(f"reference has {lo.shape[0]} coordinates, model has {model.n}")
        for j in range(model.n):
            c = model.coupling_for(j)
            if c is None:
                continue
            flo, fhi = c.feasible_interval()
            if not (flo < lo[j] and hi[j] < fhi):
                raise ValueError(
                    f"reference for {model.coordinates[j].name!r} spans [{lo[j]:g}, {hi[j]:g}], "
                    f"outside feasible interval [{flo:.6g}, {fhi:.6g}]"
                )
    return ref


def end_effector_position(m: ModelGraph, q, link_length: float = 2.0) -> np.ndarray:
    """Closed-form tool position of the 3-DoF manipulator, measured from the shoulder joint.

    ``zeta`` is obtained from the model's coupled joint driven by ``q[2]``.
    """
    phi, theta, delta = (float(x) for x in q)
    coupling = m.coupling_for(2)
    if coupling is None:
        raise ValueError("model has no coupled joint on coordinate 2")
    zeta, _ = coupling_eval(coupling, delta)
    reach = math.cos(theta) + math.cos(theta - zeta)
    return link_length * np.array([
        math.cos(phi) * reach,
        math.sin(phi) * reach,
        math.sin(theta) + math.sin(theta - zeta),
    ])


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Simulation settings.

    ``q0``/``q_dot0`` default to the reference at t = 0, shifted by
    ``initial_offset``. ``gains=None`` runs the plant with no actuation.
    """

    dt: float = 1e-3
    duration: float = 10.0
    gains: Gains | None = None
    reference: Reference | None = None
    q0: np.ndarray | None = None
    q_dot0: np.ndarray | None = None
    initial_offset: float | np.ndarray = 0.0
    gravity: bool = True
    wrenches: tuple = ()
    end_effector: str | None = None

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not (self.duration >= self.dt and math.isfinite(self.duration)):
            raise ValueError("duration must be at least dt")

    @property
    def steps(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9))


@dataclass(eq=False)
class Trajectory:
    """Uniformly sampled closed-loop history; one row per step including t = 0."""

    t: np.ndarray
    q: np.ndarray
    q_d: np.ndarray
    e: np.ndarray
    x: np.ndarray
    x_d: np.ndarray
    V: np.ndarray
    Q_a: np.ndarray
    q_dot: np.ndarray | None = None
    q_dot_d: np.ndarray | None = None
    coordinate_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def header(self) -> list[str]:
        n = self.n
        return (
            ["t"]
            + [f"q{i + 1}" for i in range(n)]
            + [f"qd{i + 1}" for i in range(n)]
            + [f"e{i + 1}" for i in range(n)]
            + ["x", "y", "z", "xd", "yd", "zd", "V"]
            + [f"Qa{i + 1}" for i in range(n)]
        )

    def rows(self) -> Iterable[np.ndarray]:
        for k in range(len(self.t)):
            yield np.concatenate([
                [self.t[k]], self.q[k], self.q_d[k], self.e[k],
                self.x[k], self.x_d[k], [self.V[k]], self.Q_a[k],
            ])

    def write_csv(self, fh: TextIO) -> None:
        fh.write(",".join(self.header()) + "\n")
        for row in self.rows():
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            self.write_csv(fh)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    n = sum(1 for h in header if h.startswith("Qa"))
    expected = Trajectory(np.zeros(0), np.zeros((0, n)), *([None] * 6)).header()
    if header != expected:
        raise ValueError(f"unexpected CSV header in {path}")
    if data.size == 0:
        data = data.reshape(0, len(header))
    col = {h: i for i, h in enumerate(header)}

    def block(prefix):
        return data[:, [col[f"{prefix}{i + 1}"] for i in range(n)]]

    return Trajectory(
        t=data[:, 0],
        q=block("q"),
        q_d=block("qd"),
        e=block("e"),
        x=data[:, [col["x"], col["y"], col["z"]]],
        x_d=data[:, [col["xd"], col["yd"], col["zd"]]],
        V=data[:, col["V"]],
        Q_a=block("Qa"),
    )


@dataclass(frozen=True)
class RmseReport:
    x: float
    y: float
    z: float
    per_coordinate: tuple[float, ...]
    max_abs: float
    samples: int

    def to_dict(self) -> dict:
        return {
            "rmse_x": self.x,
            "rmse_y": self.y,
            "rmse_z": self.z,
            "rmse_q": list(self.per_coordinate),
            "max_abs_error": self.max_abs,
            "samples": self.samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [
            f"rmse_x={self.x!r}",
            f"rmse_y={self.y!r}",
            f"rmse_z={self.z!r}",
        ]
        lines += [f"rmse_q{i + 1}={v!r}" for i, v in enumerate(self.per_coordinate)]
        lines += [f"max_abs_error={self.max_abs!r}", f"samples={self.samples}"]
        return "\n".join(lines) + "\n"


def rmse(traj: Trajectory) -> RmseReport:
    """Per-axis Cartesian RMSE plus per-coordinate RMSE of the tracking error."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    d = traj.x - traj.x_d
    # Contiguous columns keep the summation order independent of array layout.
    axis = np.array([np.sqrt(np.mean(np.ascontiguousarray(c) ** 2)) for c in d.T])
    per_q = np.array([np.sqrt(np.mean(np.ascontiguousarray(c) ** 2)) for c in traj.e.T])
    return RmseReport(
        float(axis[0]), float(axis[1]), float(axis[2]),
        tuple(float(v) for v in per_q),
        float(np.max(np.abs(d))),
        len(traj),
    )


def _end_effector_frame(m: ModelGraph, name: str | None):
    if name is None:
        last = m.bodies[-1]
        name = list(last.frames)[-1] if last.frames else last.name
    i, T_bf = _locate(m, name)
    return i, (np.zeros(3) if T_bf is None else T_bf.translation)


def simulate(m: ModelGraph, cfg: SimConfig) -> Trajectory:
    """Integrate the closed loop with classical fixed-step RK4 in ``(q, qd)``."""
    model = m if cfg.gravity else replace(m, gravity=np.zeros(3))
    n = model.n
    if cfg.gains is not None and cfg.gains.kp.shape != (n,):
        raise ValueError(f"gains have length {cfg.gains.kp.shape[0]}, model has {n} coordinates")
    ref = cfg.reference
    if ref is None:
        ref = ConstantReference(model.default_q()) if cfg.gains is None else \
            reference_trajectory("sweep", cfg.duration, model)
    r0 = ref(0.0)
    q = (np.array(r0.q, dtype=float) if cfg.q0 is None else np.array(cfg.q0, dtype=float)) + cfg.initial_offset
    qd = np.array(r0.q_dot, dtype=float) if cfg.q_dot0 is None else np.array(cfg.q_dot0, dtype=float)
    gains = cfg.gains
    V_gains = gains if gains is not None else Gains(np.zeros(n), np.zeros(n))
    wrenches = list(cfg.wrenches)
    ee_body, ee_offset = _end_effector_frame(model, cfg.end_effector)

    def accel(t, q, qd):
        s = KinematicState(q, qd)
        terms, Q_e = evaluate_dynamics(model, s)
        if wrenches:
            Q_e = Q_e + external_generalized_force(model, s, wrenches)
        r = ref(t)
        if gains is None:
            Q_a = np.zeros(n)
        else:
            Q_a = control_force(model, s, r, gains, terms=terms, Q_e=Q_e)
        qdd = terms.solve(Q_a + Q_e - terms.bias(qd))
        return qdd, Q_a, terms, r

    def ee_positions(q, q_d):
        R, p, _ = batch_body_kinematics(model, np.stack([q, q_d]))[ee_body]
        return R @ ee_offset + p

    N = cfg.steps
    dt = cfg.dt
    rows: dict[str, list] = {k: [] for k in ("t", "q", "qd", "q_d", "qd_d", "x", "x_d", "V", "Q_a")}

    def partial(msg, t_last):
        return SimulationAborted(msg, _assemble(rows, model), t_last)

    for k in range(N + 1):
        t = k * dt
        try:
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
                raise FloatingPointError("non-finite state")
            k1v, Q_a, terms, r = accel(t, q, qd)
            x = ee_positions(q, r.q)
        except (CouplingSingularityError, NearSingularConfigurationError, FloatingPointError) as exc:
            raise partial(str(exc), (k - 1) * dt if k else 0.0) from exc
        rows["t"].append(t)
        rows["q"].append(q.copy())
        rows["qd"].append(qd.copy())
        rows["q_d"].append(np.array(r.q, dtype=float))
        rows["qd_d"].append(np.array(r.q_dot, dtype=float))
        rows["x"].append(x[0])
        rows["x_d"].append(x[1])
        rows["V"].append(lyapunov_value(model, KinematicState(q, qd), r, V_gains, gamma=terms.gamma))
        rows["Q_a"].append(Q_a)
        if k == N:
            break
        try:
            k1x = qd
            k2x = qd + 0.5 * dt * k1v
            k2v = accel(t + 0.5 * dt, q + 0.5 * dt * k1x, k2x)[0]
            k3x = qd + 0.5 * dt * k2v
            k3v = accel(t + 0.5 * dt, q + 0.5 * dt * k2x, k3x)[0]
            k4x = qd + dt * k3v
            k4v = accel(t + dt, q + dt * k3x, k4x)[0]
        except (CouplingSingularityError, NearSingularConfigurationError, FloatingPointError) as exc:
            raise partial(str(exc), t) from exc
        q = q + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        qd = qd + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return _assemble(rows, model)


def _assemble(rows: dict, m: ModelGraph) -> Trajectory:
    n = m.n

    def arr(key, width):
        return np.array(rows[key], dtype=float).reshape(-1, width)

    q, q_d = arr("q", n), arr("q_d", n)
    return Trajectory(
        t=np.array(rows["t"], dtype=float),
        q=q,
        q_d=q_d,
        e=q - q_d,
        x=arr("x", 3),
        x_d=arr("x_d", 3),
        V=np.array(rows["V"], dtype=float),
        Q_a=arr("Q_a", n),
        q_dot=arr("qd", n),
        q_dot_d=arr("qd_d", n),
        coordinate_names=m.coordinate_names,
    )
