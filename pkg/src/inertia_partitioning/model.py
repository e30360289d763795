"""Immutable multibody model description and its JSON document format.

Closed kinematic chains appear only as coupling functions that map one
minimal coordinate to a dependent joint angle; the model has no notion of
loop-closure constraints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping, Sequence

import numpy as np

from .liegroup import Transform, as_rotation

JOINT_KINDS = ("revolute", "prismatic", "coupled-revolute")
COUPLING_KINDS = ("triangle-law-of-cosines",)
COUPLING_EPS = 1e-9
AXIS_TOL = 1e-12
SYMMETRY_TOL = 1e-12

# Sampling span for coordinates that carry no explicit range.
_DEFAULT_RANGES = {"rad": (-math.pi, math.pi), "m": (-0.5, 0.5)}


class ModelError(ValueError):
    """Base class for model loading problems."""


class ModelParseError(ModelError):
    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"parse error{where}: {msg}")
        self.line = line
        self.column = column


class ModelValidationError(ModelError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path
        self.reason = msg


class CouplingSingularityError(ValueError):
    """The coupled joint is at (or beyond) a point where dzeta/ddelta is unbounded."""

    def __init__(self, delta: float, interval: tuple[float, float]):
        lo, hi = interval
        super().__init__(
            f"coupling singularity: delta={delta:.17g} m outside feasible interval "
            f"[{lo:.17g}, {hi:.17g}] m"
        )
        self.delta = delta
        self.interval = interval


@dataclass(frozen=True)
class CouplingFunction:
    """Triangle closed chain: two sides ``L0`` and a cylinder of length ``l0 + delta``.

    The driven joint angle is the supplement of the apex angle, taken in
    ``(-pi, 0)``.
    """

    l0: float
    L0: float
    kind: str = "triangle-law-of-cosines"
    eps: float = COUPLING_EPS

    def argument(self, delta: float) -> float:
        return (delta + self.l0) ** 2 / (2.0 * self.L0**2) - 1.0

    def feasible_interval(self) -> tuple[float, float]:
        """Closed delta-interval where the cosine argument lies in ``[-1+eps, 1-eps]``."""
        lo = math.sqrt(2.0 * self.L0**2 * self.eps) - self.l0
        hi = math.sqrt(2.0 * self.L0**2 * (2.0 - self.eps)) - self.l0
        return lo, hi

    def __call__(self, delta: float) -> tuple[float, float]:
        return coupling_eval(self, delta)


def coupling_eval(c: CouplingFunction, delta: float) -> tuple[float, float]:
    """Return ``(zeta, dzeta/ddelta)`` for the coupled joint."""
    delta = float(delta)
    u = c.argument(delta)
    if not (delta + c.l0 > 0.0 and -1.0 + c.eps <= u <= 1.0 - c.eps):
        raise CouplingSingularityError(delta, c.feasible_interval())
    zeta = -math.acos(u)
    dzeta = (delta + c.l0) / (c.L0**2 * math.sqrt(1.0 - u * u))
    return zeta, dzeta


@dataclass(frozen=True, eq=False)
class SpatialInertiaParams:
    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        com = np.array(self.com, dtype=float).reshape(3)
        inertia = np.array(self.inertia, dtype=float).reshape(3, 3)
        com.flags.writeable = False
        inertia.flags.writeable = False
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "inertia", inertia)

    @classmethod
    def massless(cls) -> "SpatialInertiaParams":
        return cls(0.0, np.zeros(3), np.zeros((3, 3)))


@dataclass(frozen=True, eq=False)
class JointSpec:
    kind: str
    axis: np.ndarray
    coordinate: int
    coupling: CouplingFunction | None = None

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(3)
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)


@dataclass(frozen=True, eq=False)
class BodyModule:
    name: str
    parent: str | None
    attachment: Transform
    joint: JointSpec
    inertia: SpatialInertiaParams
    frames: Mapping[str, Transform] = field(default_factory=dict)


@dataclass(frozen=True)
class Coordinate:
    name: str
    unit: str = "rad"
    default: float = 0.0
    range: tuple[float, float] | None = None


@dataclass(frozen=True, eq=False)
class ModelGraph:
    """Bodies in topological order, rooted at the inertial frame ``S``."""

    bodies: tuple[BodyModule, ...]
    coordinates: tuple[Coordinate, ...]
    gravity: np.ndarray

    def __post_init__(self):
        g = np.array(self.gravity, dtype=float).reshape(3)
        g.flags.writeable = False
        object.__setattr__(self, "gravity", g)
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "coordinates", tuple(self.coordinates))

    @property
    def n(self) -> int:
        return len(self.coordinates)

    @property
    def coordinate_names(self) -> list[str]:
        return [c.name for c in self.coordinates]

    def body(self, name: str) -> BodyModule:
        for b in self.bodies:
            if b.name == name:
                return b
        raise KeyError(name)

    def body_index(self, name: str) -> int:
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)

    def frame_names(self) -> list[str]:
        names = []
        for b in self.bodies:
            names.append(b.name)
            names.extend(b.frames)
        return names

    def default_q(self) -> np.ndarray:
        return np.array([c.default for c in self.coordinates])

    def coupling_for(self, j: int) -> CouplingFunction | None:
        for b in self.bodies:
            if b.joint.coordinate == j and b.joint.coupling is not None:
                return b.joint.coupling
        return None

    def coordinate_range(self, j: int, margin: float = 0.05) -> tuple[float, float]:
        """Sampling interval for coordinate ``j``, kept clear of coupling singularities.

        ``margin`` is the fraction of the feasible coupling interval trimmed
        from each end.
        """
        c = self.coordinates[j]
        lo, hi = c.range if c.range is not None else _DEFAULT_RANGES.get(c.unit, (-1.0, 1.0))
        for b in self.bodies:
            if b.joint.coordinate == j and b.joint.coupling is not None:
                flo, fhi = b.joint.coupling.feasible_interval()
                pad = margin * (fhi - flo)
                lo, hi = max(lo, flo + pad), min(hi, fhi - pad)
        return lo, hi

    def sample_q(self, rng: np.random.Generator, margin: float = 0.05) -> np.ndarray:
        bounds = [self.coordinate_range(j, margin) for j in range(self.n)]
        return np.array([rng.uniform(lo, hi) for lo, hi in bounds])


# ---------------------------------------------------------------------------
# document loading


def _fail(path: str, msg: str):
    raise ModelValidationError(path, msg)


def _require(d: Mapping, key: str, path: str):
    if not isinstance(d, Mapping):
        _fail(path, "expected an object")
    if key not in d:
        _fail(f"{path}.{key}" if path else key, "missing required field")
    return d[key]


def _vector(value, path: str, size: int = 3) -> np.ndarray:
    try:
        v = np.array(value, dtype=float)
    except (TypeError, ValueError):
        _fail(path, f"expected {size} numbers")
    if v.shape != (size,) or not np.all(np.isfinite(v)):
        _fail(path, f"expected {size} finite numbers")
    return v


def _matrix3(value, path: str) -> np.ndarray:
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError):
        _fail(path, "expected a 3x3 array")
    if m.shape == (9,):
        m = m.reshape(3, 3)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        _fail(path, "expected a finite 3x3 array (nested or 9 row-major numbers)")
    return m


def _transform(value, path: str) -> Transform:
    if value is None:
        return Transform.identity()
    if not isinstance(value, Mapping):
        _fail(path, "expected an object with rotation/translation")
    R = _matrix3(value.get("rotation", np.eye(3)), f"{path}.rotation")
    p = _vector(value.get("translation", [0.0, 0.0, 0.0]), f"{path}.translation")
    try:
        R = as_rotation(R)
    except ValueError as exc:
        _fail(f"{path}.rotation", str(exc))
    return Transform(R, p)


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, "expected a number")
    if not math.isfinite(value):
        _fail(path, "expected a finite number")
    return float(value)


def _inertia(value, path: str) -> SpatialInertiaParams:
    if value is None:
        return SpatialInertiaParams.massless()
    mass = _number(_require(value, "mass", path), f"{path}.mass")
    if mass < 0:
        _fail(f"{path}.mass", "mass must be non-negative")
    com = _vector(value.get("com", [0.0, 0.0, 0.0]), f"{path}.com")
    inertia = _matrix3(value.get("inertia_matrix", np.zeros((3, 3))), f"{path}.inertia_matrix")
    ipath = f"{path}.inertia_matrix"
    if np.max(np.abs(inertia - inertia.T)) > SYMMETRY_TOL:
        _fail(ipath, "inertia matrix not symmetric")
    scale = max(1.0, float(np.max(np.abs(inertia))))
    eig = np.linalg.eigvalsh(inertia)
    if eig[0] < -SYMMETRY_TOL * scale:
        _fail(ipath, "inertia matrix has a negative eigenvalue")
    if mass > 0:
        a, b, c = eig
        tol = SYMMETRY_TOL * scale
        if a > b + c + tol or b > a + c + tol or c > a + b + tol:
            _fail(ipath, "principal moments violate the triangle inequality")
    return SpatialInertiaParams(mass, com, inertia)


def _coupling(value, path: str) -> CouplingFunction:
    kind = _require(value, "kind", path)
    if kind not in COUPLING_KINDS:
        _fail(f"{path}.kind", f"unknown coupling kind {kind!r}")
    l0 = _number(_require(value, "l0", path), f"{path}.l0")
    L0 = _number(_require(value, "L0", path), f"{path}.L0")
    if l0 <= 0:
        _fail(f"{path}.l0", "l0 must be positive")
    if L0 <= 0:
        _fail(f"{path}.L0", "L0 must be positive")
    return CouplingFunction(l0=l0, L0=L0, kind=kind)


def _coordinate_index(value, names: list[str], path: str) -> int:
    if isinstance(value, str):
        if value not in names:
            _fail(path, f"unknown coordinate {value!r}")
        return names.index(value)
    if isinstance(value, int) and not isinstance(value, bool):
        if not 0 <= value < len(names):
            _fail(path, f"coordinate index {value} out of range")
        return value
    _fail(path, "expected a coordinate name or index")


def _joint(value, names: list[str], path: str) -> JointSpec:
    kind = _require(value, "kind", path)
    if kind not in JOINT_KINDS:
        _fail(f"{path}.kind", f"unknown joint kind {kind!r}")
    axis = _vector(_require(value, "axis", path), f"{path}.axis")
    if abs(np.linalg.norm(axis) - 1.0) > AXIS_TOL:
        _fail(f"{path}.axis", "axis not unit length")
    coord = _coordinate_index(_require(value, "coordinate", path), names, f"{path}.coordinate")
    coupling = None
    if kind == "coupled-revolute":
        coupling = _coupling(_require(value, "coupling", path), f"{path}.coupling")
    elif value.get("coupling") is not None:
        _fail(f"{path}.coupling", f"{kind} joint cannot carry a coupling")
    return JointSpec(kind, axis, coord, coupling)


def _coordinates(value) -> list[Coordinate]:
    if not isinstance(value, list) or not value:
        _fail("coordinates", "expected a non-empty list")
    out = []
    for k, item in enumerate(value):
        path = f"coordinates[{k}]"
        if isinstance(item, str):
            item = {"name": item}
        name = _require(item, "name", path)
        if not isinstance(name, str) or not name:
            _fail(f"{path}.name", "expected a non-empty string")
        unit = item.get("unit", "rad")
        if unit not in ("rad", "m"):
            _fail(f"{path}.unit", "unit must be 'rad' or 'm'")
        default = _number(item.get("default", 0.0), f"{path}.default")
        rng = item.get("range")
        if rng is not None:
            lo, hi = _vector(rng, f"{path}.range", 2)
            if not lo < hi:
                _fail(f"{path}.range", "range must be increasing")
            rng = (float(lo), float(hi))
        out.append(Coordinate(name, unit, default, rng))
    names = [c.name for c in out]
    if len(set(names)) != len(names):
        _fail("coordinates", "duplicate coordinate names")
    return out


def model_from_dict(doc: Mapping[str, Any]) -> ModelGraph:
    """Validate a decoded model document and build the :class:`ModelGraph`."""
    if not isinstance(doc, Mapping):
        _fail("$", "top level must be an object")
    gravity = _vector(doc.get("gravity", [0.0, 0.0, -9.81]), "gravity")
    coords = _coordinates(_require(doc, "coordinates", ""))
    names = [c.name for c in coords]
    raw_bodies = _require(doc, "bodies", "")
    if not isinstance(raw_bodies, list) or not raw_bodies:
        _fail("bodies", "model needs at least one body")

    bodies: list[BodyModule] = []
    seen_frames: set[str] = set()
    for k, rb in enumerate(raw_bodies):
        path = f"bodies[{k}]"
        name = _require(rb, "name", path)
        if not isinstance(name, str) or not name:
            _fail(f"{path}.name", "expected a non-empty string")
        if name in seen_frames:
            _fail(f"{path}.name", f"duplicate body or frame name {name!r}")
        seen_frames.add(name)
        parent = rb.get("parent")
        if parent in ("world", "S", ""):
            parent = None
        if parent is not None and parent not in {b.name for b in bodies}:
            _fail(f"{path}.parent", f"parent {parent!r} must be a previously listed body")
        attachment = _transform(rb.get("attachment_transform"), f"{path}.attachment_transform")
        joint = _joint(_require(rb, "joint", path), names, f"{path}.joint")
        inertia = _inertia(rb.get("inertia"), f"{path}.inertia")
        frames = {}
        raw_frames = rb.get("frames", {}) or {}
        if not isinstance(raw_frames, Mapping):
            _fail(f"{path}.frames", "expected an object mapping name to transform")
        for fname, ft in raw_frames.items():
            if fname in seen_frames:
                _fail(f"{path}.frames.{fname}", f"duplicate frame name {fname!r}")
            seen_frames.add(fname)
            frames[fname] = _transform(ft, f"{path}.frames.{fname}")
        bodies.append(BodyModule(name, parent, attachment, joint, inertia, frames))

    driven = {b.joint.coordinate for b in bodies}
    for j, c in enumerate(coords):
        if j not in driven:
            _fail(f"coordinates[{j}]", f"coordinate {c.name!r} drives no joint")
        cp = next((b.joint.coupling for b in bodies
                   if b.joint.coordinate == j and b.joint.coupling is not None), None)
        if cp is not None:
            lo, hi = cp.feasible_interval()
            if not lo < c.default < hi:
                _fail(f"coordinates[{j}].default",
                      f"default {c.default:g} outside feasible coupling interval [{lo:.6g}, {hi:.6g}]")
    return ModelGraph(tuple(bodies), tuple(coords), gravity)


def load_model(document: str) -> ModelGraph:
    """Parse and validate a JSON model document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelParseError(exc.msg, exc.lineno, exc.colno) from None
    return model_from_dict(doc)


def load_model_file(path) -> ModelGraph:
    with open(path, encoding="utf-8") as fh:
        return load_model(fh.read())


def _transform_to_dict(t: Transform) -> dict:
    return {"rotation": t.rotation.tolist(), "translation": t.translation.tolist()}


def model_to_dict(m: ModelGraph) -> dict:
    bodies = []
    for b in m.bodies:
        joint: dict[str, Any] = {
            "kind": b.joint.kind,
            "axis": b.joint.axis.tolist(),
            "coordinate": m.coordinates[b.joint.coordinate].name,
        }
        if b.joint.coupling is not None:
            c = b.joint.coupling
            joint["coupling"] = {"kind": c.kind, "l0": c.l0, "L0": c.L0}
        bodies.append({
            "name": b.name,
            "parent": b.parent,
            "attachment_transform": _transform_to_dict(b.attachment),
            "joint": joint,
            "inertia": {
                "mass": b.inertia.mass,
                "com": b.inertia.com.tolist(),
                "inertia_matrix": b.inertia.inertia.tolist(),
            },
            "frames": {k: _transform_to_dict(v) for k, v in b.frames.items()},
        })
    coords = []
    for c in m.coordinates:
        rec: dict[str, Any] = {"name": c.name, "unit": c.unit, "default": c.default}
        if c.range is not None:
            rec["range"] = list(c.range)
        coords.append(rec)
    return {"gravity": m.gravity.tolist(), "coordinates": coords, "bodies": bodies}


def dump_model(m: ModelGraph) -> str:
    return json.dumps(model_to_dict(m), indent=2)


BUILTIN_MODELS = {"manipulator3dof": "manipulator3dof.json"}


def builtin_document(name: str = "manipulator3dof") -> str:
    if name not in BUILTIN_MODELS:
        raise KeyError(f"unknown builtin model {name!r}; choose from {sorted(BUILTIN_MODELS)}")
    return resources.files(__package__).joinpath("data", BUILTIN_MODELS[name]).read_text("utf-8")


def builtin_manipulator_3dof() -> ModelGraph:
    """The 3-DoF series-parallel manipulator with coordinates ``(phi, theta, delta)``.

    Frame orientations follow the revolute-about-local-z convention: the
    shoulder frame ``F1`` is the base frame turned +90 deg about x so that
    ``theta`` raises the first link, and the elbow attachment is turned
    180 deg about x so that a positive ``zeta`` about ``z_B3`` lowers the
    second link. With this layout the ``F3`` origin measured from ``F1``
    reproduces the closed-form end-effector position exactly.
    """
    return load_model(builtin_document("manipulator3dof"))


def builtin_coupling() -> CouplingFunction:
    return builtin_manipulator_3dof().bodies[2].joint.coupling


def as_vector(values: Sequence[float], n: int, name: str = "vector") -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v
