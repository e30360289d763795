"""Command-line front end.

Exit codes: 0 success, 1 runtime or check failure, 2 usage or load failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .control import DEFAULT_GAIN, Gains
from .dynamics import (
    NearSingularConfigurationError,
    body_kinetic_energies,
    body_inertias,
    evaluate_inertia,
    global_inertia,
    gravity_generalized_force,
    potential_energy,
)
from .kinematics import KinematicState, body_kinematics, fd_step
from .liegroup import body_twist_from_derivative
from .model import (
    BUILTIN_MODELS,
    CouplingSingularityError,
    ModelError,
    ModelGraph,
    builtin_document,
    load_model,
)
from .sim import (
    SWEEP_AMPLITUDE,
    SWEEP_Q0,
    REFERENCE_KINDS,
    SimConfig,
    SimulationAborted,
    read_trajectory_csv,
    reference_trajectory,
    rmse,
    simulate,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
COND_WARN = 1e6


class UsageError(Exception):
    pass


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return v


def _nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be a non-negative finite number, got {text}")
    return v


def _vector_arg(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError("values must be finite")
    return vals


def _load(args) -> tuple[ModelGraph, str, str]:
    """Model, its source document and a label; raises ``UsageError`` on failure."""
    if getattr(args, "builtin", None):
        text = builtin_document(args.builtin)
        label = f"builtin:{args.builtin}"
    elif getattr(args, "model", None):
        try:
            text = Path(args.model).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read model: {exc}") from None
        label = str(args.model)
    else:
        raise UsageError("give a model path or --builtin NAME")
    try:
        return load_model(text), text, label
    except ModelError as exc:
        raise UsageError(f"invalid model {label}: {exc}") from None


def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument("model", nargs="?", help="model JSON file")
    p.add_argument("--builtin", choices=sorted(BUILTIN_MODELS), help="use a bundled model")


# --- validate -------------------------------------------------------------


def _check_spd(m, rng, samples):
    worst = math.inf
    for _ in range(samples):
        q = m.sample_q(rng)
        worst = min(worst, float(np.linalg.eigvalsh(evaluate_inertia(m, q).gamma)[0]))
    return worst > 0, f"min eigenvalue {worst:.6g}"


def _check_skew(m, rng, samples):
    worst = 0.0
    for _ in range(samples):
        q, qd, x = m.sample_q(rng), rng.normal(size=m.n), rng.normal(size=m.n)
        terms = evaluate_inertia(m, q)
        Gd = terms.gamma_dot(qd)
        N = Gd - 2.0 * terms.coriolis(qd)
        scale = max(np.linalg.norm(Gd, 2), 1e-300) * float(x @ x)
        worst = max(worst, abs(float(x @ N @ x)) / scale)
    return worst <= 1e-8, f"max |x^T(Gamma_dot - 2C)x| / (|x|^2 |Gamma_dot|) = {worst:.3g}"


def _check_jacobian(m, rng, samples):
    worst = 0.0
    for _ in range(samples):
        q, qd = m.sample_q(rng), rng.normal(size=m.n)
        h = 1e-6
        plus = body_kinematics(m, q + h * qd)
        minus = body_kinematics(m, q - h * qd)
        base = body_kinematics(m, q)
        for (T, J), (Tp, _), (Tm, _) in zip(base, plus, minus):
            T_dot = (Tp.matrix() - Tm.matrix()) / (2.0 * h)
            V_fd = body_twist_from_derivative(T, T_dot, tol=1e-5)
            V = J @ qd
            worst = max(worst, float(np.linalg.norm(V - V_fd)) / max(1.0, float(np.linalg.norm(V))))
    return worst <= 1e-6, f"max relative twist error {worst:.3g}"


def _check_energy(m, rng, samples):
    worst = 0.0
    for _ in range(samples):
        s = KinematicState(m.sample_q(rng), rng.normal(size=m.n))
        G = evaluate_inertia(m, s).gamma
        T = 0.5 * float(s.q_dot @ G @ s.q_dot)
        worst = max(worst, abs(T - sum(body_kinetic_energies(m, s))) / max(1.0, abs(T)))
    return worst <= 1e-10, f"max relative kinetic-energy mismatch {worst:.3g}"


def _check_gravity(m, rng, samples):
    worst = 0.0
    for _ in range(samples):
        q = m.sample_q(rng)
        Q = gravity_generalized_force(m, q)
        grad = np.zeros(m.n)
        for j in range(m.n):
            h = fd_step(q[j])
            e = np.zeros(m.n)
            e[j] = h
            grad[j] = (potential_energy(m, q + e) - potential_energy(m, q - e)) / (2.0 * h)
        worst = max(worst, float(np.linalg.norm(Q + grad)) / max(1.0, float(np.linalg.norm(Q))))
    return worst <= 1e-6, f"max relative error vs -grad U {worst:.3g}"


VALIDATION_CHECKS = (
    ("inertia-spd", _check_spd),
    ("passivity-skew", _check_skew),
    ("jacobian-fd", _check_jacobian),
    ("kinetic-energy", _check_energy),
    ("gravity-potential", _check_gravity),
)


def _default_state_warning(m: ModelGraph) -> str | None:
    q = m.default_q()
    try:
        eig = np.linalg.eigvalsh(global_inertia(m, q))
    except CouplingSingularityError as exc:
        return f"default state is singular: {exc}"
    if eig[0] <= 0:
        return f"inertia at default state is not positive definite (min eigenvalue {eig[0]:.3g})"
    cond = eig[-1] / eig[0]
    if cond > COND_WARN:
        return f"inertia at default state is near-singular (condition number {cond:.3g})"
    return None


def cmd_validate(args) -> int:
    m, _, label = _load(args)
    rng = np.random.default_rng(args.seed)
    print(f"model {label}: {len(m.bodies)} bodies, {m.n} coordinates")
    warning = _default_state_warning(m)
    if warning:
        print(f"WARN default-state-spd: {warning}")
    ok = True
    for name, check in VALIDATION_CHECKS:
        try:
            passed, detail = check(m, rng, args.samples)
        except (CouplingSingularityError, NearSingularConfigurationError, ArithmeticError, ValueError) as exc:
            passed, detail = False, f"error: {exc}"
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_FAIL


# --- simulate -------------------------------------------------------------

SIM_DEFAULTS = {
    "dt": 1e-3,
    "duration": 10.0,
    "kp": DEFAULT_GAIN,
    "kv": DEFAULT_GAIN,
    "reference": "sweep",
    "reference_q0": list(SWEEP_Q0),
    "reference_amplitude": list(SWEEP_AMPLITUDE),
    "initial_offset": 0.0,
    "gravity": True,
    "passive": False,
}


def _resolve_sim_params(args, m: ModelGraph) -> dict:
    params = dict(SIM_DEFAULTS)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load config {args.config}: {exc}") from None
        if not isinstance(user, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(user) - set(SIM_DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        params.update(user)
    for key in ("dt", "duration", "kp", "kv", "initial_offset"):
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    if args.no_gravity:
        params["gravity"] = False
    # Scalar gains apply to every coordinate; store the expanded form so the
    # hash does not depend on how they were written.
    for key in ("kp", "kv", "initial_offset"):
        v = params[key]
        vec = [float(v)] * m.n if np.isscalar(v) else [float(x) for x in v]
        if len(vec) != m.n:
            raise UsageError(f"{key} needs {m.n} entries, got {len(vec)}")
        params[key] = vec
    for key in ("dt", "duration"):
        try:
            params[key] = float(params[key])
        except (TypeError, ValueError):
            raise UsageError(f"{key} must be a number") from None
    if not params["dt"] > 0:
        raise UsageError("dt must be positive")
    if not params["duration"] >= params["dt"]:
        raise UsageError("duration must be at least dt")
    if params["reference"] not in REFERENCE_KINDS:
        raise UsageError(f"reference must be one of {REFERENCE_KINDS}")
    params["reference_q0"] = [float(x) for x in params["reference_q0"]]
    params["reference_amplitude"] = [float(x) for x in params["reference_amplitude"]]
    params["gravity"] = bool(params["gravity"])
    params["passive"] = bool(params["passive"])
    return params


def config_hash(model_text: str, params: dict) -> str:
    doc = {"model_sha256": hashlib.sha256(model_text.encode("utf-8")).hexdigest(), "params": params}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _sim_config(m: ModelGraph, params: dict) -> SimConfig:
    try:
        ref = reference_trajectory(
            params["reference"], params["duration"], m,
            q0=params["reference_q0"], amplitude=params["reference_amplitude"],
        )
        gains = None if params["passive"] else Gains(params["kp"], params["kv"])
        return SimConfig(
            dt=params["dt"],
            duration=params["duration"],
            gains=gains,
            reference=ref,
            initial_offset=np.array(params["initial_offset"]),
            gravity=params["gravity"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _output_dir(args) -> Path:
    out = args.output_dir or os.environ.get("IP_OUTPUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_simulate(args) -> int:
    m, text, label = _load(args)
    params = _resolve_sim_params(args, m)
    cfg = _sim_config(m, params)
    out = _output_dir(args)
    manifest = {
        "model": label,
        "params": params,
        "config_hash": config_hash(text, params),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": {"trajectory": "trajectory.csv", "rmse_json": "rmse.json", "rmse_text": "rmse.txt"},
    }
    status = EXIT_OK
    try:
        traj = simulate(m, cfg)
    except SimulationAborted as exc:
        traj = exc.trajectory
        manifest["aborted"] = {"message": str(exc), "last_good_time": exc.t_last}
        print(f"simulation aborted: {exc}", file=sys.stderr)
        status = EXIT_FAIL
    traj.to_csv(out / "trajectory.csv")
    if len(traj):
        report = rmse(traj)
        (out / "rmse.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / "rmse.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if status == EXIT_OK:
        print(report.to_text(), end="")
        print(f"wrote {out / 'trajectory.csv'}")
    return status


# --- dump -----------------------------------------------------------------


def _state_from_args(args, m: ModelGraph) -> KinematicState:
    q, qd = args.q, args.qd
    if args.state:
        try:
            doc = json.loads(Path(args.state).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load state {args.state}: {exc}") from None
        q = doc.get("q", q)
        qd = doc.get("q_dot", qd)
    q = m.default_q() if q is None else np.asarray(q, dtype=float)
    qd = np.zeros(m.n) if qd is None else np.asarray(qd, dtype=float)
    if q.shape != (m.n,) or qd.shape != (m.n,):
        raise UsageError(f"state needs {m.n} entries for q and q_dot")
    return KinematicState(q, qd)


def dump_quantities(m: ModelGraph, s: KinematicState) -> dict:
    terms = evaluate_inertia(m, s)
    return {
        "coordinates": m.coordinate_names,
        "q": s.q.tolist(),
        "q_dot": s.q_dot.tolist(),
        "Gamma": terms.gamma.tolist(),
        "Gamma_dot": terms.gamma_dot(s.q_dot).tolist(),
        "C": terms.coriolis(s.q_dot).tolist(),
        "Q_gravity": gravity_generalized_force(m, s).tolist(),
        "Gamma_i": {b.name: G.tolist() for b, G in zip(m.bodies, body_inertias(m, s))},
    }


def _fmt(x: float, precision: int | None) -> str:
    return repr(float(x)) if precision is None else f"{x:.{precision}g}"


def _format_matrix(A, precision) -> list[str]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    cells = [[_fmt(v, precision) for v in row] for row in A]
    width = max(len(c) for row in cells for c in row)
    return ["  " + " ".join(c.rjust(width) for c in row) for row in cells]


def format_dump_text(d: dict, precision: int | None = None) -> str:
    lines = [f"coordinates: {' '.join(d['coordinates'])}"]
    for key in ("q", "q_dot"):
        lines.append(f"{key}:")
        lines += _format_matrix(d[key], precision)
    for key in ("Gamma", "Gamma_dot", "C"):
        lines.append(f"{key}:")
        lines += _format_matrix(d[key], precision)
    lines.append("Q_gravity:")
    lines += _format_matrix(d["Q_gravity"], precision)
    for name, G in d["Gamma_i"].items():
        lines.append(f"Gamma_i[{name}]:")
        lines += _format_matrix(G, precision)
    return "\n".join(lines) + "\n"


def cmd_dump(args) -> int:
    m, _, _ = _load(args)
    s = _state_from_args(args, m)
    try:
        d = dump_quantities(m, s)
    except CouplingSingularityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if args.format == "json":
        if args.precision is not None:
            d = json.loads(json.dumps(d), parse_float=lambda t: float(f"{float(t):.{args.precision}g}"))
        print(json.dumps(d, indent=2))
    else:
        print(format_dump_text(d, args.precision), end="")
    return EXIT_OK


# --- rmse -----------------------------------------------------------------


def cmd_rmse(args) -> int:
    try:
        traj = read_trajectory_csv(args.csv)
    except (OSError, ValueError, StopIteration) as exc:
        raise UsageError(f"cannot read trajectory {args.csv}: {exc}") from None
    if len(traj) == 0:
        print("error: trajectory is empty", file=sys.stderr)
        return EXIT_FAIL
    report = rmse(traj)
    print(report.to_json() if args.format == "json" else report.to_text(), end="\n" if args.format == "json" else "")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipsim", description="Inertia-partitioning multibody dynamics tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="run the invariant suite on a model")
    _add_model_args(p)
    p.add_argument("--samples", type=int, default=50, help="random states per check (default 50)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run a closed-loop simulation")
    _add_model_args(p)
    p.add_argument("--config", help="JSON file with simulation parameters")
    p.add_argument("--dt", type=_positive_float, help="step size [s]")
    p.add_argument("--duration", type=_positive_float, help="horizon [s]")
    p.add_argument("--kp", type=_nonneg_float, help="proportional gain for every coordinate")
    p.add_argument("--kv", type=_nonneg_float, help="derivative gain for every coordinate")
    p.add_argument("--initial-offset", type=float, help="offset added to the reference start state")
    p.add_argument("--no-gravity", action="store_true")
    p.add_argument("--output-dir", "-o", help="output directory (default: $IP_OUTPUT_DIR or .)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dump", help="print inertia, Coriolis and gravity terms at a state")
    _add_model_args(p)
    p.add_argument("--q", type=_vector_arg, help="coordinates, comma-separated")
    p.add_argument("--qd", type=_vector_arg, help="coordinate rates, comma-separated")
    p.add_argument("--state", help="JSON file with 'q' and 'q_dot'")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--precision", type=int, help="significant digits (default: full precision)")
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("rmse", help="recompute tracking metrics from a trajectory CSV")
    p.add_argument("csv")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_rmse)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
