import numpy as np
import pytest

from inertia_partitioning.dynamics import (
    NearSingularConfigurationError,
    body_inertias,
    body_kinetic_energies,
    coriolis_matrix,
    evaluate_dynamics,
    evaluate_inertia,
    external_generalized_force,
    forward_dynamics,
    gamma_dot,
    global_inertia,
    gravity_generalized_force,
    gravity_generalized_force_wrench_form,
    inertia_partial,
    inertia_partials,
    inverse_dynamics,
    kinetic_energy,
    local_generalized_inertia,
    potential_energy,
    spatial_inertia,
)
from inertia_partitioning.kinematics import KinematicState, forward_kinematics
from inertia_partitioning.liegroup import Transform, adjoint, inverse, rot_x
from inertia_partitioning.model import SpatialInertiaParams, model_from_dict

from modelgen import bias_by_fd, random_inertia, random_model, random_model_doc, random_state


def pendulum(mass=2.0, length=0.7, g=9.81):
    """One link hinged about a horizontal axis; theta measured up from horizontal."""
    return model_from_dict({
        "gravity": [0, 0, -g],
        "coordinates": [{"name": "theta"}],
        "bodies": [{
            "name": "link",
            "parent": None,
            "attachment_transform": {"rotation": rot_x(np.pi / 2).round(15).tolist(), "translation": [0, 0, 0]},
            "joint": {"kind": "revolute", "axis": [0, 0, 1], "coordinate": "theta"},
            "inertia": {"mass": mass, "com": [length, 0, 0], "inertia_matrix": np.diag([0.01, 0.02, 0.02]).tolist()},
        }],
    })


# --- spatial inertia ------------------------------------------------------


def test_spatial_inertia_trivial_cases():
    assert np.array_equal(spatial_inertia(SpatialInertiaParams.massless()), np.zeros((6, 6)))
    I = np.diag([1.0, 2.0, 2.5])
    M = spatial_inertia(SpatialInertiaParams(3.0, np.zeros(3), I))
    expected = np.zeros((6, 6))
    expected[:3, :3] = I
    expected[3:, 3:] = 3.0 * np.eye(3)
    assert np.array_equal(M, expected)


def test_spatial_inertia_builtin_body1(builtin):
    M = spatial_inertia(builtin.bodies[0].inertia)
    assert M[5, 5] == 20.0
    assert abs(M[0, 0] - (0.536 + 20 * 0.103**2)) < 1e-15


def test_spatial_inertia_parallel_axis(rng):
    # Shift the COM-frame inertia to the body frame with the adjoint.
    for _ in range(50):
        p = random_inertia(rng)
        params = SpatialInertiaParams(p["mass"], p["com"], p["inertia_matrix"])
        M_c = np.zeros((6, 6))
        M_c[:3, :3] = params.inertia
        M_c[3:, 3:] = params.mass * np.eye(3)
        X = adjoint(inverse(Transform(np.eye(3), params.com)))
        M = spatial_inertia(params)
        assert np.allclose(M, X.T @ M_c @ X, atol=1e-12)
        assert np.allclose(M, M.T, atol=1e-12)
        assert np.linalg.eigvalsh(M)[0] > 0


# --- generalized inertia --------------------------------------------------


def test_local_inertia_zero_jacobian():
    M = spatial_inertia(SpatialInertiaParams(1.0, [0.1, 0, 0], np.eye(3)))
    assert np.array_equal(local_generalized_inertia(M, np.zeros((6, 4))), np.zeros((4, 4)))


def test_base_body_partition(builtin, rng):
    for _ in range(20):
        G1 = body_inertias(builtin, builtin.sample_q(rng))[0]
        expected = np.zeros((3, 3))
        expected[0, 0] = 0.789
        assert np.allclose(G1, expected, atol=1e-15)


def test_partition_is_frame_independent(rng):
    for _ in range(20):
        m = random_model(rng, n_bodies=4)
        q = m.sample_q(rng)
        fk = forward_kinematics(m, q)
        for b, G in zip(m.bodies, body_inertias(m, q)):
            for fname, T_bf in b.frames.items():
                X = adjoint(T_bf)
                M_f = X.T @ spatial_inertia(b.inertia) @ X
                J_f = fk.jacobians[fname]
                G_f = J_f.T @ M_f @ J_f
                assert np.allclose(G_f, G, rtol=0, atol=1e-10 * max(1.0, np.abs(G).max()))


def test_partition_at_com_frame(builtin, rng):
    for _ in range(20):
        q = builtin.sample_q(rng)
        fk = forward_kinematics(builtin, q)
        for b, G, c in zip(builtin.bodies, body_inertias(builtin, q), ("C1", "C2", "C3")):
            M_c = np.zeros((6, 6))
            M_c[:3, :3] = b.inertia.inertia
            M_c[3:, 3:] = b.inertia.mass * np.eye(3)
            J_c = fk.jacobians[c]
            assert np.allclose(J_c.T @ M_c @ J_c, G, atol=1e-10 * max(1.0, np.abs(G).max()))


def test_global_is_ordered_sum_exactly(rng):
    for _ in range(10):
        m = random_model(rng, n_bodies=5)
        q = m.sample_q(rng)
        total = np.zeros((m.n, m.n))
        for G in body_inertias(m, q):
            total = total + G
        assert np.array_equal(global_inertia(m, q), total)


def test_single_body_model(rng):
    m = random_model(rng, n_bodies=1)
    q = m.sample_q(rng)
    assert np.array_equal(global_inertia(m, q), body_inertias(m, q)[0])


def test_builtin_inertia_spd(builtin, rng):
    for _ in range(300):
        assert np.linalg.eigvalsh(global_inertia(builtin, builtin.sample_q(rng)))[0] > 1e-6


def test_builtin_gamma_at_zero_frozen(builtin):
    # Frozen from an independent evaluation through the COM frames.
    G = global_inertia(builtin, np.zeros(3))
    assert np.allclose(G, G.T, atol=1e-12)
    assert abs(G[0, 0] - 265.406) < 1e-3
    assert abs(G[1, 1] - 340.387) < 1e-3
    assert abs(G[2, 2] - 1135.46) < 1e-2


def test_kinetic_energy_identity(rng, builtin):
    for m in [builtin] + [random_model(rng, n_bodies=4, massless_prob=0.3) for _ in range(5)]:
        for _ in range(20):
            s = random_state(m, rng)
            T = kinetic_energy(m, s)
            assert abs(T - sum(body_kinetic_energies(m, s))) <= 1e-10 * max(1.0, T)


def test_massless_body_contributes_nothing(rng):
    doc = random_model_doc(rng, n_bodies=3)
    doc["bodies"][1]["inertia"] = {"mass": 0.0}
    m = model_from_dict(doc)
    assert np.array_equal(body_inertias(m, m.sample_q(rng))[1], np.zeros((3, 3)))


# --- derivatives ----------------------------------------------------------


def test_builtin_axisymmetric_in_phi(builtin, rng):
    for _ in range(20):
        q = builtin.sample_q(rng)
        P0 = inertia_partial(builtin, q, 0)
        assert np.abs(P0).max() <= 1e-6 * np.abs(global_inertia(builtin, q)).max()
        shifted = q + [rng.uniform(-3, 3), 0, 0]
        assert np.allclose(global_inertia(builtin, shifted), global_inertia(builtin, q), atol=1e-11)


def test_root_spinner_has_zero_partial(rng):
    doc = random_model_doc(rng, n_bodies=3, kinds=("revolute",))
    m = model_from_dict(doc)
    q = m.sample_q(rng)
    # The root joint only rotates everything rigidly about a fixed axis.
    assert np.abs(inertia_partial(m, q, 0)).max() < 1e-7


def test_chain_rule_matches_time_derivative(rng, builtin):
    for m in (builtin, random_model(rng, n_bodies=4)):
        for _ in range(10):
            s = random_state(m, rng)
            h = 1e-5
            fd = (global_inertia(m, s.q + h * s.q_dot) - global_inertia(m, s.q - h * s.q_dot)) / (2 * h)
            Gd = gamma_dot(m, s)
            assert np.abs(Gd - fd).max() <= 1e-5 * max(1.0, np.abs(fd).max())


def test_partials_symmetric(rng):
    m = random_model(rng, n_bodies=4)
    P = inertia_partials(m, m.sample_q(rng))
    assert np.array_equal(P, np.swapaxes(P, 1, 2))


def test_gamma_dot_trivial(rng):
    m = random_model(rng, n_bodies=3)
    assert np.array_equal(gamma_dot(m, KinematicState.at_rest(m.sample_q(rng))), np.zeros((3, 3)))
    p = pendulum()
    assert np.abs(gamma_dot(p, KinematicState([0.3], [2.0]))).max() < 1e-9


def test_coriolis_zero_rate(rng):
    m = random_model(rng, n_bodies=3)
    assert np.array_equal(coriolis_matrix(m, KinematicState.at_rest(m.sample_q(rng))), np.zeros((3, 3)))


def test_coriolis_identity_and_skew(rng, builtin):
    for m in (builtin, random_model(rng, n_bodies=4)):
        for _ in range(20):
            s = random_state(m, rng)
            terms = evaluate_inertia(m, s)
            C = terms.coriolis(s.q_dot)
            Gd = terms.gamma_dot(s.q_dot)
            ref = bias_by_fd(m, s)
            assert np.linalg.norm(C @ s.q_dot - ref) <= 1e-6 * np.linalg.norm(Gd @ s.q_dot) + 1e-6
            x = rng.normal(size=m.n)
            assert abs(x @ (Gd - 2 * C) @ x) <= 1e-8 * (x @ x) * np.linalg.norm(Gd, 2)


# --- forces ---------------------------------------------------------------


def test_pendulum_gravity():
    mass, length, g = 2.0, 0.7, 9.81
    p = pendulum(mass, length, g)
    for th in np.linspace(-3, 3, 13):
        Q = gravity_generalized_force(p, [th])
        assert abs(Q[0] + mass * g * length * np.cos(th)) < 1e-12


def test_gravity_zero_when_g_zero(rng):
    doc = random_model_doc(rng, gravity=(0, 0, 0))
    m = model_from_dict(doc)
    assert np.array_equal(gravity_generalized_force(m, m.sample_q(rng)), np.zeros(m.n))


def test_gravity_is_minus_potential_gradient(rng, builtin):
    for m in (builtin, random_model(rng, n_bodies=4, gravity=(1.0, -2.0, -9.0))):
        for _ in range(20):
            q = m.sample_q(rng)
            grad = np.zeros(m.n)
            for j in range(m.n):
                h = 1e-6 * max(1.0, abs(q[j]))
                e = np.zeros(m.n)
                e[j] = h
                grad[j] = (potential_energy(m, q + e) - potential_energy(m, q - e)) / (2 * h)
            Q = gravity_generalized_force(m, q)
            assert np.linalg.norm(Q + grad) <= 1e-6 * max(1.0, np.linalg.norm(Q))


def test_gravity_wrench_form_agrees(rng, builtin):
    for m in (builtin, random_model(rng, n_bodies=4)):
        for _ in range(10):
            q = m.sample_q(rng)
            assert np.allclose(gravity_generalized_force(m, q), gravity_generalized_force_wrench_form(m, q),
                               rtol=1e-12, atol=1e-10)


def test_evaluate_dynamics_consistent(builtin, rng):
    s = random_state(builtin, rng)
    terms, Q = evaluate_dynamics(builtin, s)
    assert np.array_equal(terms.gamma, evaluate_inertia(builtin, s).gamma)
    assert np.allclose(Q, gravity_generalized_force(builtin, s), rtol=1e-14, atol=1e-12)


def test_external_force_cases(builtin, rng):
    q = builtin.sample_q(rng)
    assert np.array_equal(external_generalized_force(builtin, q, []), np.zeros(3))
    Q = external_generalized_force(builtin, q, [("B1", [0, 0, 1, 0, 0, 0])])
    assert np.allclose(Q, [1, 0, 0], atol=1e-15)


def test_external_force_power(rng):
    for _ in range(20):
        m = random_model(rng, n_bodies=4)
        s = random_state(m, rng)
        fk = forward_kinematics(m, s)
        names = rng.choice(sorted(fk.poses), size=3, replace=False)
        wrenches = [(str(n), rng.normal(size=6)) for n in names]
        Q = external_generalized_force(m, s, wrenches)
        power = sum(W @ fk.twist(n, s.q_dot) for n, W in wrenches)
        assert abs(Q @ s.q_dot - power) <= 1e-12 * max(1.0, abs(power))


# --- inverse / forward dynamics ------------------------------------------


def test_inverse_dynamics_cases(rng, builtin):
    q = builtin.sample_q(rng)
    s = KinematicState.at_rest(q)
    assert np.array_equal(inverse_dynamics(builtin, s, np.zeros(3)), np.zeros(3))
    G = global_inertia(builtin, q)
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        assert np.allclose(inverse_dynamics(builtin, s, e), G[:, j], atol=1e-12)


def test_forward_inverse_round_trip(rng, builtin):
    for m in (builtin, random_model(rng, n_bodies=5)):
        for _ in range(20):
            s = random_state(m, rng)
            qdd = rng.normal(size=m.n)
            back = forward_dynamics(m, s, inverse_dynamics(m, s, qdd))
            assert np.abs(back - qdd).max() <= 1e-8 * max(1.0, np.abs(qdd).max())


def test_static_equilibrium(builtin, rng):
    s = KinematicState.at_rest(builtin.sample_q(rng))
    assert np.allclose(forward_dynamics(builtin, s, np.zeros(3)), 0.0, atol=1e-15)


def test_singular_inertia_raises(rng):
    doc = random_model_doc(rng, n_bodies=2)
    for b in doc["bodies"]:
        b["inertia"] = {"mass": 0.0}
    m = model_from_dict(doc)
    with pytest.raises(NearSingularConfigurationError):
        forward_dynamics(m, KinematicState.at_rest(m.sample_q(rng)), np.ones(2))


def test_evaluation_is_deterministic(builtin, rng):
    s = random_state(builtin, rng)
    a, b = evaluate_inertia(builtin, s), evaluate_inertia(builtin, s)
    assert np.array_equal(a.gamma, b.gamma) and np.array_equal(a.partials, b.partials)
