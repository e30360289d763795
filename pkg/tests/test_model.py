import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from inertia_partitioning.model import (
    CouplingFunction,
    CouplingSingularityError,
    ModelParseError,
    ModelValidationError,
    builtin_coupling,
    builtin_document,
    builtin_manipulator_3dof,
    coupling_eval,
    dump_model,
    load_model,
    model_from_dict,
    model_to_dict,
)

from modelgen import random_model_doc


def builtin_doc():
    return json.loads(builtin_document())


# --- builtin parameters ---------------------------------------------------


def test_builtin_coordinates(builtin):
    assert builtin.n == 3
    assert builtin.coordinate_names == ["phi", "theta", "delta"]
    assert [c.unit for c in builtin.coordinates] == ["rad", "rad", "m"]


def test_builtin_table_values(builtin):
    b1, b2, b3 = builtin.bodies
    assert np.array_equal(b1.frames["C1"].translation, [0, 0, 0.103])
    assert np.array_equal(b1.frames["F1"].translation, [0, 0.206, 0.075])
    assert np.array_equal(b2.frames["C2"].translation, [0.959, 0.001, -0.077])
    assert np.array_equal(b3.frames["C3"].translation, [1.041, 0.001, -0.077])
    assert np.array_equal(b2.frames["F2"].translation, [2, 0, 0])
    assert np.array_equal(b3.frames["F3"].translation, [2, 0, 0])
    assert (b1.inertia.mass, b2.inertia.mass, b3.inertia.mass) == (20.0, 60.0, 60.0)
    assert b2.inertia.inertia[2, 2] == 22.8
    assert b2.inertia.inertia[1, 1] == 22.7
    assert np.array_equal(np.diag(b1.inertia.inertia), [0.536, 0.554, 0.789])
    assert b3.inertia.inertia[0, 1] == 0.065 and b2.inertia.inertia[0, 1] == -0.065
    c = b3.joint.coupling
    assert (c.l0, c.L0) == (0.425, 0.35)
    assert np.array_equal(builtin.gravity, [0, 0, -9.81])


def test_builtin_round_trip_is_bit_identical(builtin):
    again = load_model(dump_model(builtin))
    assert model_to_dict(again) == model_to_dict(builtin)
    for a, b in zip(builtin.bodies, again.bodies):
        assert np.array_equal(a.inertia.inertia, b.inertia.inertia)
        assert np.array_equal(a.attachment.rotation, b.attachment.rotation)


def test_random_model_round_trip(rng):
    for _ in range(10):
        m = model_from_dict(random_model_doc(rng))
        assert model_to_dict(load_model(dump_model(m))) == model_to_dict(m)


# --- coupling -------------------------------------------------------------


def _zeta_by_construction(l0, L0, delta):
    """Apex angle of an isosceles triangle found by intersecting circles."""
    side = l0 + delta
    # Pivot A at origin, pivot B at (L0, 0); C at angle a on the circle of
    # radius L0 around A. Find a with |BC| = side.
    def gap(a):
        return math.hypot(L0 * math.cos(a) - L0, L0 * math.sin(a)) - side

    apex = brentq(gap, 1e-12, math.pi - 1e-12, xtol=1e-15)
    return apex - math.pi


def test_zeta_at_zero_matches_geometry_and_reference_value():
    c = builtin_coupling()
    zeta, _ = coupling_eval(c, 0.0)
    assert abs(zeta - (-math.acos(-0.26276))) < 1e-5
    assert abs(zeta - _zeta_by_construction(0.425, 0.35, 0.0)) < 1e-12


def test_zeta_minus_half_pi():
    c = builtin_coupling()
    delta = math.sqrt(2.0) * c.L0 - c.l0
    assert abs(coupling_eval(c, delta)[0] + math.pi / 2) < 1e-14


def test_dzeta_matches_fd_across_interval():
    c = builtin_coupling()
    lo, hi = c.feasible_interval()
    pad = 0.01 * (hi - lo)
    for delta in np.linspace(lo + pad, hi - pad, 200):
        _, d = coupling_eval(c, delta)
        h = 1e-7
        fd = (coupling_eval(c, delta + h)[0] - coupling_eval(c, delta - h)[0]) / (2 * h)
        assert abs(d - fd) <= 1e-6 * abs(d)
        assert d > 0


def test_zeta_matches_geometry_on_random_deltas(rng):
    c = builtin_coupling()
    lo, hi = c.feasible_interval()
    for delta in rng.uniform(lo + 1e-3, hi - 1e-3, 50):
        assert abs(coupling_eval(c, delta)[0] - _zeta_by_construction(c.l0, c.L0, delta)) < 1e-9


@settings(max_examples=100)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_zeta_strictly_monotone(a, b):
    c = builtin_coupling()
    lo, hi = c.feasible_interval()
    da, db = sorted((lo + 1e-6 + a * (hi - lo - 2e-6), lo + 1e-6 + b * (hi - lo - 2e-6)))
    if db - da > 1e-9:
        assert coupling_eval(c, da)[0] < coupling_eval(c, db)[0]


def test_feasible_interval_edges():
    c = CouplingFunction(0.425, 0.35)
    lo, hi = c.feasible_interval()
    assert -0.426 < lo < -0.424 and 0.27 < hi < 0.28
    for bad in (hi + 1e-6, lo - 1e-6, -1.0):
        with pytest.raises(CouplingSingularityError, match="feasible interval"):
            coupling_eval(c, bad)


# --- validation -----------------------------------------------------------


def _expect(doc, path_fragment, reason=None):
    with pytest.raises(ModelValidationError) as info:
        model_from_dict(doc)
    assert path_fragment in info.value.path
    if reason:
        assert reason in str(info.value)


def test_empty_body_list():
    doc = builtin_doc()
    doc["bodies"] = []
    _expect(doc, "bodies")


def test_non_unit_axis():
    doc = builtin_doc()
    doc["bodies"][1]["joint"]["axis"] = [0, 0, 2]
    _expect(doc, "bodies[1].joint.axis", "axis not unit length")


def test_parent_must_precede():
    doc = builtin_doc()
    doc["bodies"][1]["parent"] = "B3"
    _expect(doc, "bodies[1].parent")


def test_duplicate_names():
    doc = builtin_doc()
    doc["bodies"][2]["name"] = "B2"
    _expect(doc, "bodies[2].name")
    doc = builtin_doc()
    doc["bodies"][2]["frames"]["C2"] = {"translation": [0, 0, 0]}
    _expect(doc, "bodies[2].frames.C2")


def test_inertia_checks():
    doc = builtin_doc()
    doc["bodies"][0]["inertia"]["inertia_matrix"] = [[1, 0.5, 0], [0, 1, 0], [0, 0, 1]]
    _expect(doc, "inertia_matrix", "not symmetric")
    doc = builtin_doc()
    doc["bodies"][0]["inertia"]["inertia_matrix"] = [[1, 0, 0], [0, 1, 0], [0, 0, 3]]
    _expect(doc, "inertia_matrix", "triangle")
    doc = builtin_doc()
    doc["bodies"][0]["inertia"]["mass"] = -1
    _expect(doc, "bodies[0].inertia.mass")


def test_massless_body_allowed():
    doc = builtin_doc()
    doc["bodies"][2]["inertia"] = {"mass": 0.0}
    m = model_from_dict(doc)
    assert m.bodies[2].inertia.mass == 0.0


def test_coupling_checks():
    doc = builtin_doc()
    doc["bodies"][2]["joint"]["coupling"]["L0"] = 0.0
    _expect(doc, "coupling.L0")
    doc = builtin_doc()
    del doc["bodies"][2]["joint"]["coupling"]
    _expect(doc, "bodies[2].joint.coupling")
    doc = builtin_doc()
    doc["bodies"][1]["joint"]["coupling"] = {"kind": "triangle-law-of-cosines", "l0": 1, "L0": 1}
    _expect(doc, "bodies[1].joint.coupling")
    doc = builtin_doc()
    doc["coordinates"][2]["default"] = 0.3
    _expect(doc, "coordinates[2].default", "feasible")


def test_undriven_coordinate():
    doc = builtin_doc()
    doc["coordinates"].append({"name": "spare"})
    _expect(doc, "coordinates[3]", "drives no joint")


def test_rotation_must_be_orthonormal():
    doc = builtin_doc()
    doc["bodies"][1]["attachment_transform"]["rotation"] = [[1, 0, 0], [0, 1, 0], [0, 0, 1.01]]
    _expect(doc, "bodies[1].attachment_transform.rotation")


def test_parse_error_location():
    with pytest.raises(ModelParseError) as info:
        load_model('{"bodies": [\n  oops]}')
    assert info.value.line == 2


def test_sampling_respects_coupling(builtin, rng):
    lo, hi = builtin_coupling().feasible_interval()
    for _ in range(200):
        q = builtin.sample_q(rng)
        assert lo < q[2] < hi
        assert -math.pi <= q[0] <= math.pi


def test_model_is_not_mutated_by_doc_changes():
    doc = builtin_doc()
    m = model_from_dict(doc)
    doc2 = copy.deepcopy(doc)
    doc["bodies"][0]["inertia"]["mass"] = 99.0
    assert m.bodies[0].inertia.mass == 20.0
    assert model_to_dict(model_from_dict(doc2)) == model_to_dict(m)
