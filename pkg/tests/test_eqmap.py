import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbundle import eqmap as eq
from qbundle import linalg as la
from qbundle import mesh as ms
from qbundle.errors import (
    GeometryError,
    InvalidInputError,
    MeshMismatchError,
    ObstructionError,
)


@pytest.fixture(scope="module")
def s2():
    return ms.build_sphere2(16)


@pytest.fixture(scope="module")
def t2():
    return ms.build_torus(2, 16)


@pytest.fixture(scope="module")
def t3():
    return ms.build_torus(3, 8)


def is_unitary(vals, tol=1e-12):
    return np.allclose(la.dagger(vals) @ vals, la.ID2, atol=tol)


def test_chi_is_equivariant_and_special(s2):
    f = eq.synth_chi(s2)
    assert is_unitary(f.values)
    assert np.allclose(f.det(), 1)
    assert eq.equivariance_residual(f) < 1e-12
    # chi(x) is the quaternion (x, 0): poles go to +-1
    fx = f.at_fixed()
    assert sorted(round(v[0, 0].real) for v in fx.values()) == [-1, 1]


def test_chi_tilde_restricts_to_chi(s2):
    up = ms.build_sphere3_plus(16)
    ext = eq.synth_chi_tilde(up)
    V = s2.n_vertices
    assert np.allclose(ext.values[:V], eq.synth_chi(s2).values, atol=1e-14)
    assert np.allclose(ext.values[-1], np.diag([1j, -1j]))


def test_phi_star_is_u2_with_pure_imaginary_corners(s2):
    f = eq.synth_phi_star(s2)
    assert f.flavor == "U2"
    assert is_unitary(f.values)
    assert eq.equivariance_residual(f) < 1e-12
    for v in f.at_fixed().values():
        assert np.allclose(v, v[0, 0] * la.ID2)
        assert abs(v[0, 0].real) < 1e-14


def test_disk_map_boundary_values():
    r = np.linspace(0, 1, 11)
    for phase in (0.0, 1.3, -2.4):
        vals = eq.disk_map_values(r * np.exp(1j * phase))
        assert is_unitary(vals)
        assert np.allclose(np.linalg.det(vals), 1)
    assert np.allclose(eq.disk_map_values(0.0), -la.ID2)
    assert np.allclose(eq.disk_map_values(np.exp(0.7j)), la.ID2)
    f = eq.synth_disk_map(ms.build_disk(8))
    assert eq.equivariance_residual(f) < 1e-12


@settings(max_examples=16, deadline=None)
@given(eps=st.lists(st.sampled_from([-1, 1]), min_size=4, max_size=4))
def test_xi_epsilon_signs_at_fixed_points(eps):
    m = ms.build_torus(2, 16)
    f = eq.synth_xi_epsilon(m, eps)
    assert eq.equivariance_residual(f) < 1e-12
    for (p, v), s in zip(sorted(f.at_fixed().items()), eps):
        assert np.allclose(v, s * la.ID2)


def test_xi_epsilon_rejects_overlapping_disks(t2):
    with pytest.raises(GeometryError):
        eq.synth_xi_epsilon(t2, [-1, 1, 1, 1], radius=2.0)
    with pytest.raises(InvalidInputError):
        eq.synth_xi_epsilon(t2, [-1, 1, 1])


def test_bump3_and_dirac_on_three_torus(t3):
    eps = [-1, 1, 1, -1, 1, 1, 1, -1]
    f = eq.synth_bump3(t3, eps)
    assert eq.equivariance_residual(f) < 1e-12
    for (p, v), s in zip(sorted(f.at_fixed().items()), eps):
        assert np.allclose(v, s * la.ID2)
    g = eq.synth_dirac_map(t3, 1.0)
    assert eq.equivariance_residual(g) < 1e-12
    # mass 1: q0 = 1 at Gamma, 1 - 2n at a corner with n coordinates = pi
    for p, v in g.at_fixed().items():
        n = int(np.sum(np.abs(t3.vertices[p]) > 1))
        assert np.allclose(v, np.sign(1 - 2 * n) * la.ID2)


def test_dirac_map_at_transition_rejected(t3):
    with pytest.raises(InvalidInputError):
        eq.synth_dirac_map(t3, 0.0)


def test_wrong_manifold_rejected(s2, t2):
    with pytest.raises(InvalidInputError):
        eq.synth_chi(t2)
    with pytest.raises(InvalidInputError):
        eq.synth_dirac_map(s2)


def test_field_validation():
    m = ms.build_torus(2, 8)
    with pytest.raises(InvalidInputError):
        eq.MapField(m, np.zeros((3, 2, 2)))
    with pytest.raises(InvalidInputError):
        eq.MapField(m, np.tile(2j * la.ID2, (m.n_vertices, 1, 1)))
    with pytest.raises(InvalidInputError):
        eq.MapField(m, np.tile(la.ID2, (m.n_vertices, 1, 1)), flavor="SO3")


def test_twist_validation(t2):
    with pytest.raises(InvalidInputError):
        eq.U1Twist(t2, 2 * np.ones(t2.n_vertices))
    k = t2.vertices
    with pytest.raises(InvalidInputError):
        eq.U1Twist(t2, np.exp(1j * np.cos(k[:, 0])))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_group_actions_preserve_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = ms.build_torus(2, 12)
    f = eq.synth_xi_epsilon(m, [1, -1, 1, -1])
    g = eq.gauge_action(f, eq.random_smooth_su2(m, rng, amplitude=0.7, equivariant=False))
    assert eq.equivariance_residual(g) < 1e-10
    h = eq.u1_twist(f, eq.random_twist(m, rng, amplitude=0.7))
    assert h.flavor == "SU2"
    assert eq.equivariance_residual(h) < 1e-10
    # the pointwise inverse of an equivariant field is equivariant
    assert eq.equivariance_residual(f.inverse()) < 1e-12


def test_gauge_action_by_u2_keeps_u2_relation(s2):
    rng = np.random.default_rng(4)
    f = eq.synth_phi_star(s2)
    a = rng.normal(size=(s2.n_vertices, 3)) * 0.3
    psi = np.exp(0.4j) * la.exp_antiherm2(la.from_pauli_coords(np.zeros(s2.n_vertices), a))
    g = eq.gauge_action(f, psi)
    assert g.flavor == "U2"
    assert eq.equivariance_residual(g) < 1e-10


def test_su2_reduce_phi_star(s2):
    f = eq.synth_phi_star(s2)
    r = eq.su2_reduce(f)
    assert r.flavor == "SU2"
    assert np.allclose(r.det(), 1)
    assert eq.equivariance_residual(r) < 1e-10
    # reduced corner values are +-1 and differ between the two poles
    corners = [v[0, 0].real for v in r.at_fixed().values()]
    assert sorted(np.round(corners)) == [-1, 1]
    for v in r.at_fixed().values():
        assert np.allclose(v, v[0, 0] * la.ID2)


def test_su2_reduce_detects_winding(t2):
    k = t2.vertices
    # det = exp(i k1) winds once around the first loop
    vals = np.zeros((t2.n_vertices, 2, 2), dtype=complex)
    vals[:, 0, 0] = np.exp(1j * k[:, 0])
    vals[:, 1, 1] = 1.0
    with pytest.raises(ObstructionError):
        eq.su2_reduce(eq.MapField(t2, vals, "U2"))


def test_det_winding_counts(t2):
    k = t2.vertices
    assert eq.det_winding(t2, 2 * k[:, 0] - k[:, 1]) == [2, -1]


def test_json_round_trip(s2):
    f = eq.synth_phi_star(s2)
    doc = json.loads(eq.field_to_json(f))
    assert doc["schema_version"] == "1.0"
    back = eq.field_from_dict(doc, s2)
    assert back.flavor == "U2"
    assert np.array_equal(back.values, f.values)
    with pytest.raises(MeshMismatchError):
        eq.field_from_dict(doc, ms.build_sphere2(8))


def test_product_needs_same_mesh(s2):
    f = eq.synth_chi(s2)
    with pytest.raises(MeshMismatchError):
        eq.pointwise_product(f, eq.synth_chi(ms.build_sphere2(8)))
