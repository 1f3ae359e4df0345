import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbundle import linalg as la
from qbundle.errors import (
    BranchCutError,
    DegenerateFrameError,
    GeometricDegeneracyError,
    InvalidInputError,
    NotSpecialError,
)


def random_skew(rng, n, complex_=True):
    a = rng.normal(size=(n, n))
    if complex_:
        a = a + 1j * rng.normal(size=(n, n))
    return a - a.T


def random_su2(rng, size=None):
    q = rng.normal(size=(size or 1, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    out = la.matrix_from_quaternion(q)
    return out if size else out[0]


seeds = st.integers(0, 2**32 - 1)


# ---------------------------------------------------------------- Pfaffian

def test_pfaffian_of_standard_blocks():
    # Pf of diag(J, J, ...) with J = [[0, 1], [-1, 0]] is 1
    for n in (2, 4, 6, 8):
        j = np.kron(np.eye(n // 2), [[0, 1], [-1, 0]])
        assert la.pfaffian(j) == pytest.approx(1.0)


def test_pfaffian_four_by_four_closed_form():
    rng = np.random.default_rng(0)
    a = random_skew(rng, 4)
    expected = a[0, 1] * a[2, 3] - a[0, 2] * a[1, 3] + a[0, 3] * a[1, 2]
    assert la.pfaffian(a) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, half=st.integers(1, 4))
def test_pfaffian_squares_to_determinant(seed, half):
    rng = np.random.default_rng(seed)
    a = random_skew(rng, 2 * half)
    det = np.linalg.det(a)
    assert abs(la.pfaffian(a) ** 2 - det) <= 1e-9 * max(1.0, abs(det))


@settings(max_examples=60, deadline=None)
@given(seed=seeds, half=st.integers(1, 4))
def test_pfaffian_congruence(seed, half):
    rng = np.random.default_rng(seed)
    n = 2 * half
    a = random_skew(rng, n)
    b = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    lhs = la.pfaffian(b.T @ a @ b)
    rhs = np.linalg.det(b) * la.pfaffian(a)
    assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))


@pytest.mark.parametrize(
    "mat, invariant",
    [
        (np.zeros((3, 3)), "even_dimension"),
        (np.zeros((2, 4)), "square"),
        (np.zeros((10, 10)), "size_le_8"),
        (np.array([[0.0, 1.0], [1.0, 0.0]]), "skew_symmetric"),
    ],
)
def test_pfaffian_rejects_bad_input(mat, invariant):
    with pytest.raises(InvalidInputError) as exc:
        la.pfaffian(mat)
    assert exc.value.details["invariant"] == invariant


# ---------------------------------------------------------------- logs

@settings(max_examples=50, deadline=None)
@given(seed=seeds)
def test_log_exp_round_trip_su2(seed):
    rng = np.random.default_rng(seed)
    u = random_su2(rng)
    if la.max_eigen_angle2(u[None])[0] > np.pi - 1e-3:
        return
    lg = la.principal_log(u)
    assert np.allclose(lg, -lg.conj().T, atol=1e-12)
    assert np.allclose(la.exp_antiherm2(lg[None])[0], u, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, n=st.integers(3, 5))
def test_principal_log_general_size_matches_scipy(seed, n):
    import scipy.linalg

    rng = np.random.default_rng(seed)
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = 0.5 * (h + h.conj().T)
    h *= 2.5 / max(1.0, np.max(np.abs(np.linalg.eigvalsh(h))))
    u = scipy.linalg.expm(1j * h)
    assert np.allclose(la.principal_log(u), 1j * h, atol=1e-9)


def test_log_at_branch_cut_raises():
    with pytest.raises(BranchCutError):
        la.principal_log(-np.eye(2))
    with pytest.raises(BranchCutError):
        la.principal_log(np.diag([1, 1, -1]).astype(complex))


def test_log_of_non_unitary_rejected():
    with pytest.raises(InvalidInputError):
        la.principal_log(2 * np.eye(2))


def test_u2_log_includes_phase():
    u = np.exp(0.3j) * la.exp_antiherm2(la.from_pauli_coords(np.zeros(1), np.array([[0.2, -0.4, 0.1]])))[0]
    lg = la.principal_log(u)
    s, a = la.pauli_coords(lg)
    assert s == pytest.approx(0.3)
    assert np.allclose(a, [0.2, -0.4, 0.1])


# ---------------------------------------------------------------- quaternions

@settings(max_examples=50, deadline=None)
@given(seed=seeds)
def test_quaternion_chart_round_trip(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    u = la.matrix_from_quaternion(q)
    assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12)
    assert np.linalg.det(u) == pytest.approx(1.0)
    assert np.allclose(la.su2_coords(u), q, atol=1e-10)


def test_quaternion_chart_base_points():
    assert np.allclose(la.matrix_from_quaternion([1, 0, 0, 0]), np.eye(2))
    assert np.allclose(la.matrix_from_quaternion([0, 0, 0, 1]), np.diag([1j, -1j]))
    assert np.allclose(la.matrix_from_quaternion([0, 1, 0, 0]), la.Q)


def test_su2_coords_rejects_non_special():
    with pytest.raises(NotSpecialError):
        la.su2_coords(np.diag([1j, 1j]))


def test_check_quaternion_norm():
    with pytest.raises(InvalidInputError):
        la.check_quaternion([1, 1, 0, 0])


@settings(max_examples=50, deadline=None)
@given(seed=seeds, t=st.floats(0, 1))
def test_slerp_stays_on_geodesic(seed, t):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 4))
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    if a @ b < -0.999:
        return
    p = la.slerp(a, b, t)
    omega = np.arccos(np.clip(a @ b, -1, 1))
    assert np.linalg.norm(p) == pytest.approx(1.0, abs=1e-12)
    assert np.arccos(np.clip(a @ p, -1, 1)) == pytest.approx(t * omega, abs=1e-7)
    assert np.arccos(np.clip(p @ b, -1, 1)) == pytest.approx((1 - t) * omega, abs=1e-7)


def test_slerp_end_points_exact():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 4))
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    assert np.allclose(la.slerp(a, b, 0.0), a, atol=1e-10)
    assert np.allclose(la.slerp(a, b, 1.0), b, atol=1e-10)


def test_slerp_antipodal_is_degenerate():
    a = np.array([1.0, 0, 0, 0])
    with pytest.raises(GeometricDegeneracyError):
        la.slerp(a, -a, 0.5)


def test_slerp_matches_matrix_geodesic():
    # the chart is a group isomorphism: slerp(a, b, t) = a exp(t log(a^-1 b))
    rng = np.random.default_rng(11)
    a, b = random_su2(rng, 2)
    qa, qb = la.su2_coords(a), la.su2_coords(b)
    for t in (0.25, 0.5, 0.8):
        path = a @ la.exp_antiherm2(t * la.principal_log(a.conj().T @ b)[None])[0]
        assert np.allclose(la.matrix_from_quaternion(la.slerp(qa, qb, t)), path, atol=1e-10)


# ---------------------------------------------------------------- frames and eigensolver

def test_gram_schmidt_is_orthonormal_and_unique():
    rng = np.random.default_rng(5)
    f = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
    g = la.gram_schmidt(f)
    assert np.allclose(g.conj().T @ g, np.eye(3), atol=1e-12)
    r = g.conj().T @ f
    assert np.allclose(np.tril(r, -1), 0, atol=1e-12)
    assert np.all(np.diag(r).real > 0)


def test_gram_schmidt_rejects_rank_deficient():
    f = np.ones((4, 2))
    with pytest.raises(DegenerateFrameError):
        la.gram_schmidt(f)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, n=st.integers(2, 6))
def test_jacobi_matches_lapack(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(7, n, n)) + 1j * rng.normal(size=(7, n, n))
    a = a + la.dagger(a)
    w, v = la.jacobi_eigh(a)
    assert np.allclose(w, np.linalg.eigvalsh(a), atol=1e-10)
    assert np.allclose(v @ (w[..., None] * la.dagger(v)), a, atol=1e-10)
    assert np.allclose(la.dagger(v) @ v, np.eye(n), atol=1e-12)
    # phase convention: the largest component of each eigenvector is real positive
    lead = np.take_along_axis(v, np.argmax(np.abs(v), axis=1)[:, None, :], axis=1)
    assert np.allclose(lead.imag, 0, atol=1e-12) and np.all(lead.real > 0)


def test_polar_unitary_of_unitary_is_identity_map():
    u = random_su2(np.random.default_rng(2), 3)
    assert np.allclose(la.polar_unitary(u), u, atol=1e-12)


# ---------------------------------------------------------------- Pauli coordinates

@settings(max_examples=30, deadline=None)
@given(s=st.floats(-3, 3), a=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_pauli_coordinates_round_trip(s, a):
    m = la.from_pauli_coords(np.array(s), np.array(a))
    assert np.allclose(m, -m.conj().T)
    s2, a2 = la.pauli_coords(m)
    assert s2 == pytest.approx(s, abs=1e-12)
    assert np.allclose(a2, a, atol=1e-12)
