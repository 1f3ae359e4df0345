import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbundle import bloch as bl
from qbundle import eqmap as eq
from qbundle import invariants as inv
from qbundle import linalg as la
from qbundle import mesh as ms
from qbundle.errors import GapError, GaugeSmoothnessError, InvalidInputError

ALL_MODELS = [
    bl.atomic_model(2),
    bl.atomic_model(3),
    bl.kane_mele_model(lv=0.1, lr=0.05),
    bl.bhz_model(m=1.0, c=0.3),
    bl.dirac3d_model(m=1.0),
]


def random_k(rng, dim, n=1000):
    return rng.uniform(-np.pi, np.pi, size=(n, dim))


@pytest.fixture(scope="module")
def km_frames():
    model = bl.kane_mele_model()
    mesh = ms.build_torus(2, 32)
    return model, mesh, bl.occupied_frame_field(model, mesh)


@pytest.fixture(scope="module")
def dirac_frames():
    model = bl.dirac3d_model(m=1.0)
    mesh = ms.build_torus(3, 32)
    return model, mesh, bl.occupied_frame_field(model, mesh)


# ---------------------------------------------------------------- models

@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: "%s%d" % (m.name, m.dim))
def test_models_are_hermitian_and_time_reversal_symmetric(model):
    k = random_k(np.random.default_rng(0), model.dim)
    assert model.hermiticity_residual(k) < 1e-12
    assert model.trs_residual(k) < 1e-12


def test_model_validation():
    with pytest.raises(InvalidInputError):
        bl.TightBindingModel("x", 2, 4, 2, {}, lambda k: k, np.eye(4))
    with pytest.raises(InvalidInputError):
        bl.TightBindingModel("x", 2, 4, 3, {}, lambda k: k, np.kron(bl.ISY, np.eye(2)))
    with pytest.raises(InvalidInputError):
        bl.make_model("haldane")
    with pytest.raises(InvalidInputError):
        bl.kane_mele_model().hamiltonian(np.zeros(3))


def test_kane_mele_gap_closes_at_critical_staggering():
    lso = 0.06
    lv = bl.kane_mele_critical_lv(lso)
    assert lv == pytest.approx(3 * np.sqrt(3) * lso)
    k_point = np.array([2 * np.pi / 3, 4 * np.pi / 3])
    assert bl.kane_mele_model(lso=lso, lv=lv).gap(k_point) == pytest.approx(0.0, abs=1e-12)
    gap, _ = bl.locate_gap_minimum(bl.kane_mele_model(lso=lso, lv=0.2))
    # the direct gap at K is 2 |3 sqrt 3 lso - lv|
    assert gap == pytest.approx(2 * abs(lv - 0.2), abs=1e-8)


def test_gap_locator_matches_dense_sampling():
    model = bl.bhz_model(m=0.3)
    gap, k = bl.locate_gap_minimum(model)
    ax = np.linspace(-np.pi, np.pi, 201)
    grid = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    assert gap <= model.gap(grid).min() + 1e-12
    assert model.gap(k) == pytest.approx(gap)


def test_dirac_parity_signs():
    assert bl.dirac3d_parity_signs(bl.dirac3d_model(m=1.0))[(0, 0, 0)] == -1
    strong = bl.dirac3d_parity_signs(bl.dirac3d_model(m=1.0))
    assert np.prod(list(strong.values())) == -1
    weak = bl.dirac3d_parity_signs(bl.dirac3d_model(m=3.0))
    assert np.prod(list(weak.values())) == 1
    trivial = bl.dirac3d_parity_signs(bl.dirac3d_model(m=-1.0))
    assert set(trivial.values()) == {1}


# ---------------------------------------------------------------- frames

def test_graphene_gap_failure():
    with pytest.raises(GapError) as exc:
        bl.occupied_frame_field(bl.kane_mele_model(lso=0.0), ms.build_torus(2, 24))
    k = np.array(exc.value.details["k"])
    assert exc.value.details["gap"] < 1e-12
    # a Dirac point: K or K'
    assert np.allclose(sorted(np.round(k / (2 * np.pi / 3)) % 3), [1, 2])


def test_frames_need_matching_torus():
    with pytest.raises(InvalidInputError):
        bl.occupied_frame_field(bl.kane_mele_model(), ms.build_torus(3, 8))
    with pytest.raises(InvalidInputError):
        bl.occupied_frame_field(bl.kane_mele_model(), ms.build_sphere2(8))


def test_frame_invariants(km_frames):
    model, _, fr = km_frames
    assert fr.orthonormality_residual() < 1e-12
    assert fr.projector_residual(model) < 1e-10
    assert fr.overlap_defect() < 0.5
    assert fr.gauge_metadata["overlap_defect"] == pytest.approx(fr.overlap_defect())


def test_frame_smoothness_check_on_coarse_mesh():
    with pytest.raises(GaugeSmoothnessError):
        bl.occupied_frame_field(bl.dirac3d_model(m=1.0), ms.build_torus(3, 16))


def test_overlap_defect_is_first_order():
    model = bl.kane_mele_model()
    d = [bl.occupied_frame_field(model, ms.build_torus(2, n)).overlap_defect() for n in (32, 64)]
    assert 1.5 < d[0] / d[1] < 2.5


# ---------------------------------------------------------------- classifying map

def test_sewing_matrix_symmetry(km_frames):
    model, mesh, fr = km_frames
    w = bl.sewing_matrices(fr, model)
    assert np.allclose(w[mesh.tau], -np.swapaxes(w, -1, -2), atol=1e-12)


def test_classifying_map_properties(km_frames):
    model, mesh, fr = km_frames
    xi = bl.classifying_map(fr, model)
    assert xi.flavor == "U2"
    assert np.allclose(la.dagger(xi.values) @ xi.values, la.ID2, atol=1e-10)
    assert eq.equivariance_residual(xi) < 1e-10
    # at a fixed point xi Q is skew, so xi is a multiple of the identity
    for v in xi.at_fixed().values():
        xq = v @ la.Q
        assert np.allclose(xq, -xq.T, atol=1e-10)
        assert np.allclose(v, v[0, 0] * la.ID2, atol=1e-10)


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_invariant_is_gauge_covariant(seed):
    model = bl.kane_mele_model()
    mesh = ms.build_torus(2, 32)
    fr = bl.occupied_frame_field(model, mesh)
    moved = bl.random_gauge(fr, np.random.default_rng(seed), amplitude=0.5)
    assert moved.projector_residual(model) < 1e-10
    assert inv.fkmm_index(bl.classifying_map(moved, model)).sign == -1
    wz = inv.wz_term(eq.su2_reduce(bl.classifying_map(moved, model)))
    assert wz.sign == -1


@pytest.mark.parametrize(
    "model, expected",
    [
        (bl.atomic_model(2), 1),
        (bl.kane_mele_model(), -1),
        (bl.kane_mele_model(lv=0.5), 1),
        (bl.bhz_model(m=1.0), -1),
        (bl.bhz_model(m=3.0), -1),
        (bl.bhz_model(m=-1.0), 1),
    ],
    ids=["atomic", "km_top", "km_triv", "bhz1", "bhz3", "bhz_triv"],
)
def test_two_dimensional_index_matches_oracle(model, expected):
    mesh = ms.build_torus(2, 32)
    xi = bl.classifying_map(bl.occupied_frame_field(model, mesh), model)
    oracle = bl.trim_pfaffian_oracle(model, mesh)
    assert oracle.product() == expected
    assert inv.fkmm_index(xi).sign == expected


def test_atomic_limit_all_signs_trivial():
    model = bl.atomic_model(3)
    mesh = ms.build_torus(3, 8)
    rep = inv.fkmm_index(bl.classifying_map(bl.occupied_frame_field(model, mesh), model))
    assert set(rep.fixed_point_signs.values()) == {1}
    assert set(bl.trim_pfaffian_oracle(model, mesh).values()) == {1}


def test_three_dimensional_routes_agree(dirac_frames):
    model, mesh, fr = dirac_frames
    xi = bl.classifying_map(fr, model)
    fkmm = inv.fkmm_index(xi)
    oracle = bl.trim_pfaffian_oracle(model, mesh)
    parity = bl.dirac3d_parity_signs(model)
    assert fkmm.sign == oracle.product() == np.prod(list(parity.values())) == -1
    cs = inv.cs_invariant(xi)
    assert cs.sign == -1
    assert 2 * cs.raw == pytest.approx(1.0, abs=1e-2)


def test_oracle_rejects_gapless_mesh():
    with pytest.raises(GapError):
        bl.trim_pfaffian_oracle(bl.kane_mele_model(lso=0.0), ms.build_torus(2, 24))
