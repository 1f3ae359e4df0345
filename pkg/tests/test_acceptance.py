"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line (collected into the pytest terminal summary) and then asserts the
criterion at its stated tolerance.  Run ``python3 tests/test_acceptance.py``
to print the lines without pytest.
"""
import time

import numpy as np
import pytest

from qbundle import bloch as bl
from qbundle import cli
from qbundle import eqmap as eq
from qbundle import invariants as inv
from qbundle import linalg as la
from qbundle import mesh as ms
from smooth_fields import hedgehog_gauge, random_form

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

pytestmark = pytest.mark.slow


def record(number, ok, detail):
    line = "%s criterion %d: %s" % ("PASS" if ok else "FAIL", number, detail)
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert ok, line


def test_criterion_01_wz_of_chi():
    t0 = time.perf_counter()
    half = inv.lambda_integral(eq.synth_chi_tilde(ms.build_sphere3_plus(96)))
    t_half = time.perf_counter() - t0
    t0 = time.perf_counter()
    ext = inv.wz_term(eq.synth_chi(ms.build_sphere2(96))).raw
    t_ext = time.perf_counter() - t0
    a, b = half % 1.0, ext % 1.0
    ok = abs(a - 0.5) <= 5e-3 and abs(b - 0.5) <= 5e-3 and abs(a - b) <= 5e-3 and max(t_half, t_ext) <= 30
    record(1, ok, "half-ball %.5f (%.1f s), extension %.5f (%.1f s), |diff| %.1e"
           % (a, t_half, b, t_ext, abs(a - b)))


def test_criterion_02_sign_patterns():
    mesh = ms.build_torus(2, 64)
    bad, worst = [], 0.0
    for bits in range(16):
        eps = [-1 if bits >> i & 1 else 1 for i in range(4)]
        rep = inv.wz_term(eq.synth_xi_epsilon(mesh, eps))
        phase = np.exp(2j * np.pi * rep.raw)
        worst = max(worst, rep.half_integer_residual)
        if int(np.rint(phase.real)) != np.prod(eps) or rep.half_integer_residual > 2e-2:
            bad.append(eps)
    record(2, not bad, "16 patterns at N=64, mismatches %s, worst residual %.2e" % (bad or "none", worst))


def test_criterion_03_dirac_strong_index():
    mesh = ms.build_torus(3, 32)
    t0 = time.perf_counter()
    rows, ok = [], True
    for m in (-1.0, 1.0):
        model = bl.dirac3d_model(m=m)
        xi = bl.classifying_map(bl.occupied_frame_field(model, mesh), model)
        cs = inv.cs_invariant(xi)
        oracle = bl.trim_pfaffian_oracle(model, mesh).product()
        near = abs(2 * cs.raw - round(2 * cs.raw))
        ok &= cs.sign == oracle and near <= 5e-2
        rows.append("m=%g cs sign %+d oracle %+d 2raw %.4f" % (m, cs.sign, oracle, 2 * cs.raw))
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 300
    record(3, ok, "; ".join(rows) + " (%.0f s)" % elapsed)


def test_criterion_04_polyakov_wiegmann():
    levels = (32, 64, 128)
    res = {n: [] for n in levels}
    for n in levels:
        mesh = ms.build_torus(2, n)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            f = eq.random_smooth_su2(mesh, rng, amplitude=0.8, equivariant=False)
            g = eq.random_smooth_su2(mesh, rng, amplitude=0.8, equivariant=False)
            res[n].append(inv.polyakov_wiegmann_residual(f, g))
    worst64 = max(res[64])
    # least-squares slope of log residual against log h, per pair; report the smallest
    logs = np.log(np.array([res[n] for n in levels]))
    x = np.log(2 * np.pi / np.array(levels, dtype=float))
    orders = np.polyfit(x, logs, 1)[0]
    ok = worst64 <= 1e-2 and np.min(orders) >= 1.7
    record(4, ok, "10 pairs, max residual at N=64 %.2e, fitted orders %s"
           % (worst64, " ".join("%.2f" % o for o in orders)))


def test_criterion_05_quantization():
    mesh = ms.build_torus(2, 64)
    rng = np.random.default_rng(5)
    worst_res, worst_inv, wrong = 0.0, 0.0, 0
    for _ in range(50):
        e1 = list(rng.choice([-1, 1], size=4))
        e2 = list(rng.choice([-1, 1], size=4))
        f = eq.pointwise_product(eq.synth_xi_epsilon(mesh, e1), eq.synth_xi_epsilon(mesh, e2))
        f = eq.u1_twist(f, eq.random_twist(mesh, rng, amplitude=0.5))
        rep = inv.wz_term(f)
        rinv = inv.wz_term(f.inverse())
        worst_res = max(worst_res, rep.half_integer_residual)
        worst_inv = max(worst_inv, abs(inv.mod1_centered(rep.raw + rinv.raw)))
        wrong += rep.sign != np.prod(e1) * np.prod(e2)
    ok = worst_res <= 2e-2 and worst_inv <= 2e-2 and wrong == 0
    record(5, ok, "50 fields at N=64, worst residual %.2e, worst |wz(f)+wz(f^-1)| %.2e, sign mismatches %d"
           % (worst_res, worst_inv, wrong))


def _signs(f):
    out = {"fkmm": inv.fkmm_index(f).sign}
    g = eq.su2_reduce(f)
    if f.mesh.dim == 2:
        out["wz"] = inv.wz_term(g).sign
    else:
        out["cs"] = inv.cs_invariant(g).sign
    return out


def test_criterion_06_twist_invariance():
    rng = np.random.default_rng(6)
    km = bl.kane_mele_model()
    dirac = bl.dirac3d_model(m=1.0)
    inputs = {
        "xi_eps": eq.synth_xi_epsilon(ms.build_torus(2, 32), [-1, 1, 1, 1]),
        "kane_mele": cli.model_classifying_map(km, 32, cli.TOLERANCES),
        "dirac_map": eq.synth_dirac_map(ms.build_torus(3, 24), 1.0),
        "dirac3d": cli.model_classifying_map(dirac, 32, cli.TOLERANCES),
    }
    changed = []
    for name, f in inputs.items():
        base = _signs(f)
        for _ in range(20):
            twisted = eq.u1_twist(f, eq.random_twist(f.mesh, rng, amplitude=1.0))
            if _signs(twisted) != base:
                changed.append(name)
                break
    record(6, not changed, "20 twists on each of %s; changed: %s" % (", ".join(inputs), changed or "none"))


def test_criterion_07_kane_mele_sweep():
    t0 = time.perf_counter()
    values = cli.scan_values(0.0, 0.6, 0.01)
    tol = cli.TOLERANCES
    signs, disagree, skipped = [], [], []
    for lv in values:
        model = bl.kane_mele_model(t=1.0, lso=0.06, lv=lv, lr=0.0)
        gap, _ = bl.locate_gap_minimum(model)
        if gap < tol["gap_tol"]:
            skipped.append(round(lv, 2))
            continue
        xi = cli.model_classifying_map(model, 64, tol)
        s = inv.fkmm_index(xi).sign
        o = bl.trim_pfaffian_oracle(model, xi.mesh).product()
        if s != o:
            disagree.append(round(lv, 2))
        signs.append(s)
    flips = sum(a != b for a, b in zip(signs, signs[1:]))
    elapsed = time.perf_counter() - t0
    ok = len(values) == 61 and not disagree and flips == 1 and elapsed <= 600
    record(7, ok, "61 points, gapless skipped %s, disagreements %s, transitions %d (%.0f s)"
           % (skipped, disagree or "none", flips, elapsed))


def test_criterion_08_linalg_properties():
    rng = np.random.default_rng(8)
    worst_det, worst_cong = 0.0, 0.0
    for i in range(10_000):
        n = 2 * (i % 4 + 1)
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        a = a - a.T
        pf = la.pfaffian(a)
        det = np.linalg.det(a)
        worst_det = max(worst_det, abs(pf * pf - det) / max(1.0, abs(det)))
        if i < 2000:
            b = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            rhs = np.linalg.det(b) * pf
            worst_cong = max(worst_cong, abs(la.pfaffian(b.T @ a @ b) - rhs) / max(1.0, abs(rhs)))
    q = rng.normal(size=(1000, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    worst_q = float(np.max(np.abs(la.su2_coords(la.matrix_from_quaternion(q)) - q)))
    p, r = q[:500], q[500:]
    p = np.where((np.sum(p * r, axis=1) < 0)[:, None], -p, p)
    worst_s = 0.0
    for a, b in zip(p, r):
        worst_s = max(worst_s, np.max(np.abs(la.slerp(a, b, 0.0) - a)), np.max(np.abs(la.slerp(a, b, 1.0) - b)))
        mid = la.slerp(a, b, 0.5)
        worst_s = max(worst_s, abs(np.linalg.norm(mid) - 1), abs(mid @ a - mid @ b))
    ok = worst_det <= 1e-9 and worst_cong <= 1e-8 and worst_q <= 1e-10 and worst_s <= 1e-10
    record(8, ok, "Pf^2=det %.1e, congruence %.1e, chart round trip %.1e, slerp %.1e"
           % (worst_det, worst_cong, worst_q, worst_s))


def _gauge_change_residuals(N):
    mesh = ms.build_torus(3, N)
    out = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        form = random_form(rng, 0.1)
        gauge = hedgehog_gauge(0.9 * np.pi, rng, 0.2)
        a = inv.connection_from_form(mesh, form)
        ag = inv.gauge_transform_connection(mesh, form, gauge)
        lam = inv.lambda_integral(eq.MapField(mesh, gauge(mesh.vertices), "SU2"))
        out.append(inv.cs_local(ag) - inv.cs_local(a) - lam)
    return np.array(out)


def test_criterion_09_gauge_change_formula():
    r24 = np.abs(_gauge_change_residuals(24))
    r48 = np.abs(_gauge_change_residuals(48))
    ratio = np.max(r24) / np.max(r48)
    ok = np.max(r24) <= 1e-2 and ratio >= 3.0
    record(9, ok, "5 pairs, max residual N=24 %.3e, N=48 %.3e, ratio %.2f"
           % (np.max(r24), np.max(r48), ratio))


def test_criterion_10_averaged_connection():
    mesh = ms.build_torus(3, 24)
    rng = np.random.default_rng(7)
    f1 = eq.synth_dirac_map(mesh, 1.0)
    fields = [
        f1,
        eq.synth_dirac_map(mesh, -1.0),
        eq.synth_dirac_map(mesh, 1.5),
        eq.gauge_action(f1, eq.random_smooth_su2(mesh, rng, amplitude=0.2, equivariant=False)),
        eq.u1_twist(f1, eq.random_twist(mesh, rng, amplitude=0.2)),
    ]
    choice, log = inv.resolve_sigma_placement(fields, tol=1e-2)
    worst = {c: max(row[c] for row in log) for c in ("sigma", "plain")}
    ok = choice is not None and worst[choice] <= 1e-2
    record(10, ok, "selected %s; worst residual sigma %.2e, plain %.2e; per field %s"
           % (choice, worst["sigma"], worst["plain"], ", ".join("%.1e" % row["sigma"] for row in log)))


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion"):
            try:
                fn()
            except AssertionError:
                pass
