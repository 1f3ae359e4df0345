"""Invariant engines: fixed-point signs, Wess-Zumino terms, Lambda integrals
and Chern-Simons invariants of equivariant maps and connections."""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .eqmap import MapField, SignData, equivariance_residual, su2_reduce
from .errors import (
    AnchorNotFoundError,
    BranchCutError,
    HypothesisViolationError,
    InvalidInputError,
    MeshMismatchError,
    NonEquivariantError,
)
from .mesh import InvolutiveMesh, _layer_cells

# Orientation constant for every 3-form and 2-form integral below.  Fixed so
# that the degree of the identity map on the closed 3-sphere mesh is +1; see
# tests/test_invariants.py::test_calibration_closed_sphere.
CALIBRATION = 1
CALIBRATION_ID = "s3-identity-degree"

BRANCH_MARGIN = 0.1
ANCHOR_MIN_DIST = 0.05
SIGN_WINDOW = 0.15
CHUNK = 200_000
SCHEMA_VERSION = "1.0"


def calibration():
    """Active calibration sign and its identifier.

    ``QBUNDLE_CALIBRATION`` may force ``+1`` or ``-1`` (used by fault
    injection tests).
    """
    env = os.environ.get("QBUNDLE_CALIBRATION")
    if env:
        try:
            val = int(float(env))
        except ValueError:
            raise InvalidInputError("QBUNDLE_CALIBRATION must be +1 or -1", value=env)
        if val not in (1, -1):
            raise InvalidInputError("QBUNDLE_CALIBRATION must be +1 or -1", value=env)
        return val, "override:%+d" % val
    return CALIBRATION, "%s:%+d" % (CALIBRATION_ID, CALIBRATION)


def _sum(x):
    """Deterministic pairwise sum (numpy's float64 reduction is a fixed tree)."""
    return float(np.sum(np.ascontiguousarray(x, dtype=float)))


# ------------------------------------------------------------------ reports

@dataclass
class InvariantReport:
    kind: str
    raw: float
    mesh_N: int
    error_estimate: float = 0.0
    fixed_point_signs: dict | None = None
    runtime_ms: float = 0.0
    model: str | None = None
    params: dict | None = None
    calibration_id: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def value_mod_1(self):
        v = float(self.raw) % 1.0
        return 0.0 if v == 1.0 else v

    @property
    def half_integer_residual(self):
        return abs(2 * self.raw - round(2 * self.raw))

    @property
    def sign(self):
        """+1 near 0 mod 1, -1 near 1/2 mod 1, None when inconclusive."""
        if self.kind == "FKMM":
            return int(round(self.raw))
        v = self.value_mod_1
        if min(v, 1 - v) <= SIGN_WINDOW:
            return 1
        if abs(v - 0.5) <= SIGN_WINDOW:
            return -1
        return None

    @property
    def status(self):
        return "accepted" if self.sign is not None else "inconclusive"

    def to_dict(self, timing=False):
        """Plain-data form.  ``runtime_ms`` is wall-clock and therefore left
        out unless ``timing`` is set, keeping identical runs byte-identical."""
        out = {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "raw": float(self.raw),
            "value_mod_1": float(self.value_mod_1) if self.kind != "FKMM" else (0.0 if self.raw > 0 else 0.5),
            "sign": self.sign,
            "status": self.status,
            "mesh_N": int(self.mesh_N),
            "half_integer_residual": float(self.half_integer_residual) if self.kind != "FKMM" else 0.0,
            "error_estimate": float(self.error_estimate),
            "fixed_point_signs": (
                {str(k): int(v) for k, v in self.fixed_point_signs.items()}
                if self.fixed_point_signs is not None
                else None
            ),
            "model": self.model,
            "params": self.params,
            "calibration_id": self.calibration_id,
            "extra": _plain(self.extra),
        }
        if timing:
            out["runtime_ms"] = float(self.runtime_ms)
        return out


def _plain(val):
    """JSON-ready copy of nested dicts, lists and numpy scalars."""
    if isinstance(val, dict):
        return {str(k): _plain(v) for k, v in val.items()}
    if isinstance(val, (list, tuple)):
        return [_plain(v) for v in val]
    if isinstance(val, np.ndarray):
        return _plain(val.tolist())
    if isinstance(val, np.generic):
        return val.item()
    return val


@dataclass(frozen=True, eq=False)
class ConnectionField:
    """Discrete 1-form: one anti-Hermitian 2x2 value per oriented mesh edge
    (stored for ``edges[e, 0] -> edges[e, 1]``)."""

    mesh: InvolutiveMesh
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (len(self.mesh.edges), 2, 2):
            raise InvalidInputError("one 2x2 value per edge expected", shape=list(v.shape))
        if np.max(np.abs(v + la.dagger(v)), initial=0.0) > 1e-10:
            raise InvalidInputError("connection values must be anti-Hermitian")
        object.__setattr__(self, "values", v)

    def on_edge(self, i, j):
        """Value on the oriented edge i -> j (negated for reversed edges)."""
        e = self.mesh.edges
        lo, hi = min(i, j), max(i, j)
        k = np.flatnonzero((e[:, 0] == lo) & (e[:, 1] == hi))
        if not len(k):
            raise InvalidInputError("no such edge", edge=[i, j])
        val = self.values[k[0]]
        return val if i < j else -val


# --------------------------------------------------------------- fixed points

def phi_kappa(f, tol=0.1):
    """Sign ``-Pf(xi(x) Q)`` at every fixed vertex of an SU(2) field."""
    if f.flavor != "SU2":
        raise InvalidInputError("phi_kappa needs an SU2 field; apply su2_reduce first")
    out = SignData()
    dist = {}
    for p in sorted(f.mesh.fixed_vertices):
        x = f.values[p]
        d_plus = np.max(np.abs(x - la.ID2))
        d_minus = np.max(np.abs(x + la.ID2))
        if min(d_plus, d_minus) > tol:
            raise NonEquivariantError(
                "fixed-vertex value is not close to +1 or -1", vertex=p, distance=float(min(d_plus, d_minus))
            )
        xq = x @ la.Q
        skew = 0.5 * (xq - xq.T)
        val = -la.pfaffian(skew).real
        out[p] = 1 if val > 0 else -1
        dist[p] = float(min(d_plus, d_minus))
    out.rounding = dist
    return out


def product_sign(signs):
    out = 1
    for v in dict(signs).values():
        out *= 1 if v > 0 else -1
    return out


def fkmm_index(f):
    t0 = time.perf_counter()
    g = su2_reduce(f) if f.flavor == "U2" else f
    signs = phi_kappa(g)
    return InvariantReport(
        kind="FKMM",
        raw=float(product_sign(signs)),
        mesh_N=f.mesh.N,
        error_estimate=max(getattr(signs, "rounding", {0: 0.0}).values(), default=0.0),
        fixed_point_signs=dict(signs),
        runtime_ms=1000 * (time.perf_counter() - t0),
        calibration_id=calibration()[1],
    )


# ------------------------------------------------------------------ quaternions

def _qmul(a, b):
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    b0, b1, b2, b3 = np.moveaxis(b, -1, 0)
    # product matching matrix_from_quaternion(a) @ matrix_from_quaternion(b);
    # the chart's imaginary units multiply as e1 e2 = -e3
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 - (a2 * b3 - a3 * b2),
            a0 * b2 + a2 * b0 - (a3 * b1 - a1 * b3),
            a0 * b3 + a3 * b0 - (a1 * b2 - a2 * b1),
        ],
        axis=-1,
    )


def _qconj(a):
    out = -a
    out[..., 0] = a[..., 0]
    return out


def _qlog(r):
    """Vector-part logarithm of unit quaternions (angle times axis)."""
    w = r[..., 0]
    v = r[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    ang = np.arctan2(s, w)
    scale = np.where(s > 1e-300, ang / np.where(s > 1e-300, s, 1.0), 1.0)
    return v * scale[..., None]


def _relative_su2(vals):
    """Quaternions of ``g0^-1 g_i`` normalized to det 1 (principal root)."""
    rel = la.dagger(vals[:, :1]) @ vals
    det = rel[..., 0, 0] * rel[..., 1, 1] - rel[..., 0, 1] * rel[..., 1, 0]
    rel = rel / np.sqrt(det)[..., None, None]
    return la.quaternion_of(rel)


def _det3(a, b, c):
    return np.einsum("...i,...i->...", a, np.cross(b, c))


# -------------------------------------------------------------- Lambda kernel

@dataclass
class LambdaResult:
    value: float
    volume_route: float
    error_estimate: float
    max_edge_angle: float
    per_cell: np.ndarray | None = None


def _edge_angles_quat(q):
    """Relative rotation angles of the 6 edges of each cell, from quaternions."""
    out = []
    for i, j in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
        d = np.einsum("...i,...i->...", q[:, i], q[:, j])
        out.append(np.arccos(np.clip(d, -1, 1)))
    return np.max(np.stack(out, axis=1), axis=1)


def _lambda_chunk(vals, quat):
    """Per-cell Lambda by the trace route and by the volume route.

    ``vals`` has shape (C, 4, 2, 2); ``quat`` (C, 4, 4) or None.
    """
    if quat is not None:
        rel = _qmul(_qconj(quat[:, :1]), quat)
        a = _qlog(rel[:, 1:])
        # det of logs equals Tr(u1 [u2, u3]) / 4 in Pauli coordinates
        trace_route = -_det3(a[:, 0], a[:, 1], a[:, 2]) / (12 * np.pi**2)
        angle = np.arccos(np.clip(rel[:, 1:, 0], -1, 1))
        ang = np.maximum(np.max(angle, axis=1), _edge_angles_quat(quat))
        rq = rel
    else:
        rel = la.dagger(vals[:, :1]) @ vals[:, 1:]
        u = la.log_unitary2(rel.reshape(-1, 2, 2), check=False).reshape(-1, 3, 2, 2)
        comm = u[:, 1] @ u[:, 2] - u[:, 2] @ u[:, 1]
        tr = np.trace(u[:, 0] @ comm, axis1=-2, axis2=-1).real
        trace_route = -tr / (48 * np.pi**2)
        ang = np.zeros(len(vals))
        for i, j in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
            m = la.dagger(vals[:, i]) @ vals[:, j]
            ang = np.maximum(ang, la.max_eigen_angle2(m))
        rq = _relative_su2(vals)
    # volume route: log chart centred at the normalized quaternion mean
    cen = rq.sum(axis=1)
    nrm = np.linalg.norm(cen, axis=-1)
    cen = np.where(nrm[:, None] > 1e-12, cen / np.where(nrm > 1e-12, nrm, 1)[:, None], rq[:, 0])
    x = _qlog(_qmul(_qconj(cen)[:, None, :], rq))
    e = x[:, 1:] - x[:, :1]
    vol = _det3(e[:, 0], e[:, 1], e[:, 2]) / 6.0
    volume_route = -vol / (2 * np.pi**2)
    return trace_route, volume_route, ang


def _lambda_cells(values, cells, su2, keep=False):
    tr_parts, vol_parts, ang_max, cellvals = [], [], 0.0, []
    q_all = la.quaternion_of(values) if su2 else None
    for start in range(0, len(cells), CHUNK):
        c = cells[start:start + CHUNK]
        if su2:
            tr, vol, ang = _lambda_chunk(None, q_all[c])
        else:
            tr, vol, ang = _lambda_chunk(values[c], None)
        tr_parts.append(tr)
        vol_parts.append(vol)
        ang_max = max(ang_max, float(np.max(ang, initial=0.0)))
        if ang_max > np.pi - BRANCH_MARGIN:
            bad = np.flatnonzero(ang > np.pi - BRANCH_MARGIN)[:8] + start
            raise BranchCutError(
                "relative rotation on a cell edge too close to pi; refine the mesh",
                worst_cells=bad.tolist(),
                max_angle=ang_max,
            )
    tr = np.concatenate(tr_parts) if tr_parts else np.zeros(0)
    vol = np.concatenate(vol_parts) if vol_parts else np.zeros(0)
    return tr, vol, ang_max


def lambda_integral_detail(f, cells=None, keep_cells=False):
    mesh = f.mesh
    if mesh.dim != 3 and cells is None:
        raise InvalidInputError("lambda_integral needs a 3-dimensional mesh")
    cells = mesh.cells if cells is None else cells
    cal, _ = calibration()
    su2 = f.flavor == "SU2"
    tr, vol, ang = _lambda_cells(f.values, cells, su2)
    a = cal * _sum(tr)
    b = cal * _sum(vol)
    return LambdaResult(a, b, abs(a - b), ang, cal * tr if keep_cells else None)


def lambda_integral(f):
    """Integral of ``-(1/24 pi^2) Tr((g^-1 dg)^3)`` over the mesh."""
    return lambda_integral_detail(f).value


# ------------------------------------------------------------------ WZ term

def _anchor_candidates():
    n_eta, n_ang = 10, 20
    u = (np.arange(n_eta) + 0.5) / n_eta
    eta = np.arcsin(np.sqrt(u))
    ang = 2 * np.pi * np.arange(n_ang) / n_ang
    e, a1, a2 = np.meshgrid(eta, ang, ang + np.pi / n_ang, indexing="ij")
    pts = np.stack(
        [np.cos(e) * np.cos(a1), np.cos(e) * np.sin(a1), np.sin(e) * np.cos(a2), np.sin(e) * np.sin(a2)], axis=-1
    ).reshape(-1, 4)
    axes = np.concatenate([np.eye(4), -np.eye(4)])
    return np.concatenate([axes, pts])


def choose_anchor(quats):
    """Point ``p`` on S^3 maximizing the minimal distance to the image; the
    contraction target is ``c = -p``."""
    quats = np.asarray(quats, dtype=float)
    mean = quats.mean(axis=0)
    cands = [_anchor_candidates()]
    if np.linalg.norm(mean) > 1e-6:
        cands.insert(0, -mean[None] / np.linalg.norm(mean))
    cands = np.concatenate(cands)
    img = np.unique(np.round(quats, 12), axis=0)
    best = np.full(len(cands), np.inf)
    for start in range(0, len(img), 4096):
        d = np.clip(img[start:start + 4096] @ cands.T, -1, 1)
        best = np.minimum(best, np.arccos(d).min(axis=0))
    k = int(np.argmax(best))
    return cands[k], float(best[k])


def _wz_layers(base):
    """Default number of contraction layers: proportional to the mesh size so
    that the discretization error scales uniformly under refinement."""
    return max(8, base.N // 2)


def wz_extension_integral(f, layers=None, anchor=None):
    """Lambda integral of the slerp contraction of ``f`` onto a constant.

    Returns ``(trace_route, volume_route, info)``.
    """
    base = f.mesh
    if base.dim != 2 or not base.closed:
        raise InvalidInputError("wz_term needs a closed surface mesh")
    if f.flavor != "SU2":
        raise InvalidInputError("wz_term needs an SU2 field")
    q = la.quaternion_of(f.values)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    if anchor is None:
        p, dmin = choose_anchor(q)
        if dmin < ANCHOR_MIN_DIST:
            raise AnchorNotFoundError(
                "image too dense in SU(2) to choose a contraction target; refine or split the map",
                min_distance=dmin,
            )
    else:
        p = np.asarray(anchor, dtype=float)
        dmin = float(np.min(np.arccos(np.clip(q @ p, -1, 1))))
    c = -p
    M = int(layers) if layers else _wz_layers(base)
    V = base.n_vertices
    cells = _layer_cells(base.cells, 0, V, None)
    cal, _ = calibration()
    # slerp from c (t = 0) to xi (t = 1) along great circles
    cosw = np.clip(q @ c, -1.0, 1.0)
    omega = np.arccos(cosw)
    sin_w = np.sin(omega)

    def level(t):
        if t == 0:
            return np.tile(c, (V, 1))
        if t == 1:
            return q
        small = sin_w < 1e-12
        wa = np.where(small, 1 - t, np.sin((1 - t) * omega) / np.where(small, 1, sin_w))
        wb = np.where(small, t, np.sin(t * omega) / np.where(small, 1, sin_w))
        out = wa[:, None] * c[None] + wb[:, None] * q
        return out / np.linalg.norm(out, axis=1, keepdims=True)

    tr_total, vol_total, ang_max = [], [], 0.0
    lo = level(0.0)
    for l in range(M):
        hi = level((l + 1) / M)
        both = np.concatenate([lo, hi])
        tr, vol, ang = _lambda_chunk(None, both[cells])
        if float(np.max(ang)) > np.pi - BRANCH_MARGIN:
            raise BranchCutError("relative rotation too close to pi in the extension; refine the mesh", layer=l)
        ang_max = max(ang_max, float(np.max(ang)))
        tr_total.append(_sum(tr))
        vol_total.append(_sum(vol))
        lo = hi
    info = {"anchor": (-c).tolist(), "anchor_distance": dmin, "layers": M, "max_edge_angle": ang_max}
    return cal * _sum(tr_total), cal * _sum(vol_total), info


def wz_term(f, layers=None):
    """Wess-Zumino term of an SU(2) field on a closed surface, mod 1."""
    t0 = time.perf_counter()
    a, b, info = wz_extension_integral(f, layers)
    rep = InvariantReport(
        kind="WZ",
        raw=a,
        mesh_N=f.mesh.N,
        error_estimate=abs(a - b),
        runtime_ms=1000 * (time.perf_counter() - t0),
        calibration_id=calibration()[1],
        extra=info,
    )
    return rep


def mod1_centered(x):
    """Representative of x mod 1 in [-1/2, 1/2)."""
    return (x + 0.5) % 1.0 - 0.5


# ---------------------------------------------------------- surface 2-forms

def _whitney_vertex_values(edge_vals, k):
    """Vertex values of the Whitney interpolant on a k-simplex.

    ``edge_vals[:, p]`` is the value on local pair ``local_pairs(k)[p]``
    oriented i -> j.  Returns coefficients on ``d lambda_1 .. d lambda_{k-1}``
    at each vertex, shape (C, k, k-1, ...).
    """
    from .mesh import local_pairs

    pairs = local_pairs(k)
    dl = np.vstack([-np.ones(k - 1), np.eye(k - 1)])
    shape = edge_vals.shape[2:]
    out = np.zeros((edge_vals.shape[0], k, k - 1) + shape, dtype=edge_vals.dtype)
    for p, (i, j) in enumerate(pairs):
        val = edge_vals[:, p]
        for r in range(k - 1):
            # at vertex i the form a_ij W_ij equals a_ij d lambda_j
            if dl[j, r]:
                out[:, i, r] += dl[j, r] * val
            # at vertex j it equals -a_ij d lambda_i
            if dl[i, r]:
                out[:, j, r] -= dl[i, r] * val
    return out


def _pauli_pair_trace(x, y):
    """Tr(x y) for anti-Hermitian x, y given as Pauli coordinate tuples."""
    return -2 * (x[0] * y[0] + np.sum(x[1] * y[1], axis=-1))


def _as_pauli(u):
    s, a = la.pauli_coords(u)
    return s, a


def pw_surface_term(f, g):
    """``(1/8 pi^2) * integral Tr(f^-1 df ^ dg g^-1)`` over a closed surface."""
    if f.mesh is not g.mesh and f.mesh.digest != g.mesh.digest:
        raise MeshMismatchError("fields live on different meshes")
    mesh = f.mesh
    cells = mesh.cells
    from .mesh import local_pairs

    pairs = local_pairs(3)
    fa, gb = [], []
    for i, j in pairs:
        fi, fj = f.values[cells[:, i]], f.values[cells[:, j]]
        gi, gj = g.values[cells[:, i]], g.values[cells[:, j]]
        fa.append(la.log_unitary2(la.dagger(fi) @ fj))
        gb.append(la.log_unitary2(gj @ la.dagger(gi)))
    fa = np.stack(fa, axis=1)
    gb = np.stack(gb, axis=1)
    A = _whitney_vertex_values(fa, 3)  # (C, 3 vertices, 2 components, 2, 2)
    B = _whitney_vertex_values(gb, 3)
    As, Aa = la.pauli_coords(A)
    Bs, Ba = la.pauli_coords(B)
    # integral of lambda_v lambda_w over the reference triangle
    w = (np.ones((3, 3)) + np.eye(3)) / 24.0
    total = np.zeros(len(cells))
    for v in range(3):
        for u in range(3):
            t12 = _pauli_pair_trace((As[:, v, 0], Aa[:, v, 0]), (Bs[:, u, 1], Ba[:, u, 1]))
            t21 = _pauli_pair_trace((As[:, v, 1], Aa[:, v, 1]), (Bs[:, u, 0], Ba[:, u, 0]))
            total += w[v, u] * (t12 - t21)
    cal, _ = calibration()
    return cal * _sum(total) / (8 * np.pi**2)


def polyakov_wiegmann_residual(f, g, layers=None):
    from .eqmap import pointwise_product

    fg = pointwise_product(f, g)
    wz = [wz_extension_integral(h, layers)[0] for h in (fg, f, g)]
    s = pw_surface_term(f, g)
    return abs(mod1_centered(wz[0] - wz[1] - wz[2] - s))


# -------------------------------------------------------------- connections

def sigma_action(u):
    """Algebra-level involution ``u -> -Q conj(u) Q``."""
    return -la.Q @ np.conj(u) @ la.Q


def edge_logs(f):
    e = f.mesh.edges
    rel = la.dagger(f.values[e[:, 0]]) @ f.values[e[:, 1]]
    return la.log_unitary2(rel)


def average_connection(f, candidate="sigma"):
    """Edge values ``1/2 sigma(log(xi(v0)^-1 xi(v1)))`` (or without sigma)."""
    if candidate not in ("sigma", "plain"):
        raise InvalidInputError("candidate must be 'sigma' or 'plain'")
    res = equivariance_residual(f)
    if res > 1e-4:
        raise NonEquivariantError("field is not equivariant", residual=res)
    logs = edge_logs(f)
    vals = 0.5 * (sigma_action(logs) if candidate == "sigma" else logs)
    return ConnectionField(f.mesh, vals, {"candidate": candidate})


def resolve_sigma_placement(fields, tol=1e-2):
    """Pick the connection candidate satisfying ``cs_local = Lambda / 2``.

    Both candidates are evaluated on every field.  A candidate is admissible
    if it passes on all fields; ``sigma`` wins ties.  Returns the choice and
    the residual log.
    """
    log = []
    ok = {"sigma": True, "plain": True}
    for f in fields:
        half = 0.5 * lambda_integral(f)
        row = {}
        for cand in ("sigma", "plain"):
            r = abs(cs_local(average_connection(f, cand)) - half)
            row[cand] = r
            ok[cand] &= r <= tol
        log.append(row)
    if ok["sigma"]:
        choice = "sigma"
    elif ok["plain"]:
        choice = "plain"
    else:
        choice = None
    return choice, log


_DL3 = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def _cubic_weights():
    w = np.zeros((4, 4, 4))
    for a in range(4):
        for b in range(4):
            for c in range(4):
                n = len({a, b, c})
                w[a, b, c] = {3: 1.0, 2: 2.0, 1: 6.0}[n] / 720.0
    return w


_W3 = _cubic_weights()


def cs_local(A):
    """``(1/8 pi^2) * integral Tr(A ^ dA + 2/3 A ^ A ^ A)`` over a closed 3-mesh.

    Edge values are interpolated by Whitney forms; both terms are then
    polynomial on each tetrahedron and integrated exactly.
    """
    mesh = A.mesh
    if mesh.dim != 3:
        raise InvalidInputError("cs_local needs a 3-dimensional mesh")
    idx, sgn = mesh.cell_edges
    s_all, a_all = la.pauli_coords(A.values)
    cal, _ = calibration()
    parts = []
    for start in range(0, len(mesh.cells), CHUNK):
        sl = slice(start, start + CHUNK)
        es = s_all[idx[sl]] * sgn[sl]
        ea = a_all[idx[sl]] * sgn[sl][..., None]
        # edge value coordinates (s, a) stacked -> (C, 6, 4)
        ev = np.concatenate([es[..., None], ea], axis=-1)
        vv = _whitney_vertex_values(ev, 4)  # (C, 4 vertices, 3 components, 4)
        # constant derivative d_q A_p = sum_v DL[v, q] A_p(v)
        dA = np.einsum("vq,cvpk->cqpk", _DL3, vv)
        curl = np.stack(
            [dA[:, 1, 2] - dA[:, 2, 1], dA[:, 2, 0] - dA[:, 0, 2], dA[:, 0, 1] - dA[:, 1, 0]], axis=1
        )  # (C, component r, 4)
        # integral of lambda_v over the reference tetrahedron is 1/24
        mean_A = vv.sum(axis=1) / 24.0
        quad = -2.0 * np.einsum("crk,crk->c", mean_A, curl)
        # cubic term: 8 det M with rows M_p = Pauli vector of component p
        rows = vv[..., 1:]  # (C, 4, 3, 3)
        r0 = rows[:, :, 0]
        r1 = rows[:, :, 1]
        r2 = rows[:, :, 2]
        cross = np.cross(r1[:, :, None, :], r2[:, None, :, :])  # (C, b, c, 3)
        trip = np.einsum("cai,cbki->cabk", r0, cross)
        cubic = 8.0 * np.einsum("cabk,abk->c", trip, _W3)
        parts.append((quad + cubic) / (8 * np.pi**2))
    return cal * _sum(np.concatenate(parts)) if parts else 0.0


def connection_from_form(mesh, form, samples=3):
    """Edge values of a smooth matrix 1-form by Gauss-Legendre quadrature.

    ``form(points)`` returns anti-Hermitian components of shape (n, dim, 2, 2).
    """
    e = mesh.edges
    p0 = mesh.vertices[e[:, 0]]
    d = mesh.vertices[e[:, 1]] - p0
    if mesh.periodic:
        d = (d + np.pi) % (2 * np.pi) - np.pi
    x, w = np.polynomial.legendre.leggauss(samples)
    out = np.zeros((len(e), 2, 2), dtype=complex)
    for xi, wi in zip(0.5 * (x + 1), 0.5 * w):
        comp = form(p0 + xi * d)
        out += wi * np.einsum("np,npij->nij", d, comp)
    return ConnectionField(mesh, 0.5 * (out - la.dagger(out)))


def gauge_transform_connection(mesh, form, gauge, samples=3):
    """Edge values of ``g^-1 A g + g^-1 dg`` for smooth ``A`` and ``g``.

    The first term is integrated by quadrature, the second exactly as the
    principal log of ``g(v0)^-1 g(v1)``.
    """
    def conj_form(pts):
        g = gauge(pts)
        a = form(pts)
        return la.dagger(g)[:, None] @ a @ g[:, None]

    base = connection_from_form(mesh, conj_form, samples)
    e = mesh.edges
    g = gauge(mesh.vertices)
    extra = la.log_unitary2(la.dagger(g[e[:, 0]]) @ g[e[:, 1]])
    return ConnectionField(mesh, base.values + extra)


def pure_gauge_connection(g):
    return ConnectionField(g.mesh, edge_logs(g))


def cs_invariant(f):
    """Chern-Simons invariant of the averaged connection, ``raw = Lambda / 2``.

    U(2) fields are reduced to SU(2) first.
    """
    t0 = time.perf_counter()
    mesh = f.mesh
    if mesh.dim != 3 or not mesh.closed:
        raise InvalidInputError("cs_invariant needs a closed 3-dimensional mesh")
    if mesh.orientation_sign_of_tau != -1:
        raise HypothesisViolationError("the involution must reverse orientation", tag=mesh.manifold_tag)
    res = equivariance_residual(f)
    if res > 1e-4:
        raise NonEquivariantError("field is not equivariant", residual=res)
    if f.flavor == "U2":
        f = su2_reduce(f)
    lam = lambda_integral_detail(f)
    return InvariantReport(
        kind="CS",
        raw=0.5 * lam.value,
        mesh_N=mesh.N,
        error_estimate=0.5 * lam.error_estimate,
        runtime_ms=1000 * (time.perf_counter() - t0),
        calibration_id=calibration()[1],
        extra={"max_edge_angle": lam.max_edge_angle, "equivariance_residual": res},
    )


# -------------------------------------------------------------- convergence

@dataclass
class ConvergenceReport:
    levels: list
    raws: list
    order: float | None
    extrapolated: float | None
    status: str
    reason: str = ""

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "levels": [int(n) for n in self.levels],
            "raws": [float(r) for r in self.raws],
            "order": None if self.order is None else float(self.order),
            "extrapolated": None if self.extrapolated is None else float(self.extrapolated),
            "status": self.status,
            "reason": self.reason,
        }


def refine_and_extrapolate(task, levels, tol=1e-2):
    """Run ``task(N)`` on each level and Richardson-extrapolate the result.

    ``task`` returns a raw real value.  Accepted when the errors shrink
    monotonically, successive levels agree in sign and the extrapolated
    value lies within ``tol`` of a half-integer.
    """
    levels = sorted(int(n) for n in levels)
    if len(levels) < 3:
        raise InvalidInputError("need at least three levels")
    raws = [float(task(n)) for n in levels]
    diffs = [abs(raws[i + 1] - raws[i]) for i in range(len(raws) - 1)]
    signs = []
    for r in raws:
        v = r % 1.0
        signs.append(1 if min(v, 1 - v) <= SIGN_WINDOW else (-1 if abs(v - 0.5) <= SIGN_WINDOW else 0))
    if max(diffs) < 1e-13:
        return ConvergenceReport(levels, raws, None, raws[-1], "accepted" if signs[-1] else "inconclusive",
                                 "levels agree to round-off")
    if any(diffs[i + 1] >= diffs[i] for i in range(len(diffs) - 1)) or diffs[-1] == 0.0:
        return ConvergenceReport(levels, raws, None, None, "inconclusive", "error sequence is not decreasing")
    ratio = levels[-1] / levels[-2]
    ratio_prev = levels[-2] / levels[-3]
    order = math.log(diffs[-2] / diffs[-1]) / math.log(0.5 * (ratio + ratio_prev))
    extrap = raws[-1] + (raws[-1] - raws[-2]) / (ratio**order - 1)
    if len(set(signs)) != 1 or signs[0] == 0:
        return ConvergenceReport(levels, raws, order, extrap, "inconclusive", "levels disagree in sign")
    if abs(2 * extrap - round(2 * extrap)) > 2 * tol:
        return ConvergenceReport(levels, raws, order, extrap, "inconclusive", "extrapolation off a half-integer")
    return ConvergenceReport(levels, raws, order, extrap, "accepted")
