"""Sampled equivariant maps into U(2) and SU(2).

A :class:`MapField` stores one 2x2 unitary per mesh vertex.  Two flavours
exist: ``SU2`` maps obey ``xi(tau x) = xi(x)^-1`` and ``U2`` maps obey
``xi(tau x) = -Q conj(xi(x))^-1 Q``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from . import linalg as la
from .errors import (
    GaugeSmoothnessError,
    GeometryError,
    InvalidInputError,
    MeshMismatchError,
    ObstructionError,
    PhaseStepWarning,
)
from .mesh import InvolutiveMesh

FLAVORS = ("SU2", "U2")


@dataclass(frozen=True, eq=False)
class MapField:
    mesh: InvolutiveMesh
    values: np.ndarray
    flavor: str = "SU2"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.mesh.n_vertices, 2, 2):
            raise InvalidInputError("one 2x2 matrix per vertex expected", shape=list(vals.shape))
        if self.flavor not in FLAVORS:
            raise InvalidInputError("unknown flavor", flavor=self.flavor)
        if self.flavor == "SU2":
            det = np.linalg.det(vals)
            bad = np.abs(det - 1) > la.SPECIAL_TOL
            if np.any(bad):
                raise InvalidInputError(
                    "SU2 field has a vertex with det != 1", vertex=int(np.argmax(bad))
                )
        object.__setattr__(self, "values", vals)

    def inverse(self):
        return MapField(self.mesh, la.dagger(self.values), self.flavor)

    def det(self):
        return np.linalg.det(self.values)

    def at_fixed(self):
        return {int(i): self.values[i] for i in sorted(self.mesh.fixed_vertices)}


class SignData(dict):
    """Map from fixed-vertex index to +1 or -1."""

    def product(self):
        out = 1
        for v in self.values():
            out *= int(v)
        return out


@dataclass(frozen=True, eq=False)
class U1Twist:
    mesh: InvolutiveMesh
    phases: np.ndarray

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=complex)
        if ph.shape != (self.mesh.n_vertices,):
            raise InvalidInputError("one phase per vertex expected")
        if np.max(np.abs(np.abs(ph) - 1)) > 1e-10:
            raise InvalidInputError("twist phases must have modulus 1", invariant="unit_modulus")
        if np.max(np.abs(ph[self.mesh.tau] - np.conj(ph))) > 1e-8:
            raise InvalidInputError("twist must satisfy phi(tau x) = conj(phi(x))", invariant="equivariance")
        object.__setattr__(self, "phases", ph)


def _check_tag(mesh, *tags):
    if mesh.manifold_tag not in tags:
        raise InvalidInputError(
            "wrong mesh for this map", expected=list(tags), got=mesh.manifold_tag
        )


# ---------------------------------------------------------------- formulas

def disk_map_values(z):
    """The disk map: -1 at the centre, +1 on the unit circle, det 1."""
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    den = 2 * (r * r - r) + 1
    out = np.empty(z.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = (2 * r - 1) / den
    out[..., 1, 1] = (2 * r - 1) / den
    out[..., 0, 1] = -2 * np.conj(z) * (r - 1) / den
    out[..., 1, 0] = 2 * z * (r - 1) / den
    return out


def synth_disk_map(mesh):
    _check_tag(mesh, "DISK")
    z = mesh.vertices[:, 0] + 1j * mesh.vertices[:, 1]
    vals = disk_map_values(z)
    vals[mesh.fixed_vertices[0]] = -la.ID2
    return MapField(mesh, vals, "SU2", {"synthetic": "disk"})


def synth_constant(mesh, value=None):
    value = la.ID2 if value is None else np.asarray(value, dtype=complex)
    return MapField(mesh, np.tile(value, (mesh.n_vertices, 1, 1)), "SU2", {"synthetic": "constant"})


def _local_charts(mesh):
    """Distance function and local complex/real chart around a fixed vertex."""
    pts = mesh.vertices
    tag = mesh.manifold_tag
    if tag in ("T2", "T3"):
        def offset(p):
            d = pts - pts[p]
            return (d + np.pi) % (2 * np.pi) - np.pi

        def dist(p, q):
            d = (pts[q] - pts[p] + np.pi) % (2 * np.pi) - np.pi
            return float(np.linalg.norm(d))
        return offset, dist
    if tag == "S2":
        def offset(p):
            c = pts[p]
            # coordinates orthogonal to the pole, ordered to keep orientation
            ang = np.arccos(np.clip(pts @ c, -1, 1))
            perp = pts - np.outer(pts @ c, c)
            nrm = np.linalg.norm(perp, axis=1)
            scale = np.where(nrm > 1e-15, ang / np.where(nrm > 1e-15, nrm, 1), 0.0)
            loc = perp * scale[:, None]
            # basis (k1, k2) at (+1,0,0), (k2, k1) at (-1,0,0)
            if c[0] > 0:
                return loc[:, 1:3]
            return loc[:, [2, 1]]

        def dist(p, q):
            return float(np.arccos(np.clip(pts[p] @ pts[q], -1, 1)))
        return offset, dist
    if tag == "DISK":
        def offset(p):
            return pts - pts[p]

        def dist(p, q):
            return float(np.linalg.norm(pts[p] - pts[q]))
        return offset, dist
    raise InvalidInputError("no local charts for this manifold", tag=tag)


def default_radius(mesh):
    _, dist = _local_charts(mesh)
    fx = sorted(mesh.fixed_vertices)
    best = np.inf
    for i, p in enumerate(fx):
        for q in fx[i + 1:]:
            best = min(best, dist(p, q))
    return 0.25 * best


def _normalize_signs(mesh, eps):
    fx = sorted(mesh.fixed_vertices)
    if isinstance(eps, dict):
        if set(int(k) for k in eps) != set(fx):
            raise InvalidInputError("sign data must cover exactly the fixed vertices")
        return SignData({int(k): int(v) for k, v in eps.items()})
    eps = list(eps)
    if len(eps) != len(fx):
        raise InvalidInputError("need one sign per fixed vertex", expected=len(fx))
    return SignData({p: int(s) for p, s in zip(fx, eps)})


def synth_xi_epsilon(mesh, eps, radius=None):
    """Equivariant SU(2) map with ``xi(p) = eps(p) * 1`` at fixed vertices.

    A copy of the disk map is placed on a geodesic disk of the given radius
    around each fixed vertex with ``eps = -1``; the field is the identity
    elsewhere.
    """
    if mesh.dim != 2 or not mesh.closed:
        raise InvalidInputError("synth_xi_epsilon needs a closed surface mesh")
    signs = _normalize_signs(mesh, eps)
    offset, dist = _local_charts(mesh)
    r0 = default_radius(mesh) if radius is None else float(radius)
    fx = sorted(mesh.fixed_vertices)
    for i, p in enumerate(fx):
        for q in fx[i + 1:]:
            if dist(p, q) <= 2 * r0:
                raise GeometryError("disks around fixed vertices overlap", pair=[p, q], radius=r0)
    vals = np.tile(la.ID2, (mesh.n_vertices, 1, 1))
    for p in fx:
        if signs[p] > 0:
            continue
        loc = offset(p)
        z = (loc[:, 0] + 1j * loc[:, 1]) / r0
        inside = np.abs(z) < 1
        vals[inside] = disk_map_values(z[inside])
        vals[p] = -la.ID2
    return MapField(mesh, vals, "SU2", {"synthetic": "xi_epsilon", "eps": dict(signs), "radius": r0})


def synth_bump3(mesh, eps, radius=None):
    """Three-dimensional analogue on T^3: ``exp(i pi (1 - r/R) n . sigma)``
    on a ball around each fixed vertex with ``eps = -1``."""
    _check_tag(mesh, "T3")
    signs = _normalize_signs(mesh, eps)
    offset, _ = _local_charts(mesh)
    r0 = default_radius(mesh) if radius is None else float(radius)
    vals = np.tile(la.ID2, (mesh.n_vertices, 1, 1))
    for p in sorted(mesh.fixed_vertices):
        if signs[p] > 0:
            continue
        loc = offset(p)
        r = np.linalg.norm(loc, axis=1)
        inside = r < r0
        prof = 0.5 * (1 + np.cos(np.pi * r[inside] / r0))
        nrm = np.where(r[inside] > 0, r[inside], 1.0)
        axis = loc[inside] / nrm[:, None]
        vals[inside] = la.exp_antiherm2(la.from_pauli_coords(np.zeros(inside.sum()), np.pi * prof[:, None] * axis))
        vals[p] = -la.ID2
    return MapField(mesh, vals, "SU2", {"synthetic": "bump3", "eps": dict(signs), "radius": r0})


def synth_dirac_map(mesh, mass=1.0):
    """Lattice Dirac map on T^3, ``q(k) ~ (mass - sum(1 - cos k_i), sin k)``.

    Equivariant since the scalar part is even and the vector part odd.
    Lambda-degree is -1 for ``0 < mass < 2`` and 0 for ``mass < 0``.
    """
    _check_tag(mesh, "T3")
    k = mesh.vertices
    q = np.column_stack([mass - np.sum(1 - np.cos(k), axis=1), np.sin(k)])
    nrm = np.linalg.norm(q, axis=1)
    if np.min(nrm) < 1e-8:
        raise InvalidInputError("Dirac map vanishes at a vertex; mass is at a transition", mass=mass)
    return MapField(mesh, la.matrix_from_quaternion(q / nrm[:, None]), "SU2", {"synthetic": "dirac", "mass": mass})


def synth_chi(mesh):
    _check_tag(mesh, "S2")
    k = mesh.vertices
    q = np.column_stack([k, np.zeros(len(k))])
    return MapField(mesh, la.matrix_from_quaternion(q), "SU2", {"synthetic": "chi"})


def synth_chi_tilde(mesh):
    _check_tag(mesh, "S3_PLUS", "S3")
    return MapField(mesh, la.matrix_from_quaternion(mesh.vertices), "SU2", {"synthetic": "chi_tilde"})


def synth_phi_star(mesh):
    _check_tag(mesh, "S2")
    x = mesh.vertices
    vals = np.empty((len(x), 2, 2), dtype=complex)
    vals[:, 0, 0] = 1j * x[:, 0]
    vals[:, 1, 1] = 1j * x[:, 0]
    vals[:, 0, 1] = 1j * (-x[:, 1] + 1j * x[:, 2])
    vals[:, 1, 0] = 1j * (x[:, 1] + 1j * x[:, 2])
    return MapField(mesh, vals, "U2", {"synthetic": "phi_star"})


def random_odd_field(mesh, rng, modes=2, amplitude=1.0):
    """Smooth ``su(2)``-valued function ``u`` on a torus with ``u(-k) = -u(k)``.

    Returns Pauli coordinates of shape (V, 3).
    """
    if mesh.manifold_tag not in ("T2", "T3"):
        raise InvalidInputError("random odd fields need a torus mesh")
    d = mesh.dim
    k = mesh.vertices
    out = np.zeros((len(k), 3))
    vecs = [m for m in np.ndindex(*([2 * modes + 1] * d))]
    vecs = [np.array(m) - modes for m in vecs]
    vecs = [m for m in vecs if np.any(m) and tuple(m) > tuple(-m)]
    for m in vecs:
        c = rng.normal(size=3) * amplitude / (1.0 + np.dot(m, m))
        out += np.sin(k @ m)[:, None] * c
    return out


def random_smooth_su2(mesh, rng, modes=2, amplitude=1.0, equivariant=True):
    """Smooth SU(2) field ``exp(i a(k) . sigma)``; equivariant when ``a`` is odd."""
    a = random_odd_field(mesh, rng, modes, amplitude)
    if not equivariant:
        k = mesh.vertices
        for m in np.eye(mesh.dim, dtype=int):
            a += np.cos(k @ m)[:, None] * rng.normal(size=3) * 0.5 * amplitude
    vals = la.exp_antiherm2(la.from_pauli_coords(np.zeros(len(a)), a))
    return MapField(mesh, vals, "SU2", {"synthetic": "random_smooth"})


def random_twist(mesh, rng, modes=2, amplitude=1.0):
    """Random equivariant U(1) twist ``exp(i f)`` with ``f`` odd."""
    d = mesh.dim
    k = mesh.vertices
    f = np.zeros(len(k))
    if mesh.manifold_tag in ("T2", "T3"):
        for m in np.ndindex(*([2 * modes + 1] * d)):
            m = np.array(m) - modes
            if np.any(m) and tuple(m) > tuple(-m):
                f += rng.normal() * amplitude * np.sin(k @ m) / (1.0 + np.dot(m, m))
    else:
        # odd under tau for the sphere involution: linear in (k1, k2)
        c = rng.normal(size=2) * amplitude
        f = k[:, 1] * c[0] + k[:, 2] * c[1] + 0.5 * k[:, 0] * k[:, 1] * rng.normal()
    return U1Twist(mesh, np.exp(1j * f))


# ---------------------------------------------------------------- algebra

def _same_mesh(f, g):
    if f.mesh is not g.mesh and f.mesh.digest != g.mesh.digest:
        raise MeshMismatchError("fields live on different meshes")


def pointwise_product(f, g):
    _same_mesh(f, g)
    flavor = "SU2" if f.flavor == g.flavor == "SU2" else "U2"
    return MapField(f.mesh, f.values @ g.values, flavor)


def u1_twist(f, phi):
    """``diag(phi(tau x), 1) xi(x) diag(1, phi(x))`` vertexwise."""
    if phi.mesh is not f.mesh and phi.mesh.digest != f.mesh.digest:
        raise MeshMismatchError("twist and field live on different meshes")
    ph = phi.phases
    left = ph[f.mesh.tau]
    vals = f.values.copy()
    vals[:, 0, :] *= left[:, None]
    vals[:, :, 1] *= ph[:, None]
    if f.flavor == "SU2":
        det = np.linalg.det(vals)
        vals = vals / np.sqrt(det)[:, None, None] if np.max(np.abs(det - 1)) > 1e-14 else vals
    return MapField(f.mesh, vals, f.flavor)


def gauge_action(f, psi):
    """Equivariant action ``-(psi(tau x))^-1 xi(x) Q conj(psi(x)) Q``.

    For SU(2)-valued ``psi`` this is ``psi(tau x)^-1 xi(x) psi(x)``.
    """
    psi = psi.values if isinstance(psi, MapField) else np.asarray(psi, dtype=complex)
    left = la.dagger(psi[f.mesh.tau])
    right = -la.Q @ np.conj(psi) @ la.Q
    vals = left @ f.values @ right
    flavor = f.flavor
    if flavor == "SU2" and np.max(np.abs(np.linalg.det(vals) - 1)) > la.SPECIAL_TOL:
        flavor = "U2"
    return MapField(f.mesh, vals, flavor)


def equivariance_residual(f):
    v = f.values
    img = v[f.mesh.tau]
    if f.flavor == "SU2":
        err = img @ v - la.ID2
    else:
        err = img + la.Q @ np.linalg.inv(np.conj(v)) @ la.Q
    return float(np.max(np.abs(err), initial=0.0))


# ---------------------------------------------------------------- reduction

def _adjacency(mesh):
    e = mesh.edges
    n = mesh.n_vertices
    data = np.ones(len(e))
    return scipy.sparse.coo_matrix((data, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()


def unwrap_phase(mesh, theta, root):
    """Continuous lift of vertex phases along a breadth-first spanning tree.

    Returns the lifted phases and the edges whose wrapped phase step disagrees
    with the lift (a vortex or a nontrivial loop).
    """
    adj = _adjacency(mesh)
    order, pred = scipy.sparse.csgraph.breadth_first_order(adj, root, directed=False)
    if len(order) != mesh.n_vertices:
        raise InvalidInputError("mesh is not connected")
    alpha = np.full(mesh.n_vertices, np.nan)
    alpha[root] = la._wrap(theta[root])
    # process level by level for speed
    depth = np.zeros(mesh.n_vertices, dtype=int)
    for v in order[1:]:
        depth[v] = depth[pred[v]] + 1
    for lev in range(1, depth.max() + 1):
        vs = order[depth[order] == lev]
        p = pred[vs]
        alpha[vs] = alpha[p] + la._wrap(theta[vs] - theta[p])
    e = mesh.edges
    step = la._wrap(theta[e[:, 1]] - theta[e[:, 0]])
    bad = np.abs(alpha[e[:, 1]] - alpha[e[:, 0]] - step) > 1e-6
    return alpha, e[bad], step


def det_winding(mesh, theta):
    """Winding numbers of a phase field along the coordinate loops of a torus."""
    if mesh.manifold_tag not in ("T2", "T3"):
        return []
    from .mesh import torus_index

    out = []
    N = mesh.N
    for ax in range(mesh.dim):
        idx = np.zeros((N + 1, mesh.dim), dtype=int)
        idx[:, ax] = np.arange(N + 1)
        path = torus_index(mesh, idx)
        out.append(int(np.rint(np.sum(la._wrap(np.diff(theta[path]))) / (2 * np.pi))))
    return out


def su2_reduce(f):
    """Reduce an equivariant U(2) field to an equivariant SU(2) field.

    The determinant phase is lifted to a continuous ``alpha``, symmetrized to
    ``beta = (alpha + alpha o tau) / 2`` and removed with the dressing
    ``diag(conj(phi(tau x)), 1) xi(x) diag(1, conj(phi(x)))``,
    ``phi = exp(i beta / 2)``.  The branch is anchored at the lowest-index
    fixed vertex.
    """
    if f.flavor == "SU2":
        return f
    mesh = f.mesh
    theta = np.angle(f.det())
    wind = det_winding(mesh, theta)
    if any(wind):
        raise ObstructionError("determinant winds along a fundamental loop", winding=wind)
    fx = sorted(mesh.fixed_vertices)
    root = fx[0] if fx else 0
    alpha, bad, step = unwrap_phase(mesh, theta, root)
    big = np.abs(step) > np.pi - 0.05
    if np.any(big):
        warnings.warn(
            "adjacent determinant phase steps close to pi on %d edges; refine the mesh" % int(big.sum()),
            PhaseStepWarning,
        )
    if len(bad):
        raise GaugeSmoothnessError(
            "determinant phase cannot be lifted continuously (phase step >= pi); refine the mesh",
            edges=bad[:8].tolist(),
        )
    beta = 0.5 * (alpha + alpha[mesh.tau])
    phi = np.exp(0.5j * beta)
    vals = f.values.copy()
    vals[:, 0, :] *= np.conj(phi[mesh.tau])[:, None]
    vals[:, :, 1] *= np.conj(phi)[:, None]
    det = np.linalg.det(vals)
    if np.max(np.abs(det - 1)) > 1e-8:
        raise GaugeSmoothnessError("determinant phase is not tau-symmetric", worst=float(np.max(np.abs(det - 1))))
    vals /= np.sqrt(det)[:, None, None]
    return MapField(mesh, vals, "SU2", {"reduced_from": "U2"})


# ---------------------------------------------------------------- JSON

def field_to_dict(f):
    v = f.values.reshape(len(f.values), 4)
    inter = np.empty((len(v), 8))
    inter[:, 0::2] = v.real
    inter[:, 1::2] = v.imag
    return {
        "schema_version": "1.0",
        "mesh_hash": f.mesh.digest,
        "manifold_tag": f.mesh.manifold_tag,
        "N": int(f.mesh.N),
        "flavor": f.flavor,
        "values": inter.tolist(),
    }


def field_to_json(f):
    return json.dumps(field_to_dict(f), sort_keys=True)


def field_from_dict(doc, mesh):
    if doc["mesh_hash"] != mesh.digest:
        raise MeshMismatchError("field was sampled on a different mesh")
    inter = np.asarray(doc["values"], dtype=float)
    vals = (inter[:, 0::2] + 1j * inter[:, 1::2]).reshape(-1, 2, 2)
    return MapField(mesh, vals, doc["flavor"])
