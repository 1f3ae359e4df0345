"""Simplicial meshes of involutive manifolds.

Every mesh carries a vertex-level involution ``tau`` that maps cells to cells,
the list of its fixed vertices and, where relevant, boundary bookkeeping.
Cells are stored positively oriented with respect to the manifold's
orientation, so integrals over the mesh are plain sums over cells.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AlignmentError, InvalidInputError, UnsupportedInputError

TAGS = ("T2", "T3", "S2", "DISK", "CYLINDER", "S3_PLUS", "S3")


@dataclass(frozen=True)
class Boundary:
    """Oriented boundary faces grouped into components.

    ``vertex_maps[c]`` sends the vertices of the mesh the component was
    built from (its base) to vertices of this mesh.
    """

    faces: np.ndarray
    component: np.ndarray
    vertex_maps: tuple = ()

    @property
    def n_components(self):
        return int(self.component.max()) + 1 if self.component.size else 0


@dataclass(frozen=True, eq=False)
class InvolutiveMesh:
    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    tau: np.ndarray
    orientation_sign_of_tau: int
    fixed_vertices: tuple
    manifold_tag: str
    N: int
    boundary: Boundary | None = None
    periodic: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def closed(self):
        return self.boundary is None or self.boundary.faces.size == 0

    @cached_property
    def edges(self):
        """Sorted unique edges, shape (E, 2) with ``e[0] < e[1]``."""
        return _edge_structure(self.cells)[0]

    @cached_property
    def cell_edges(self):
        """For each cell and each vertex pair (i < j local) the edge index
        and the orientation sign (+1 if the edge runs from local i to j)."""
        _, idx, sgn = _edge_structure(self.cells)
        return idx, sgn

    @cached_property
    def digest(self):
        blob = json.dumps(mesh_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def local_pairs(k):
    return [(i, j) for i in range(k) for j in range(i + 1, k)]


def _edge_structure(cells):
    k = cells.shape[1]
    pairs = local_pairs(k)
    a = np.stack([cells[:, i] for i, _ in pairs], axis=1)
    b = np.stack([cells[:, j] for _, j in pairs], axis=1)
    lo = np.minimum(a, b).ravel()
    hi = np.maximum(a, b).ravel()
    n = int(cells.max()) + 1
    key = lo.astype(np.int64) * n + hi
    uniq, inv = np.unique(key, return_inverse=True)
    edges = np.stack([uniq // n, uniq % n], axis=1)
    idx = inv.reshape(len(cells), len(pairs))
    sgn = np.where(a < b, 1, -1)
    return edges, idx, sgn


# ------------------------------------------------------------------ tori

def _kuhn_paths(d):
    return list(itertools.permutations(range(d)))


def build_torus(d, N):
    """Regular triangulation of the torus ``[0, 2 pi)^d`` with ``k -> -k``.

    Each square (cube) is split along its main diagonal into 2 triangles
    (6 tetrahedra).  The rule is invariant under the point reflection, so
    the involution is simplicial.
    """
    if d not in (2, 3):
        raise InvalidInputError("torus dimension must be 2 or 3", dim=d)
    N = int(N)
    if N % 2:
        raise AlignmentError(
            "N must be even so that the time-reversal invariant momenta {0, pi}^d are mesh vertices", N=N
        )
    if N < 8:
        raise InvalidInputError("N must be at least 8", N=N)
    grid = np.stack(np.meshgrid(*([np.arange(N)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    strides = N ** np.arange(d)[::-1]

    def index(pts):
        return (np.mod(pts, N) * strides).sum(axis=-1)

    cells = []
    for perm in _kuhn_paths(d):
        steps = [np.zeros(d, int)]
        for ax in perm:
            nxt = steps[-1].copy()
            nxt[ax] += 1
            steps.append(nxt)
        offs = np.array(steps)
        verts = np.stack([index(grid + o) for o in offs], axis=1)
        # orientation of the path simplex: sign of det of its edge vectors
        sign = np.sign(np.linalg.det((offs[1:] - offs[0]).astype(float)))
        if sign < 0:
            verts[:, [-2, -1]] = verts[:, [-1, -2]]
        cells.append(verts)
    cells = np.concatenate(cells, axis=0)
    tau = index(-grid)
    fixed = tuple(int(i) for i in np.flatnonzero(tau == np.arange(len(grid))))
    coords = 2 * np.pi * grid / N
    return InvolutiveMesh(
        dim=d,
        vertices=coords,
        cells=cells,
        tau=tau,
        orientation_sign_of_tau=(-1) ** d,
        fixed_vertices=fixed,
        manifold_tag="T%d" % d,
        N=N,
        periodic=True,
        meta={"grid": grid},
    )


def torus_index(mesh, idx):
    """Vertex index of integer grid coordinates on a torus mesh."""
    idx = np.asarray(idx)
    strides = mesh.N ** np.arange(mesh.dim)[::-1]
    return (np.mod(idx, mesh.N) * strides).sum(axis=-1)


# ------------------------------------------------------------------ spheres

def _sphere_faces(m):
    """Cube-surface lattice triangulation in integer coordinates [-m, m]^3."""
    tris = []

    def face(axis, sign):
        others = [a for a in range(3) if a != axis]
        out = []
        for b in range(-m, m):
            for c in range(-m, m):
                corner = []
                for db, dc in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = [0, 0, 0]
                    p[axis] = sign * m
                    p[others[0]] = b + db
                    p[others[1]] = c + dc
                    corner.append(tuple(p))
                out.append((corner[0], corner[1], corner[2]))
                out.append((corner[0], corner[2], corner[3]))
        return out

    def tau(p):
        return (p[0], -p[1], -p[2])

    for axis, sign in ((0, 1), (0, -1), (1, 1), (2, 1)):
        tris.extend(face(axis, sign))
    for axis in (1, 2):
        tris.extend([tuple(tau(p) for p in t) for t in face(axis, 1)])
    return tris


def build_sphere2(N):
    """Quad-sphere triangulation of S^2 with ``(k0, k1, k2) -> (k0, -k1, -k2)``.

    Each cube face is subdivided ``N / 2`` times, so a half great circle
    through the poles carries ``N`` edges.  The poles ``(+-1, 0, 0)`` sit at
    face centres, so ``N`` must be a multiple of 4.
    """
    N = int(N)
    if N < 8 or N % 4:
        raise InvalidInputError("sphere mesh needs N >= 8 and a multiple of 4", N=N)
    m = N // 4
    tris = _sphere_faces(m)
    keys = sorted({p for t in tris for p in t})
    lookup = {p: i for i, p in enumerate(keys)}
    lat = np.array(keys, dtype=float)
    pts = np.tan(0.25 * np.pi * lat / m)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    cells = np.array([[lookup[p] for p in t] for t in tris], dtype=np.int64)
    # orient outward
    a, b, c = pts[cells[:, 0]], pts[cells[:, 1]], pts[cells[:, 2]]
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) > 0
    cells[~outward] = cells[~outward][:, [0, 2, 1]]
    tau = np.array([lookup[(p[0], -p[1], -p[2])] for p in keys])
    fixed = tuple(int(i) for i in np.flatnonzero(tau == np.arange(len(keys))))
    return InvolutiveMesh(
        dim=2,
        vertices=pts,
        cells=cells,
        tau=tau,
        orientation_sign_of_tau=1,
        fixed_vertices=fixed,
        manifold_tag="S2",
        N=N,
    )


def _layer_cells(base_cells, levels_lo, levels_hi, nverts, base_tau=None):
    """Split prisms base x [lo, hi] into 3 tetrahedra with product orientation.

    ``levels_lo``/``levels_hi`` give the vertex offset of each level; if
    ``levels_lo`` is None the lower level collapses to vertex ``nverts``.
    Prism vertices are ranked by their ``base_tau`` orbit, so the split is
    carried to itself by the involution and stays consistent across shared
    faces.
    """
    ids = np.arange(int(base_cells.max()) + 1)
    key = ids if base_tau is None else np.minimum(ids, base_tau)
    stored_of_sorted = np.argsort(key[base_cells], axis=1, kind="stable")
    srt = np.take_along_axis(base_cells, stored_of_sorted, axis=1)
    a, b, c = srt[:, 0], srt[:, 1], srt[:, 2]
    if levels_lo is None:
        apex = np.full_like(a, nverts)
        tets = [np.stack([a + levels_hi, b + levels_hi, c + levels_hi, apex], axis=1)]
        local = [((0, 1), (1, 1), (2, 1), None)]
    else:
        lo, hi = levels_lo, levels_hi
        tets = [
            np.stack([a + lo, b + lo, c + lo, c + hi], axis=1),
            np.stack([a + lo, b + lo, b + hi, c + hi], axis=1),
            np.stack([a + lo, a + hi, b + hi, c + hi], axis=1),
        ]
        local = [
            ((0, 0), (1, 0), (2, 0), (2, 1)),
            ((0, 0), (1, 0), (1, 1), (2, 1)),
            ((0, 0), (0, 1), (1, 1), (2, 1)),
        ]
    # orientation in a reference prism chart: positively oriented base
    # triangle times the level direction
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    out = []
    for tet, loc in zip(tets, local):
        pts = []
        for item in loc:
            if item is None:
                pts.append(np.tile([1 / 3, 1 / 3, 0.0], (len(a), 1)))
            else:
                s, lev = item
                xy = ref[stored_of_sorted[:, s]]
                pts.append(np.column_stack([xy, np.full(len(a), float(lev))]))
        e = np.stack([p - pts[0] for p in pts[1:]], axis=1)
        sign = np.sign(np.linalg.det(e))
        tet = tet.copy()
        flip = sign < 0
        tet[flip] = tet[flip][:, [0, 1, 3, 2]]
        out.append(tet)
    return np.concatenate(out, axis=0)


def build_cylinder(base, M):
    """Product mesh ``base x [0, 1]`` with ``M`` layers.

    Vertex ``l * V + v`` is base vertex ``v`` at height ``l / M``.  The
    boundary has two components: the bottom carries ``-base`` and the top
    carries ``+base``.
    """
    if base.dim != 2:
        raise UnsupportedInputError("cylinder base must be a surface mesh")
    if not base.closed:
        raise UnsupportedInputError("cylinder base must be closed (no boundary)")
    M = int(M)
    if M < 4:
        raise InvalidInputError("cylinder needs at least 4 layers", M=M)
    V = base.n_vertices
    cells = np.concatenate([_layer_cells(base.cells, l * V, (l + 1) * V, None, base.tau) for l in range(M)])
    heights = np.repeat(np.arange(M + 1) / M, V)
    verts = np.column_stack([np.tile(base.vertices, (M + 1, 1)), heights])
    tau = (np.arange(M + 1)[:, None] * V + base.tau[None, :]).ravel()
    fixed = tuple(int(i) for i in np.flatnonzero(tau == np.arange(len(tau))))
    bottom = base.cells[:, [0, 2, 1]]
    top = base.cells + M * V
    bnd = Boundary(
        faces=np.concatenate([bottom, top]),
        component=np.repeat([0, 1], len(base.cells)),
        vertex_maps=(np.arange(V), np.arange(V) + M * V),
    )
    return InvolutiveMesh(
        dim=3,
        vertices=verts,
        cells=cells,
        tau=tau,
        orientation_sign_of_tau=base.orientation_sign_of_tau,
        fixed_vertices=fixed,
        manifold_tag="CYLINDER",
        N=base.N,
        boundary=bnd,
        periodic=base.periodic,
        meta={"layers": M, "base": base, "periodic_dims": 2},
    )


def _ball_levels(N):
    return max(2, N // 2)


def build_sphere3_plus(N, layers=None):
    """The half 3-sphere ``{k3 >= 0}`` as a 3-ball bounded by ``build_sphere2(N)``.

    Shells at polar angles ``pi/2 * l / L`` from the north pole carry copies of
    the sphere mesh; the outermost shell is the equator ``k3 = 0`` and its
    vertices are numbered exactly like the sphere mesh.
    """
    base = build_sphere2(N)
    L = int(layers or _ball_levels(N))
    V = base.n_vertices
    # levels: l = L (equator) first so that boundary indices match the base
    # vertex ids; l = L-1 .. 1 follow; the pole is last.
    def offset(l):
        return (L - l) * V

    cells = []
    for l in range(1, L):
        cells.append(_layer_cells(base.cells, offset(l), offset(l + 1), None, base.tau))
    pole = L * V
    cells.append(_layer_cells(base.cells, None, offset(1), pole, base.tau))
    cells = np.concatenate(cells)
    verts = []
    for l in range(L, 0, -1):
        psi = 0.5 * np.pi * l / L
        verts.append(np.column_stack([np.sin(psi) * base.vertices, np.full(V, np.cos(psi))]))
    verts.append(np.array([[0.0, 0.0, 0.0, 1.0]]))
    verts = np.concatenate(verts)
    tau = np.concatenate([np.arange(L)[:, None] * V + base.tau[None, :]]).ravel()
    tau = np.append(tau, pole)
    fixed = tuple(int(i) for i in np.flatnonzero(tau == np.arange(len(tau))))
    bnd = Boundary(
        faces=base.cells.copy(),
        component=np.zeros(len(base.cells), dtype=int),
        vertex_maps=(np.arange(V),),
    )
    return InvolutiveMesh(
        dim=3,
        vertices=verts,
        cells=cells,
        tau=tau,
        orientation_sign_of_tau=1,
        fixed_vertices=fixed,
        manifold_tag="S3_PLUS",
        N=int(N),
        boundary=bnd,
        meta={"layers": L, "base": base, "chart_orientation": -1},
    )


def build_sphere3(N, layers=None):
    """Closed S^3: the half ball glued to its mirror image across ``k3 = 0``."""
    up = build_sphere3_plus(N, layers)
    V = up.meta["base"].n_vertices
    n = up.n_vertices
    # mirror every non-equator vertex
    mirror = np.arange(n)
    mirror[V:] = np.arange(n, 2 * n - V)
    low_verts = up.vertices[V:].copy()
    low_verts[:, 3] *= -1
    verts = np.concatenate([up.vertices, low_verts])
    low_cells = mirror[up.cells][:, [0, 1, 3, 2]]
    cells = np.concatenate([up.cells, low_cells])
    tau = np.concatenate([up.tau, mirror[up.tau[V:]]])
    fixed = tuple(int(i) for i in np.flatnonzero(tau == np.arange(len(tau))))
    return InvolutiveMesh(
        dim=3,
        vertices=verts,
        cells=cells,
        tau=tau,
        orientation_sign_of_tau=1,
        fixed_vertices=fixed,
        manifold_tag="S3",
        N=int(N),
        meta={"layers": up.meta["layers"], "mirror": mirror, "chart_orientation": -1},
    )


def build_disk(N):
    """Hexagonal-lattice triangulation of the closed unit disk, ``z -> -z``.

    ``N`` is the number of rings; the boundary ring lies on ``|z| = 1``.
    """
    L = int(N)
    if L < 2:
        raise InvalidInputError("disk needs at least 2 rings", N=N)
    pts = [(a, b) for a in range(-L, L + 1) for b in range(-L, L + 1) if max(abs(a), abs(b), abs(a + b)) <= L]
    lookup = {p: i for i, p in enumerate(pts)}
    tris = []
    for a in range(-L - 1, L + 1):
        for b in range(-L - 1, L + 1):
            for tri in (((a, b), (a + 1, b), (a, b + 1)), ((a + 1, b), (a + 1, b + 1), (a, b + 1))):
                if all(p in lookup for p in tri):
                    tris.append([lookup[p] for p in tri])
    ab = np.array(pts, dtype=float)
    xy = np.column_stack([ab[:, 0] + 0.5 * ab[:, 1], np.sqrt(3) / 2 * ab[:, 1]])
    ring = np.max(np.abs(np.column_stack([ab[:, 0], ab[:, 1], ab[:, 0] + ab[:, 1]])), axis=1)
    ang = np.arctan2(xy[:, 1], xy[:, 0])
    r = ring / L
    coords = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    cells = np.array(tris, dtype=np.int64)
    tau = np.array([lookup[(-a, -b)] for (a, b) in pts])
    fixed = tuple(int(i) for i in np.flatnonzero(tau == np.arange(len(pts))))
    bfaces = _boundary_faces(cells)
    bnd = Boundary(faces=bfaces, component=np.zeros(len(bfaces), dtype=int))
    return InvolutiveMesh(
        dim=2,
        vertices=coords,
        cells=cells,
        tau=tau,
        orientation_sign_of_tau=1,
        fixed_vertices=fixed,
        manifold_tag="DISK",
        N=L,
        boundary=bnd,
    )


def _boundary_faces(cells):
    """Codimension-one faces used by exactly one cell, with induced orientation."""
    k = cells.shape[1]
    faces = []
    for drop in range(k):
        keep = [i for i in range(k) if i != drop]
        f = cells[:, keep]
        if drop % 2 == 1 and k == 3:
            f = f[:, ::-1]
        elif k == 4 and drop % 2 == 1:
            f = f[:, [1, 0, 2]]
        faces.append(f)
    faces = np.concatenate(faces)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inv.ravel()] == 1]


# ------------------------------------------------------------------ queries

def fixed_points(mesh):
    """Fixed vertices with their coordinates, in ascending index order."""
    return [(int(i), tuple(float(x) for x in mesh.vertices[i])) for i in sorted(mesh.fixed_vertices)]


def cell_edge_vectors(mesh, cells=None):
    """Edge vectors ``v_i - v_0`` of each cell, unwrapping periodic charts."""
    cells = mesh.cells if cells is None else cells
    pts = mesh.vertices[cells]
    e = pts[:, 1:] - pts[:, :1]
    if mesh.periodic:
        span = 2 * np.pi
        nd = mesh.meta.get("periodic_dims", mesh.dim)
        e[..., :nd] = (e[..., :nd] + np.pi) % span - np.pi
    return e


def signed_volumes(mesh):
    """Signed Euclidean volumes of the cells.

    For meshes embedded on a sphere (``S2``, ``S3_PLUS``, ``S3``) the chordal
    volume is signed against the outward normal.
    """
    cells = mesh.cells
    k = cells.shape[1]
    fact = 2.0 if k == 3 else 6.0
    if mesh.manifold_tag in ("S2", "S3_PLUS", "S3"):
        pts = mesh.vertices[cells]
        e = pts[:, 1:] - pts[:, :1]
        size = np.sqrt(np.abs(np.linalg.det(e @ np.swapaxes(e, 1, 2)))) / fact
        return mesh.meta.get("chart_orientation", 1) * np.sign(np.linalg.det(pts)) * size
    e = cell_edge_vectors(mesh)
    if e.shape[-1] != e.shape[-2]:
        e = e[..., : e.shape[-2]]
    return np.linalg.det(e) / fact


def oriented_measure(faces, coords, periodic=False):
    """Oriented measure of a closed face set.

    For triangles embedded in R^3 this is the enclosed signed volume; for a
    periodic planar chart it is the signed area.
    """
    pts = coords[faces]
    if periodic:
        e = pts[:, 1:, :2] - pts[:, :1, :2]
        e = (e + np.pi) % (2 * np.pi) - np.pi
        return float(np.sum(np.linalg.det(e)) / 2)
    return float(np.sum(np.linalg.det(pts[:, :, :3])) / 6)


def euler_characteristic(mesh):
    V = mesh.n_vertices
    E = len(mesh.edges)
    if mesh.dim == 2:
        return V - E + mesh.n_cells
    faces = np.concatenate([np.sort(mesh.cells[:, [i for i in range(4) if i != d]], axis=1) for d in range(4)])
    F = len(np.unique(faces, axis=0))
    return V - E + F - mesh.n_cells


def tau_cell_action(mesh):
    """For each cell: index of its tau-image cell and the orientation sign."""
    cells = mesh.cells
    img = mesh.tau[cells]
    key_c = np.sort(cells, axis=1)
    key_i = np.sort(img, axis=1)
    n = mesh.n_vertices
    def enc(k):
        out = np.zeros(len(k), dtype=object) if n ** k.shape[1] > 2**62 else np.zeros(len(k), dtype=np.int64)
        for col in range(k.shape[1]):
            out = out * n + k[:, col]
        return out
    ec = enc(key_c)
    ei = enc(key_i)
    order = np.argsort(ec)
    pos = np.searchsorted(ec[order], ei)
    pos = np.clip(pos, 0, len(ec) - 1)
    target = order[pos]
    ok = ec[target] == ei
    if not np.all(ok):
        raise InvalidInputError("tau does not map cells to cells", bad=int(np.sum(~ok)))
    # parity of the permutation taking cells[target] to img
    signs = np.empty(len(cells), dtype=int)
    tgt = cells[target]
    perm = np.argmax(img[:, :, None] == tgt[:, None, :], axis=2)
    signs[:] = _perm_parity(perm)
    return target, signs


def _perm_parity(perm):
    perm = perm.copy()
    k = perm.shape[1]
    sign = np.ones(len(perm), dtype=int)
    for i in range(k):
        for j in range(i + 1, k):
            sign *= np.where(perm[:, i] > perm[:, j], -1, 1)
    return sign


# ------------------------------------------------------------------ JSON

def mesh_to_dict(mesh):
    return {
        "schema_version": "1.0",
        "manifold_tag": mesh.manifold_tag,
        "dim": int(mesh.dim),
        "N": int(mesh.N),
        "vertices": np.asarray(mesh.vertices, dtype=float).tolist(),
        "cells": np.asarray(mesh.cells, dtype=int).tolist(),
        "tau": np.asarray(mesh.tau, dtype=int).tolist(),
        "fixed_vertices": [int(i) for i in mesh.fixed_vertices],
        "orientation_sign_of_tau": int(mesh.orientation_sign_of_tau),
    }


def mesh_to_json(mesh):
    return json.dumps(mesh_to_dict(mesh), sort_keys=True)


def mesh_from_dict(doc):
    tag = doc["manifold_tag"]
    if tag not in TAGS:
        raise InvalidInputError("unknown manifold tag", tag=tag)
    cells = np.asarray(doc["cells"], dtype=np.int64)
    default_sign = -1 if tag == "T3" else 1
    return InvolutiveMesh(
        dim=int(doc["dim"]),
        vertices=np.asarray(doc["vertices"], dtype=float),
        cells=cells,
        tau=np.asarray(doc["tau"], dtype=np.int64),
        orientation_sign_of_tau=int(doc.get("orientation_sign_of_tau", default_sign)),
        fixed_vertices=tuple(int(i) for i in doc["fixed_vertices"]),
        manifold_tag=tag,
        N=int(doc["N"]),
        periodic=tag in ("T2", "T3"),
    )


def mesh_from_json(text):
    return mesh_from_dict(json.loads(text))


def build_manifold(tag, N):
    tag = tag.upper()
    if tag == "T2":
        return build_torus(2, N)
    if tag == "T3":
        return build_torus(3, N)
    if tag == "S2":
        return build_sphere2(N)
    if tag == "S3_PLUS":
        return build_sphere3_plus(N)
    if tag == "S3":
        return build_sphere3(N)
    if tag == "DISK":
        return build_disk(N)
    raise InvalidInputError("unknown manifold", tag=tag)
