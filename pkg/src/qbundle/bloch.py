"""Tight-binding Bloch Hamiltonians with fermionic time reversal.

Momenta are reduced coordinates ``k in [0, 2 pi)^d`` matching the torus
meshes.  Time reversal is ``Theta = T o conj`` with ``T conj(T) = -1`` and
``T conj(H(k)) T^-1 = H(-k)``.

Pipeline: eigenframes -> smooth periodic occupied frame by parallel
transport -> classifying map ``xi(k) = w(k) Q`` with the sewing matrix
``w(k) = F(-k)^dagger T conj(F(k))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import linalg as la
from .eqmap import MapField, SignData
from .errors import (
    CornerReductionError,
    GapError,
    GaugeSmoothnessError,
    InvalidInputError,
    ObstructionError,
)
from .mesh import InvolutiveMesh, torus_index

S0 = np.eye(2, dtype=complex)
ISY = np.array([[0, 1], [-1, 0]], dtype=complex)  # i sigma_y


@dataclass(frozen=True, eq=False)
class TightBindingModel:
    """Bloch Hamiltonian family ``k -> H(k)``.

    ``bloch`` maps an array of momenta of shape (..., dim) to Hermitian
    matrices of shape (..., band_count, band_count).
    """

    name: str
    dim: int
    band_count: int
    occupied_count: int
    params: dict
    bloch: Callable
    trs_unitary: np.ndarray

    def __post_init__(self):
        if self.band_count % 2 or self.occupied_count % 2:
            raise InvalidInputError("band and occupied counts must be even")
        if not 0 < self.occupied_count < self.band_count:
            raise InvalidInputError("occupied count must lie strictly between 0 and the band count")
        t = np.asarray(self.trs_unitary, dtype=complex)
        if t.shape != (self.band_count,) * 2 or not la.is_unitary(t):
            raise InvalidInputError("time reversal needs a unitary band_count x band_count matrix")
        if np.max(np.abs(t @ t.conj() + np.eye(self.band_count))) > 1e-12:
            raise InvalidInputError("time reversal must satisfy T conj(T) = -1")
        object.__setattr__(self, "trs_unitary", t)

    def hamiltonian(self, k):
        k = np.asarray(k, dtype=float)
        if k.shape[-1] != self.dim:
            raise InvalidInputError("momentum dimension mismatch", expected=self.dim, got=k.shape[-1])
        return self.bloch(k)

    def hermiticity_residual(self, k):
        h = self.hamiltonian(k)
        return float(np.max(np.abs(h - la.dagger(h))))

    def trs_residual(self, k):
        """max |T conj(H(k)) T^-1 - H(-k)| over the sample."""
        k = np.asarray(k, dtype=float)
        t = self.trs_unitary
        lhs = t @ self.hamiltonian(k).conj() @ t.conj().T
        return float(np.max(np.abs(lhs - self.hamiltonian(-k))))

    def spectrum(self, k):
        return np.linalg.eigvalsh(self.hamiltonian(k))

    def gap(self, k):
        """Direct gap between the occupied and the first empty band."""
        e = self.spectrum(k)
        n = self.occupied_count
        return e[..., n] - e[..., n - 1]


def _kron(a, b):
    """Kronecker product broadcasting over leading axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = a[..., :, None, :, None] * b[..., None, :, None, :]
    n = a.shape[-2] * b.shape[-2]
    m = a.shape[-1] * b.shape[-1]
    return np.broadcast_to(out, shape + out.shape[-4:]).reshape(shape + (n, m))


def _scal(x, m):
    return np.asarray(x)[..., None, None] * m


# ------------------------------------------------------------------ models

def atomic_model(dim=2):
    """Flat bands ``H = diag(-1, -1, 1, 1)``, orbital x spin basis."""

    def bloch(k):
        h = np.diag([-1.0, -1.0, 1.0, 1.0]).astype(complex)
        return np.broadcast_to(h, k.shape[:-1] + (4, 4)).copy()

    return TightBindingModel("atomic", dim, 4, 2, {}, bloch, _kron(S0, ISY))


def kane_mele_model(t=1.0, lso=0.06, lv=0.0, lr=0.0):
    """Kane-Mele honeycomb model in spin x sublattice basis.

    Parameters
    ----------
    t : float
        Nearest-neighbour hopping.
    lso : float
        Intrinsic spin-orbit coupling; the sublattice gap at K is
        ``2 |3 sqrt(3) lso - lv|`` when ``lr = 0``.
    lv : float
        Staggered sublattice potential.
    lr : float
        Rashba coupling.

    Notes
    -----
    Lattice vectors ``a1 = (sqrt3, 0)``, ``a2 = (sqrt3/2, 3/2)``, B site at
    ``(a1 + a2) / 3``; the B neighbours of an A site sit in cells 0, -a1, -a2.
    The topological phase is ``3 sqrt(3) lso > lv`` (for ``lr = 0``).
    """
    a1 = np.array([np.sqrt(3.0), 0.0])
    a2 = np.array([np.sqrt(3.0) / 2, 1.5])
    d0 = (a1 + a2) / 3
    bonds = [d0, d0 - a1, d0 - a2]
    tz = np.diag([1.0, -1.0]).astype(complex)
    ab = np.array([[0, 1], [0, 0]], dtype=complex)

    def bloch(k):
        k1, k2 = k[..., 0], k[..., 1]
        phases = [np.ones_like(k1, dtype=complex), np.exp(-1j * k1), np.exp(-1j * k2)]
        f = t * sum(phases)
        h0 = _scal(f, ab)
        h0 = h0 + la.dagger(h0) + lv * tz
        g = 2 * (np.sin(k1) - np.sin(k2) - np.sin(k1 - k2))
        h = _kron(S0, h0) + lso * _kron(_scal(g, la.SIGMA_Z), tz)
        if lr:
            hr = 0
            for ph, d in zip(phases, bonds):
                s = 1j * lr * (d[1] * la.SIGMA_X - d[0] * la.SIGMA_Y)
                hr = hr + _kron(_scal(ph, s), ab)
            h = h + hr + la.dagger(hr)
        return h

    params = {"t": t, "lso": lso, "lv": lv, "lr": lr}
    return TightBindingModel("kane_mele", 2, 4, 2, params, bloch, _kron(ISY, S0))


def kane_mele_critical_lv(lso):
    """Staggering at which the Kane-Mele gap closes at K (``lr = 0``)."""
    return 3 * np.sqrt(3.0) * lso


def bhz_model(m=1.0, a=1.0, b=1.0, c=0.0):
    """Square-lattice BHZ model in spin x orbital basis.

    ``h(k) = (m - 2 b (2 - cos kx - cos ky)) sz + a (sin kx sx + sin ky sy)``
    and ``H = diag(h(k), conj(h(-k))) + c``.  Topological for ``0 < m / b < 4``
    and ``4 < m / b < 8``.
    """

    def block(k):
        kx, ky = k[..., 0], k[..., 1]
        mass = m - 2 * b * (2 - np.cos(kx) - np.cos(ky))
        return _scal(mass, la.SIGMA_Z) + a * (_scal(np.sin(kx), la.SIGMA_X) + _scal(np.sin(ky), la.SIGMA_Y))

    up = np.diag([1.0, 0.0]).astype(complex)
    dn = np.diag([0.0, 1.0]).astype(complex)

    def bloch(k):
        h = _kron(up, block(k)) + _kron(dn, block(-k).conj())
        return h + c * np.eye(4)

    params = {"m": m, "a": a, "b": b, "c": c}
    return TightBindingModel("bhz", 2, 4, 2, params, bloch, _kron(ISY, S0))


def dirac3d_model(m=1.0, b=1.0, v=1.0):
    """Cubic-lattice Dirac model ``H = M(k) tz + v sum_i sin k_i tx si``.

    ``M(k) = m - b sum_i (1 - cos k_i)``.  Strong phase for ``0 < m / b < 2``
    and ``4 < m / b < 6``; weak phase for ``2 < m / b < 4``; trivial for
    ``m / b < 0`` or ``m / b > 6``.  Basis orbital x spin.
    """
    tz = np.diag([1.0, -1.0]).astype(complex)
    tx = la.SIGMA_X

    def bloch(k):
        mass = m - b * np.sum(1 - np.cos(k), axis=-1)
        h = _kron(_scal(mass, tz), S0)
        for i in range(3):
            h = h + v * _kron(_scal(np.sin(k[..., i]), tx), la.PAULI[i])
        return h

    params = {"m": m, "b": b, "v": v}
    return TightBindingModel("dirac3d", 3, 4, 2, params, bloch, _kron(S0, ISY))


MODELS = {
    "atomic": atomic_model,
    "kane_mele": kane_mele_model,
    "bhz": bhz_model,
    "dirac3d": dirac3d_model,
}


def make_model(name, **params):
    if name not in MODELS:
        raise InvalidInputError("unknown model", model=name, known=sorted(MODELS))
    try:
        return MODELS[name](**params)
    except TypeError as exc:
        raise InvalidInputError("bad model parameters", model=name, detail=str(exc)) from None


def locate_gap_minimum(model, N=32, starts=6):
    """Smallest direct gap of ``model`` over the Brillouin zone.

    The gap is sampled on an ``N^d`` grid and the ``starts`` smallest
    samples are polished with Nelder-Mead.  Returns ``(gap, k)``.
    """
    import scipy.optimize

    axes = [2 * np.pi * np.arange(N) / N] * model.dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.dim)
    gaps = model.gap(grid)
    best_gap, best_k = float(np.min(gaps)), grid[int(np.argmin(gaps))]
    h = 2 * np.pi / N
    for i in np.argsort(gaps, kind="stable")[:starts]:
        res = scipy.optimize.minimize(
            lambda k: float(model.gap(k)), grid[i], method="Nelder-Mead",
            options={"initial_simplex": grid[i] + np.vstack([np.zeros(model.dim), h * np.eye(model.dim)]),
                     "xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000},
        )
        if res.fun < best_gap:
            best_gap, best_k = float(res.fun), np.mod(res.x, 2 * np.pi)
    return best_gap, best_k


def dirac3d_parity_signs(model):
    """Fu-Kane parity product per TRIM for the Dirac model.

    At a TRIM ``H = M(k) tz`` commutes with the inversion ``tz``; the
    occupied Kramers pair has parity ``-sign M(k)``.
    """
    out = {}
    for corner in np.ndindex(2, 2, 2):
        k = np.pi * np.array(corner, dtype=float)
        mass = model.params["m"] - model.params["b"] * np.sum(1 - np.cos(k))
        out[corner] = -int(np.sign(mass))
    return out


# ------------------------------------------------------------------ frames

@dataclass(frozen=True, eq=False)
class FrameField:
    """Per-vertex orthonormal frames of the occupied bands."""

    mesh: InvolutiveMesh
    frames: np.ndarray
    gauge_metadata: dict = field(default_factory=dict)

    def orthonormality_residual(self):
        g = la.dagger(self.frames) @ self.frames
        return float(np.max(np.abs(g - np.eye(self.frames.shape[-1]))))

    def projector_residual(self, model):
        """max |P(k) F - F| with the occupied spectral projector P."""
        _, v = np.linalg.eigh(model.hamiltonian(self.mesh.vertices))
        occ = v[..., : model.occupied_count]
        p = occ @ la.dagger(occ)
        return float(np.max(np.abs(p @ self.frames - self.frames)))

    def overlap_defect(self):
        """max over mesh edges of |F_i^dagger F_j - 1|."""
        e = self.mesh.edges
        ov = la.dagger(self.frames[e[:, 0]]) @ self.frames[e[:, 1]]
        return float(np.max(np.linalg.norm(ov - np.eye(ov.shape[-1]), ord=2, axis=(1, 2))))


def _check_torus(model, mesh):
    if mesh.manifold_tag not in ("T2", "T3") or mesh.dim != model.dim:
        raise InvalidInputError(
            "model needs a torus mesh of matching dimension", model_dim=model.dim, mesh=mesh.manifold_tag
        )


def occupied_eigenframes(model, mesh, gap_tol):
    """Occupied eigenvectors at every vertex and the minimal direct gap."""
    k = mesh.vertices
    w, v = la.jacobi_eigh(model.hamiltonian(k))
    n = model.occupied_count
    gap = w[:, n] - w[:, n - 1]
    worst = int(np.argmin(gap))
    if gap[worst] < gap_tol:
        raise GapError(
            "spectral gap below tolerance", k=k[worst].tolist(), gap=float(gap[worst]), gap_tol=gap_tol
        )
    return v[:, :, :n], float(gap[worst])


def _transport(start, eig):
    """Parallel transport of ``start`` along lines of eigenframes.

    ``eig`` has shape (L, N, B, n) with ``eig[:, 0]`` spanning the space of
    ``start``.  Returns the transported frames (L, N, B, n) and the
    holonomy ``W`` with ``transport around the loop = start @ W``.
    """
    L, N = eig.shape[:2]
    out = np.empty_like(eig)
    out[:, 0] = start
    cur = start
    for j in range(1, N + 1):
        e = eig[:, j % N]
        cur = e @ la.polar_unitary(la.dagger(e) @ cur)
        if j < N:
            out[:, j] = cur
    hol = la.dagger(start) @ cur
    return out, hol


def _family_unwrap(theta, shape):
    """Continuous lift of a phase over a periodic family grid (at most 2D).

    Returns the lift and, per family axis, the largest winding of the phase
    around the closed lines of that axis.
    """
    th = theta.reshape(shape)
    if th.ndim == 0:
        return th.reshape(-1), []
    lift = np.unwrap(th, axis=0)
    if th.ndim == 2:
        row = np.unwrap(lift[0])
        lift = lift + (row - lift[0])[None, :]
    winds = []
    for ax in range(th.ndim):
        step = la._wrap(np.roll(lift, -1, axis=ax) - lift)
        winds.append(int(np.max(np.abs(np.rint(np.sum(step, axis=ax) / (2 * np.pi))))))
        inner = np.abs(np.diff(lift, axis=ax))
        if inner.size and np.max(inner) > np.pi:
            winds[-1] = max(winds[-1], 1)
    return lift.reshape(-1), winds


def _holonomy_gauges(hol, family_shape, steps):
    """Gauge path ``G(s)``, ``G(0) = 1``, ``G(1) = W``, continuous over the family.

    Rank 2: ``W = exp(i theta / 2) V`` with ``V`` in SU(2); ``G(s) =
    exp(i s theta / 2) exp(s log c) exp(s log(c^-1 V))`` with an anchor
    ``c`` whose antipode avoids the image of ``V``.
    """
    from .invariants import choose_anchor

    n = hol.shape[-1]
    s = np.arange(steps) / steps
    theta = np.angle(np.linalg.det(hol))
    lift, winds = _family_unwrap(theta, family_shape)
    if any(winds):
        raise ObstructionError(
            "holonomy determinant winds across the transverse family (nonzero Chern number)", winding=winds
        )
    meta = {"det_phase_range": float(np.ptp(lift)) if lift.size else 0.0}
    if n == 2:
        v = hol * np.exp(-0.5j * lift)[:, None, None]
        p, dist = choose_anchor(la.quaternion_of(v))
        c = la.matrix_from_quaternion(-p)
        log_c = la.log_unitary2(c[None], check=False)[0]
        log_v = la.log_unitary2(la.dagger(c) @ v)
        gen = s[None, :, None, None]
        g = (
            np.exp(0.5j * lift[:, None] * s[None, :])[..., None, None]
            * la.exp_antiherm2(gen * log_c)
            @ la.exp_antiherm2(gen * log_v[:, None])
        )
        meta["anchor_distance"] = dist
        return g, meta
    out = np.empty((len(hol), steps, n, n), dtype=complex)
    for i, w in enumerate(hol):
        lg = la.principal_log(w)
        ev, ez = np.linalg.eigh(-1j * lg)
        out[i] = (ez[None] * np.exp(1j * s[:, None] * ev[None])[:, None, :]) @ ez.conj().T
    return out, meta


def _smooth_lines(start, eig, family_shape):
    trans, hol = _transport(start, eig)
    g, meta = _holonomy_gauges(hol, family_shape, eig.shape[1])
    return trans @ la.dagger(g), meta


def _relax_gauge(frames, occ, shape, sweeps):
    """Checkerboard polar relaxation towards the lattice Landau gauge.

    Each sweep replaces ``F_i`` by ``P_i polar(P_i^dagger sum_j F_j)`` over
    the axis neighbours ``j`` of ``i``, first on even then on odd sites,
    which maximizes ``sum Re Tr F_i^dagger F_j`` locally.  Periodicity and
    the occupied span are preserved.
    """
    d = len(shape)
    tail = frames.shape[1:]
    f = frames.reshape(shape + tail).copy()
    o = occ.reshape(shape + tail)
    parity = np.indices(shape).sum(axis=0) % 2
    for _ in range(sweeps):
        for colour in (0, 1):
            nb = sum(np.roll(f, s, axis=a) for a in range(d) for s in (1, -1))
            new = o @ la.polar_unitary(la.dagger(o) @ nb)
            sel = parity == colour
            f[sel] = new[sel]
    return f.reshape(frames.shape)


def occupied_frame_field(model, mesh, gap_tol=1e-2, relax_sweeps=20, check=True):
    """Smooth periodic occupied frame by axis-by-axis parallel transport.

    Axis 0 is transported along the line through the origin, axis 1 along
    every line starting on that line, axis 2 likewise.  The holonomy of each
    line is removed by a gauge path that is continuous across the family of
    parallel lines; a winding of its determinant is a Chern obstruction.
    """
    _check_torus(model, mesh)
    occ, gap_min = occupied_eigenframes(model, mesh, gap_tol)
    N, d = mesh.N, mesh.dim
    B, n = occ.shape[1:]
    grid = occ.reshape((N,) * d + (B, n))
    frames = np.empty_like(grid)
    meta = {"gap_min": gap_min, "steps": []}

    # axis 0 on the line through the origin
    line = grid[(slice(None),) + (0,) * (d - 1)][None]
    fr, m0 = _smooth_lines(line[:, 0], line, ())
    meta["steps"].append(m0)
    cur = fr[0]  # (N, B, n), indexed by k0
    if d == 2:
        eig = grid  # (N0, N1, B, n): lines along axis 1
        fr, m1 = _smooth_lines(cur, eig, (N,))
        frames[:] = fr
        meta["steps"].append(m1)
    else:
        eig = grid[:, :, 0]
        fr, m1 = _smooth_lines(cur, eig, (N,))
        meta["steps"].append(m1)
        plane = fr.reshape(N * N, B, n)
        eig = grid.reshape(N * N, N, B, n)
        fr, m2 = _smooth_lines(plane, eig, (N, N))
        frames[:] = fr.reshape((N,) * 3 + (B, n))
        meta["steps"].append(m2)
    frames = frames.reshape(-1, B, n)
    if relax_sweeps:
        frames = _relax_gauge(frames, occ, (N,) * d, relax_sweeps)
        meta["relax_sweeps"] = relax_sweeps
    out = FrameField(mesh, frames, meta)
    defect = out.overlap_defect()
    out.gauge_metadata["overlap_defect"] = defect
    if check and defect > 0.5:
        raise GaugeSmoothnessError(
            "adjacent frames differ by more than 0.5; refine the mesh", overlap_defect=defect
        )
    return out


def random_gauge(frames, rng, modes=2, amplitude=1.0):
    """Right action by a smooth periodic U(n) field (Fourier generator)."""
    mesh = frames.mesh
    k = mesh.vertices
    n = frames.frames.shape[-1]
    gen = np.zeros((len(k), n, n), dtype=complex)
    for _ in range(modes):
        wave = rng.integers(-2, 3, size=k.shape[1])
        ph = rng.uniform(0, 2 * np.pi)
        m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        herm = 0.5 * (m + m.conj().T)
        gen += amplitude * np.cos(k @ wave + ph)[:, None, None] * herm
    ev, ez = np.linalg.eigh(gen)
    u = (ez * np.exp(1j * ev)[:, None, :]) @ la.dagger(ez)
    return FrameField(mesh, frames.frames @ u, dict(frames.gauge_metadata, random_gauge=True))


# ------------------------------------------------------------------ classifying map

def _q_block(n):
    return np.kron(np.eye(n // 2), la.Q)


def sewing_matrices(frames, model):
    """``w(k) = F(-k)^dagger T conj(F(k))``; ``w(-k) = -w(k)^T``."""
    f = frames.frames
    return la.dagger(f[frames.mesh.tau]) @ model.trs_unitary @ f.conj()


def classifying_map(frames, model, unitary_tol=1e-8):
    """Equivariant U(2) map ``xi(k) = w(k) Q`` from an occupied frame.

    For ``occupied_count > 2`` the frame must already split off a trivial
    complement: ``w Q`` must be block diagonal with the identity outside
    the leading 2x2 corner (within 1e-6).
    """
    w = sewing_matrices(frames, model)
    n = w.shape[-1]
    xi = w @ _q_block(n)
    if n > 2:
        off = max(np.max(np.abs(xi[:, :2, 2:])), np.max(np.abs(xi[:, 2:, :2])))
        rest = np.max(np.abs(xi[:, 2:, 2:] - np.eye(n - 2)))
        if max(off, rest) > 1e-6:
            raise CornerReductionError(
                "occupied frame does not split off a trivial complement", off_block=float(off), complement=float(rest)
            )
        xi = xi[:, :2, :2]
    err = float(np.max(np.abs(la.dagger(xi) @ xi - np.eye(2))))
    if err > unitary_tol:
        raise GaugeSmoothnessError(
            "classifying map is not unitary; the frame does not span the occupied space, refine the mesh",
            unitarity_error=err,
        )
    meta = {"model": model.name, "params": dict(model.params)}
    return MapField(frames.mesh, xi, "U2", meta)


# ------------------------------------------------------------------ oracle

def _loop_frames(model, ks, start=None):
    """Smooth periodic occupied frames along a closed momentum loop.

    Eigenvectors come from LAPACK; the loop holonomy is removed by
    ``exp(s log W)`` after an overall phase rotation keeping the log away
    from the branch cut.
    """
    _, v = np.linalg.eigh(model.hamiltonian(ks))
    occ = v[:, :, : model.occupied_count]
    if start is None:
        start = occ[0]
    trans, hol = _transport(start[None], occ[None])
    trans, hol = trans[0], hol[0]
    ang = np.sort(np.angle(np.linalg.eigvals(hol)))
    # rotate the spectrum so that the widest spectral gap sits at -1
    ext = np.concatenate([ang, [ang[0] + 2 * np.pi]])
    k = int(np.argmax(np.diff(ext)))
    shift = 0.5 * (ext[k] + ext[k + 1]) - np.pi
    lg = la.principal_log(hol * np.exp(-1j * shift))
    ev, ez = np.linalg.eigh(-1j * lg)
    s = np.arange(len(ks)) / len(ks)
    g = (ez[None] * np.exp(1j * s[:, None] * (ev[None] + shift))[:, None, :]) @ ez.conj().T
    return trans @ la.dagger(g)


def _link_phases(frames):
    """Berry link phases ``arg det(F_j^dagger F_{j+1})`` along an open path."""
    ov = la.dagger(frames[:-1]) @ frames[1:]
    return np.angle(np.linalg.det(ov))


def _plane_signs(model, N, fix=None):
    """Sewing-matrix Pfaffian signs at the four TRIM of a TRI plane.

    ``fix`` embeds plane coordinates ``(k1, k2)`` into the model's momentum
    space.  Loops: L1 at ``k2 = 0``, L2 at ``k1 = 0`` and L3 at ``k1 = pi``
    (L2 and L3 start from the L1 frame).  A flux count over the half torus
    ``[0, pi] x [0, 2 pi]`` corrects the gauge on L3 so that it extends
    over the interior.
    """
    if fix is None:
        def fix(k1, k2):
            return np.stack([k1, k2], axis=-1)
    t = model.trs_unitary
    h = N // 2
    grid = 2 * np.pi * np.arange(N) / N
    zero = np.zeros(N)
    l1 = _loop_frames(model, fix(grid, zero))
    l2 = _loop_frames(model, fix(zero, grid), start=l1[0])
    l3 = _loop_frames(model, fix(np.full(N, np.pi), grid), start=l1[h])

    def sewing(fr):
        # loop index j <-> -j along each loop
        minus = (-np.arange(N)) % N
        return la.dagger(fr[minus]) @ t @ fr.conj()

    def sqrt_det_path(w, idx, start):
        # continuous square root of det w along loop indices idx
        ph = np.unwrap(np.angle(np.linalg.det(w[idx])))
        return start * np.exp(0.5j * (ph - ph[0]))

    w1, w2, w3 = sewing(l1), sewing(l2), sewing(l3)
    pf = lambda m: la.pfaffian(m)  # noqa: E731
    r_gamma = pf(w1[0])
    path = np.arange(h + 1)
    r_x1 = sqrt_det_path(w1, path, r_gamma)[-1]
    r_x2 = sqrt_det_path(w2, path, r_gamma)[-1]
    # L3 starts at X1 with the L1 frame, so det w3[0] = det w1[h]
    r_m = sqrt_det_path(w3, path, r_x1)[-1]
    delta = {
        (0, 0): pf(w1[0]) / r_gamma,
        (1, 0): pf(w1[h]) / r_x1,
        (0, 1): pf(w2[h]) / r_x2,
        (1, 1): pf(w3[h]) / r_m,
    }

    # gauge obstruction on the half torus [0, pi] x [0, 2 pi]
    k1 = grid[: h + 1]
    kk = fix(k1[:, None] + 0 * grid[None], 0 * k1[:, None] + grid[None])
    _, v = np.linalg.eigh(model.hamiltonian(kk))
    occ = v[..., : model.occupied_count]

    def link(a, b):
        return np.linalg.det(la.dagger(a) @ b)

    nxt = np.roll(occ, -1, axis=1)
    u1 = link(occ[:-1], occ[1:])[:, :]  # along k1
    u2 = link(occ[:-1], nxt[:-1])  # along k2 at k1 index i
    u2r = link(occ[1:], nxt[1:])
    u1t = np.roll(u1, -1, axis=1)
    flux = np.sum(np.angle(u1 * u2r * np.conj(u1t) * np.conj(u2)))
    closed3 = np.concatenate([l3, l3[:1]])
    closed2 = np.concatenate([l2, l2[:1]])
    boundary = np.sum(_link_phases(closed3)) - np.sum(_link_phases(closed2))
    vort = int(np.rint((flux - boundary) / (2 * np.pi)))
    if vort % 2:
        delta[(1, 1)] = -delta[(1, 1)]
    out = {}
    for key, val in delta.items():
        if abs(abs(val) - 1) > 1e-6 or abs(val.imag) > 1e-6:
            raise GaugeSmoothnessError("Pfaffian ratio is not a sign; refine the mesh", trim=list(key), value=str(val))
        out[key] = int(np.sign(val.real))
    return out, vort


def trim_pfaffian_oracle(model, mesh):
    """Per-TRIM signs ``Pf w(K) / sqrt det w(K)`` from loop-fixed gauges.

    Independent of :func:`occupied_frame_field`: eigenvectors from LAPACK,
    gauges fixed only along a tree of loops through the TRIM, with a lattice
    flux count deciding the relative sign across the half torus.  In three
    dimensions the planes ``k3 = 0`` and ``k3 = pi`` are treated separately.
    Keys of the result are fixed-vertex indices of ``mesh``.
    """
    _check_torus(model, mesh)
    N = mesh.N
    ks = mesh.vertices
    gaps = model.gap(ks)
    worst = int(np.argmin(gaps))
    if gaps[worst] <= 0 or not np.isfinite(gaps[worst]) or gaps[worst] < 1e-8:
        raise GapError("spectral gap closes on the mesh", k=ks[worst].tolist(), gap=float(gaps[worst]))
    signs = SignData()
    vortices = []
    if mesh.dim == 2:
        planes = [((), None)]
    else:
        planes = [((0,), 0.0), ((1,), np.pi)]
    for tail, k3 in planes:
        fix = None
        if k3 is not None:
            def fix(a, b, k3=k3):
                return np.stack([a, b, np.full(np.broadcast(a, b).shape, k3)], axis=-1)
        plane, vort = _plane_signs(model, N, fix)
        vortices.append(vort)
        for corner, s in plane.items():
            idx = np.array(corner + tail) * (N // 2)
            signs[int(torus_index(mesh, idx))] = s
    signs.vortices = vortices
    return signs
