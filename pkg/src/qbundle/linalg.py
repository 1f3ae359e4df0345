"""Small dense complex linear algebra.

Pfaffians, principal logarithms of unitaries, geodesic interpolation on the
unit 3-sphere, Gram-Schmidt frames, a batched cyclic Jacobi Hermitian
eigensolver, and the SU(2) <-> unit quaternion chart.

Quaternion chart
----------------
A unit quaternion ``q = (q0, q1, q2, q3)`` is identified with

    U(q) = [[q0 + i q3, -q1 + i q2],
            [q1 + i q2,  q0 - i q3]]

which in Pauli form reads ``U = q0 + i (q3 sz + q2 sx - q1 sy)``.
"""
from __future__ import annotations

import numpy as np

from .errors import (
    BranchCutError,
    DegenerateFrameError,
    GeometricDegeneracyError,
    InvalidInputError,
    NotSpecialError,
)

Q = np.array([[0.0, -1.0], [1.0, 0.0]], dtype=complex)
ID2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])

UNITARY_TOL = 1e-10
SKEW_TOL = 1e-10
QUAT_NORM_TOL = 1e-12
BRANCH_TOL = 1e-6
ANTIPODAL_TOL = 1e-9
RANK_TOL = 1e-8
SPECIAL_TOL = 1e-8


def as_matrix(a):
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2:
        raise InvalidInputError("expected a 2-d matrix", shape=list(a.shape))
    return a


def is_unitary(u, tol=UNITARY_TOL):
    u = np.asarray(u, dtype=complex)
    eye = np.eye(u.shape[-1])
    err = np.abs(np.swapaxes(u.conj(), -1, -2) @ u - eye)
    return bool(np.max(err, initial=0.0) <= tol)


def is_skew(a, tol=SKEW_TOL):
    a = np.asarray(a)
    return bool(np.max(np.abs(a + np.swapaxes(a, -1, -2)), initial=0.0) <= tol)


def dagger(a):
    return np.swapaxes(np.conj(a), -1, -2)


# ---------------------------------------------------------------- Pfaffian

def pfaffian(a):
    """Pfaffian of a skew-symmetric matrix of even size at most 8.

    Computed by recursive expansion along the first row.

    Raises
    ------
    InvalidInputError
        If the matrix is not square, has odd size, is larger than 8x8, or is
        not skew-symmetric.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise InvalidInputError("pfaffian needs a square matrix", invariant="square")
    if n % 2:
        raise InvalidInputError("pfaffian needs even dimension", invariant="even_dimension", size=n)
    if n > 8:
        raise InvalidInputError("pfaffian limited to 8x8", invariant="size_le_8", size=n)
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a + a.T), initial=0.0) > SKEW_TOL * scale:
        raise InvalidInputError("matrix is not skew-symmetric", invariant="skew_symmetric")
    return _pf_expand(a)


def _pf_expand(a):
    n = a.shape[0]
    if n == 0:
        return complex(1.0)
    if n == 2:
        return complex(a[0, 1])
    total = 0j
    rest = np.arange(1, n)
    for k, j in enumerate(rest):
        if a[0, j] == 0:
            continue
        keep = np.delete(rest, k)
        sub = a[np.ix_(keep, keep)]
        # (-1)^(j+1) with 0-based j: j = 1 contributes with +
        total += (-1) ** (j + 1) * a[0, j] * _pf_expand(sub)
    return total


# ----------------------------------------------------------- logarithms

def _wrap(angle):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - angle, 2 * np.pi)


def pauli_coords(u):
    """Split a 2x2 anti-Hermitian ``u = i (s + a . sigma)`` into ``(s, a)``."""
    u = np.asarray(u)
    s = 0.5 * (u[..., 0, 0] + u[..., 1, 1]).imag
    a1 = 0.5 * (u[..., 0, 1] + u[..., 1, 0]).imag
    a2 = 0.5 * (u[..., 0, 1] - u[..., 1, 0]).real
    a3 = 0.5 * (u[..., 0, 0] - u[..., 1, 1]).imag
    return s, np.stack([a1, a2, a3], axis=-1)


def from_pauli_coords(s, a):
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    out = np.empty(s.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = 1j * (s + a[..., 2])
    out[..., 1, 1] = 1j * (s - a[..., 2])
    out[..., 0, 1] = a[..., 1] + 1j * a[..., 0]
    out[..., 1, 0] = -a[..., 1] + 1j * a[..., 0]
    return out


def _eigen_angles2(w):
    det = w[..., 0, 0] * w[..., 1, 1] - w[..., 0, 1] * w[..., 1, 0]
    alpha = 0.5 * np.angle(det)
    v = w * np.exp(-1j * alpha)[..., None, None]
    cos_t = 0.5 * (v[..., 0, 0] + v[..., 1, 1]).real
    _, vec = pauli_coords(0.5 * (v - dagger(v)))
    sin_t = np.linalg.norm(vec, axis=-1)
    theta = np.arctan2(sin_t, cos_t)
    return alpha, theta, sin_t, vec


def max_eigen_angle2(w):
    """Largest |eigen-angle| of each 2x2 unitary in a batch."""
    alpha, theta, _, _ = _eigen_angles2(np.asarray(w, dtype=complex))
    return np.maximum(np.abs(_wrap(alpha + theta)), np.abs(_wrap(alpha - theta)))


def log_unitary2(w, check=True):
    """Principal logarithm of a batch of 2x2 unitaries (closed form)."""
    w = np.asarray(w, dtype=complex)
    alpha, theta, sin_t, vec = _eigen_angles2(w)
    p1 = alpha + theta
    p2 = alpha - theta
    a1 = _wrap(p1)
    a2 = _wrap(p2)
    if check:
        worst = np.maximum(np.abs(a1), np.abs(a2))
        if np.any(worst > np.pi - BRANCH_TOL):
            raise BranchCutError(
                "eigenvalue at the branch cut -1; refine the mesh or re-anchor",
                count=int(np.sum(worst > np.pi - BRANCH_TOL)),
            )
    half_diff = 0.5 * (a1 - a2)
    ratio = np.ones_like(theta)
    good = sin_t > 1e-300
    # half_diff equals theta minus a multiple of pi; divide by sin(theta)
    ratio[good] = half_diff[good] / sin_t[good]
    # near theta = 0 without wrapping the ratio tends to theta / sin(theta) -> 1
    small = good & (sin_t < 1e-8) & (np.abs(half_diff - theta) < 1e-12)
    ratio[small] = 1.0
    return from_pauli_coords(0.5 * (a1 + a2), vec * ratio[..., None])


def exp_antiherm2(u):
    """Exponential of a batch of 2x2 anti-Hermitian matrices."""
    s, a = pauli_coords(np.asarray(u, dtype=complex))
    r = np.linalg.norm(a, axis=-1)
    sinc = np.where(r > 1e-300, np.sin(r) / np.where(r > 1e-300, r, 1.0), 1.0)
    out = np.empty(s.shape + (2, 2), dtype=complex)
    c = np.cos(r)
    b = a * sinc[..., None]
    out[..., 0, 0] = c + 1j * b[..., 2]
    out[..., 1, 1] = c - 1j * b[..., 2]
    out[..., 0, 1] = b[..., 1] + 1j * b[..., 0]
    out[..., 1, 0] = -b[..., 1] + 1j * b[..., 0]
    return out * np.exp(1j * s)[..., None, None]


def principal_log(u):
    """Anti-Hermitian principal logarithm of a unitary matrix.

    Eigen-angles of the result lie in (-pi, pi).  Raises ``BranchCutError``
    when an eigenvalue sits within 1e-6 (in angle) of -1.
    """
    u = as_matrix(u)
    if u.shape[0] != u.shape[1] or not is_unitary(u, 1e-8):
        raise InvalidInputError("principal_log needs a unitary matrix", invariant="unitary")
    if u.shape == (2, 2):
        return log_unitary2(u[None])[0]
    import scipy.linalg

    t, z = scipy.linalg.schur(u, output="complex")
    lam = np.diag(t)
    ang = np.angle(lam)
    if np.any(np.abs(ang) > np.pi - BRANCH_TOL):
        raise BranchCutError("eigenvalue at the branch cut -1; refine the mesh or re-anchor")
    out = (z * (1j * ang)) @ z.conj().T
    return 0.5 * (out - out.conj().T)


# ----------------------------------------------------------- quaternions

def matrix_from_quaternion(q):
    q = np.asarray(q, dtype=float)
    out = np.empty(q.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = q[..., 0] + 1j * q[..., 3]
    out[..., 1, 1] = q[..., 0] - 1j * q[..., 3]
    out[..., 0, 1] = -q[..., 1] + 1j * q[..., 2]
    out[..., 1, 0] = q[..., 1] + 1j * q[..., 2]
    return out


def quaternion_of(u):
    """Batch chart without validation (projects onto the quaternion part)."""
    u = np.asarray(u, dtype=complex)
    q0 = 0.5 * (u[..., 0, 0] + u[..., 1, 1]).real
    q3 = 0.5 * (u[..., 0, 0] - u[..., 1, 1]).imag
    q1 = 0.5 * (u[..., 1, 0] - u[..., 0, 1]).real
    q2 = 0.5 * (u[..., 1, 0] + u[..., 0, 1]).imag
    return np.stack([q0, q1, q2, q3], axis=-1)


def su2_coords(u):
    """Unit quaternion of an SU(2) matrix in the chart of this module."""
    u = np.asarray(u, dtype=complex)
    if u.shape[-2:] != (2, 2):
        raise InvalidInputError("su2_coords needs 2x2 matrices")
    det = u[..., 0, 0] * u[..., 1, 1] - u[..., 0, 1] * u[..., 1, 0]
    if np.any(np.abs(det - 1) > SPECIAL_TOL):
        raise NotSpecialError("matrix has determinant != 1", det=np.ravel(det)[:4].tolist())
    if not is_unitary(u, 1e-8):
        raise InvalidInputError("matrix is not unitary", invariant="unitary")
    return quaternion_of(u)


def check_quaternion(q, tol=QUAT_NORM_TOL):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise InvalidInputError("quaternion needs 4 components")
    if np.any(np.abs(np.sum(q * q, axis=-1) - 1) > tol):
        raise InvalidInputError("quaternion is not of unit norm", invariant="unit_norm")
    return q


def slerp(a, b, t):
    """Geodesic interpolation between unit quaternions ``a`` and ``b``."""
    a = check_quaternion(a, 1e-10)
    b = check_quaternion(b, 1e-10)
    if np.dot(a, b) <= -1 + ANTIPODAL_TOL:
        raise GeometricDegeneracyError("slerp between antipodal points is undefined")
    return slerp_many(a[None], b[None], np.atleast_1d(float(t)))[0]


def slerp_many(a, b, t):
    """Batched slerp; ``a``, ``b`` of shape (..., 4), ``t`` broadcastable."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    omega = np.arccos(dot)
    so = np.sin(omega)
    tiny = so < 1e-12
    safe = np.where(tiny, 1.0, so)
    wa = np.where(tiny, 1.0 - t, np.sin((1.0 - t) * omega) / safe)
    wb = np.where(tiny, t, np.sin(t * omega) / safe)
    out = wa[..., None] * a + wb[..., None] * b
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


# ----------------------------------------------------------- frames

def gram_schmidt(frame):
    """Orthonormalize the columns of ``frame``.

    The change of basis is upper triangular with a positive real diagonal,
    so the output is unique.
    """
    f = as_matrix(frame)
    if f.shape[1] > f.shape[0]:
        raise DegenerateFrameError("more columns than rows")
    sv = np.linalg.svd(f, compute_uv=False)
    if sv.size and sv[-1] < RANK_TOL:
        raise DegenerateFrameError("frame columns are linearly dependent", smallest_singular_value=float(sv[-1]))
    out = np.array(f, dtype=complex)
    for j in range(out.shape[1]):
        for _ in range(2):
            for k in range(j):
                out[:, j] -= np.vdot(out[:, k], out[:, j]) * out[:, k]
        out[:, j] /= np.linalg.norm(out[:, j])
    return out


def polar_unitary(m):
    """Unitary factor of the polar decomposition, batched."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


# ----------------------------------------------------------- eigensolver

def jacobi_eigh(a, tol=1e-15, max_sweeps=60):
    """Cyclic Jacobi eigensolver for a batch of small Hermitian matrices.

    Parameters
    ----------
    a : array_like, shape (..., n, n)
        Hermitian matrices.

    Returns
    -------
    w : ndarray, shape (..., n)
        Eigenvalues in ascending order.
    v : ndarray, shape (..., n, n)
        Eigenvectors as columns; each column has its largest-magnitude
        component real and positive.
    """
    a = np.array(a, dtype=complex)
    shape = a.shape
    n = shape[-1]
    a = a.reshape(-1, n, n)
    a = 0.5 * (a + dagger(a))
    b = a.shape[0]
    v = np.tile(np.eye(n, dtype=complex), (b, 1, 1))
    scale = np.maximum(np.linalg.norm(a, axis=(1, 2)), 1e-300)
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(a[:, offmask]) ** 2, axis=1))
        if np.all(off <= tol * scale):
            break
        for p, q in pairs:
            apq = a[:, p, q]
            mag = np.abs(apq)
            active = mag > 1e-300
            phase = np.where(active, apq / np.where(active, mag, 1.0), 1.0)
            theta = 0.5 * np.arctan2(2 * mag, (a[:, q, q] - a[:, p, p]).real)
            c = np.cos(theta)
            s = np.sin(theta)
            ph = np.conj(phase)
            jpp, jpq, jqp, jqq = c, s, -s * ph, c * ph
            colp = a[:, :, p] * jpp[:, None] + a[:, :, q] * jqp[:, None]
            colq = a[:, :, p] * jpq[:, None] + a[:, :, q] * jqq[:, None]
            a[:, :, p] = colp
            a[:, :, q] = colq
            rowp = np.conj(jpp)[:, None] * a[:, p, :] + np.conj(jqp)[:, None] * a[:, q, :]
            rowq = np.conj(jpq)[:, None] * a[:, p, :] + np.conj(jqq)[:, None] * a[:, q, :]
            a[:, p, :] = rowp
            a[:, q, :] = rowq
            vp = v[:, :, p] * jpp[:, None] + v[:, :, q] * jqp[:, None]
            vq = v[:, :, p] * jpq[:, None] + v[:, :, q] * jqq[:, None]
            v[:, :, p] = vp
            v[:, :, q] = vq
    w = np.diagonal(a, axis1=1, axis2=2).real
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    idx = np.argmax(np.abs(v), axis=1)
    lead = np.take_along_axis(v, idx[:, None, :], axis=1)[:, 0, :]
    v = v * (np.abs(lead) / lead)[:, None, :]
    return w.reshape(shape[:-1]), v.reshape(shape)
