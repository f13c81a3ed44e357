"""SE(3) geometry with right-perturbation conventions.

Poses are stored as a unit quaternion ``(w, x, y, z)`` plus a translation.
Tangent vectors are plain ``(..., 6)`` arrays ordered ``(rho, phi)``:
translation first (meters), then axis-angle rotation (radians).

Conventions::

    x (+) xi  = x * Exp(xi)
    a (-) b   = Log(b^-1 * a)
    Ad(T)     = [[R, [t]x R], [0, R]]

Every function broadcasts over leading batch dimensions, so a trajectory of
N poses is a single ``GroupPose`` with ``shape == (N,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# Below this rotation angle the closed-form coefficients switch to series.
SMALL_ANGLE = 1e-6
# |theta - pi| below this flags the logarithm as degraded.
NEAR_PI = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Hat operator for 3-vectors, batched: (..., 3) -> (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def tangent(rho, phi) -> np.ndarray:
    """Stack translational and rotational parts into a (..., 6) tangent."""
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.concatenate(np.broadcast_arrays(rho, phi), axis=-1)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross is dominated by axis bookkeeping on short vectors
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


# ---------------------------------------------------------------------------
# quaternion helpers

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + _cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by unit quaternions q."""
    w = q[..., :1]
    u = q[..., 1:]
    uv = _cross(u, v)
    return v + 2.0 * (w * uv + _cross(u, uv))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to canonical (w >= 0) quaternion.

    Uses the largest of (trace, R00, R11, R22) as pivot so the division is
    never by a small number, which keeps 180 degree rotations accurate.
    """
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    diag = np.stack([R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=-1)
    trace = diag.sum(axis=-1)
    pivot = np.argmax(np.concatenate([trace[:, None], diag], axis=-1), axis=-1)
    q = np.empty((R.shape[0], 4))
    for n in range(R.shape[0]):
        m = R[n]
        k = pivot[n]
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + trace[n])
            q[n] = [0.25 * s, (m[2, 1] - m[1, 2]) / s,
                    (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q[n] = [(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                    (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q[n] = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                    0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q[n] = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                    (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    q = np.where(q[:, :1] < 0.0, -q, q)
    return q.reshape(batch + (4,))


# ---------------------------------------------------------------------------
# the group element

@dataclass(frozen=True, eq=False)
class GroupPose:
    """Rigid transform(s): unit quaternion ``rotation`` (w, x, y, z) and
    ``translation``. Leading dimensions are batch dimensions.

    The quaternion is renormalized on construction, so every composition
    result is unit-norm.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float)
        if q.shape[-1:] != (4,) or t.shape[-1:] != (3,):
            raise ValueError(
                f"expected (...,4) quaternion and (...,3) translation, "
                f"got {q.shape} and {t.shape}")
        norm = np.linalg.norm(q, axis=-1, keepdims=True)
        if np.any(norm == 0.0) or not np.all(np.isfinite(q)):
            raise ValueError("rotation quaternion must be finite and non-zero")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q = q / norm
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, shape: tuple = ()) -> "GroupPose":
        q = np.zeros(tuple(shape) + (4,))
        q[..., 0] = 1.0
        return cls(q, np.zeros(tuple(shape) + (3,)))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "GroupPose":
        """From (..., 4, 4) homogeneous matrices with orthonormal rotation."""
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[..., :3, :3]), T[..., :3, 3])

    @classmethod
    def stack(cls, poses) -> "GroupPose":
        poses = list(poses)
        return cls(np.stack([p.rotation for p in poses]),
                   np.stack([p.translation for p in poses]))

    @property
    def shape(self) -> tuple:
        return self.translation.shape[:-1]

    def __len__(self) -> int:
        if not self.shape:
            raise TypeError("len() of a single pose")
        return self.shape[0]

    def __getitem__(self, idx) -> "GroupPose":
        return GroupPose(self.rotation[idx], self.translation[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __matmul__(self, other: "GroupPose") -> "GroupPose":
        return compose(self, other)

    def __repr__(self) -> str:
        if self.shape:
            return f"GroupPose(shape={self.shape})"
        return (f"GroupPose(rotation={np.array2string(self.rotation)}, "
                f"translation={np.array2string(self.translation)})")

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix(self) -> np.ndarray:
        out = np.zeros(self.shape + (4, 4))
        out[..., :3, :3] = self.rotation_matrix()
        out[..., :3, 3] = self.translation
        out[..., 3, 3] = 1.0
        return out

    def canonical(self) -> "GroupPose":
        """Same transform with the quaternion sign fixed to w >= 0."""
        q = self.rotation
        return GroupPose(np.where(q[..., :1] < 0.0, -q, q), self.translation)

    def inverse(self) -> "GroupPose":
        return inverse(self)

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        return quat_rotate(quat_conjugate(self.rotation),
                           np.asarray(points) - self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return quat_rotate(self.rotation, np.asarray(points)) + self.translation

    def allclose(self, other: "GroupPose", atol: float = 1e-9) -> bool:
        """Equality as transforms: quaternion double cover is ignored."""
        a, b = self.canonical(), other.canonical()
        return bool(np.allclose(a.rotation, b.rotation, rtol=0.0, atol=atol)
                    and np.allclose(a.translation, b.translation,
                                    rtol=0.0, atol=atol))


# ---------------------------------------------------------------------------
# series-safe coefficients

def _exp_coefficients(theta: np.ndarray, series: np.ndarray):
    """Return (sin(theta/2)/theta, (1-cos)/theta^2, (theta-sin)/theta^3)."""
    t2 = theta * theta
    safe = np.where(series, 1.0, theta)
    half = np.where(series,
                    0.5 - t2 / 48.0 + t2 * t2 / 3840.0,
                    np.sin(0.5 * safe) / safe)
    a = np.where(series,
                 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                 2.0 * np.sin(0.5 * safe) ** 2 / (safe * safe))
    b = np.where(series,
                 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
                 (safe - np.sin(safe)) / (safe * safe * safe))
    return half, a, b


def _left_jacobian_inverse_coefficient(theta: np.ndarray, series: np.ndarray):
    """Coefficient c of K^2 in V^-1 = I - K/2 + c K^2."""
    t2 = theta * theta
    safe = np.where(series, 1.0, theta)
    h = 0.5 * safe
    closed = (1.0 - h * np.cos(h) / np.sin(h)) / (safe * safe)
    return np.where(series, 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0, closed)


def _exp(xi: np.ndarray, force_series=None):
    rho = xi[..., :3]
    phi = xi[..., 3:]
    theta = np.linalg.norm(phi, axis=-1)
    series = theta < SMALL_ANGLE if force_series is None else np.full(
        theta.shape, bool(force_series))
    half, a, b = _exp_coefficients(theta, series)
    q = np.concatenate([np.cos(0.5 * theta)[..., None], half[..., None] * phi],
                       axis=-1)
    pr = _cross(phi, rho)
    t = rho + a[..., None] * pr + b[..., None] * _cross(phi, pr)
    return q, t


def exp(xi) -> GroupPose:
    """Exponential map se(3) -> SE(3)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (6,):
        raise ValueError(f"tangent must have trailing dimension 6, got {xi.shape}")
    q, t = _exp(xi)
    return GroupPose(q, t)


def log(g: GroupPose, *, report: bool = False):
    """Logarithm map SE(3) -> se(3), canonical with ``|phi| <= pi``.

    With ``report=True`` also returns a boolean mask marking results whose
    rotation angle lies within ``NEAR_PI`` of pi, where the rotation axis is
    ill-conditioned with respect to the sign of phi.
    """
    q = g.rotation
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., 0]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    theta = 2.0 * np.arctan2(s, w)
    series = theta < SMALL_ANGLE
    safe_s = np.where(series, 1.0, s)
    safe_w = np.where(series, w, 1.0)
    # for small s: atan2(s, w)/s = 1/w - s^2/(3 w^3) + ...
    ratio = np.where(series,
                     2.0 / safe_w * (1.0 - s * s / (3.0 * safe_w * safe_w)),
                     theta / safe_s)
    phi = ratio[..., None] * v
    c = _left_jacobian_inverse_coefficient(theta, series)
    t = g.translation
    pt = _cross(phi, t)
    rho = t - 0.5 * pt + c[..., None] * _cross(phi, pt)
    xi = np.concatenate([rho, phi], axis=-1)
    if report:
        return xi, np.abs(theta - np.pi) < NEAR_PI
    return xi


def compose(a: GroupPose, b: GroupPose) -> GroupPose:
    return GroupPose(quat_multiply(a.rotation, b.rotation),
                     a.translation + quat_rotate(a.rotation, b.translation))


def inverse(g: GroupPose) -> GroupPose:
    qi = quat_conjugate(g.rotation)
    return GroupPose(qi, -quat_rotate(qi, g.translation))


def oplus(x: GroupPose, xi) -> GroupPose:
    """Right-perturbation update ``x * Exp(xi)``."""
    return compose(x, exp(xi))


def ominus(a: GroupPose, b: GroupPose, *, report: bool = False):
    """Tangent difference ``Log(b^-1 * a)``; inverse of :func:`oplus`."""
    return log(compose(inverse(b), a), report=report)


def adjoint(g: GroupPose) -> np.ndarray:
    """SE(3) adjoint, (..., 6, 6), for tangent ordering (rho, phi)."""
    R = g.rotation_matrix()
    out = np.zeros(g.shape + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., :3, 3:] = skew(g.translation) @ R
    return out


def integrate(start: GroupPose, steps: GroupPose) -> GroupPose:
    """Chain relative motions along axis 0 of ``steps``.

    Returns ``len(steps) + 1`` poses, the first being ``start``. Trailing
    batch dimensions broadcast, which lets independent runs integrate
    side by side.
    """
    n = steps.shape[0]
    shape = np.broadcast_shapes(start.shape, steps.shape[1:])
    q = np.empty((n + 1,) + shape + (4,))
    t = np.empty((n + 1,) + shape + (3,))
    q[0] = start.rotation
    t[0] = start.translation
    cur = GroupPose(q[0], t[0])
    for k in range(n):
        cur = compose(cur, steps[k])
        q[k + 1] = cur.rotation
        t[k + 1] = cur.translation
    return GroupPose(q, t)


def numeric_jacobian(f: Callable[[np.ndarray], np.ndarray], at,
                     step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a map R^n -> R^m."""
    if not 1e-8 <= step <= 1e-3:
        raise ValueError(f"step must lie in [1e-8, 1e-3], got {step}")
    at = np.asarray(at, dtype=float)
    cols = []
    for i in range(at.shape[-1]):
        d = np.zeros_like(at)
        d[i] = step
        cols.append((np.asarray(f(at + d)) - np.asarray(f(at - d))) / (2.0 * step))
    return np.stack(cols, axis=-1)
