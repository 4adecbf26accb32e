"""Rotation helpers: axis-angle (rotation vector) and quaternion utilities.

Conventions:
  * axis-angle vectors encode a rotation of ``|w|`` radians about ``w / |w|``;
  * quaternions are unit ``(w, x, y, z)`` with scalar part first;
  * all functions are pure numpy and accept/return float64 arrays.
"""

from __future__ import annotations

import numpy as np

# Below this squared angle the closed-form Rodrigues coefficients lose
# precision, so a truncated series is used instead.
_SERIES_EPS = 1e-8


def rotvec_coeffs(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rodrigues coefficients a(s) = sin(t)/t and b(s) = (1-cos(t))/t^2 for s = t^2.

    Both are smooth functions of s, evaluated by series near zero so that
    gradients stay exact through t = 0.
    """
    s = np.asarray(s, dtype=np.float64)
    small = s < _SERIES_EPS
    s_safe = np.where(small, 1.0, s)
    t = np.sqrt(s_safe)
    a = np.where(small, 1.0 - s / 6.0 + s * s / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - s / 24.0 + s * s / 720.0, (1.0 - np.cos(t)) / s_safe)
    return a, b


def rotvec_coeffs_grad(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives da/ds and db/ds matching :func:`rotvec_coeffs`."""
    s = np.asarray(s, dtype=np.float64)
    small = s < _SERIES_EPS
    s_safe = np.where(small, 1.0, s)
    t = np.sqrt(s_safe)
    sin_t, cos_t = np.sin(t), np.cos(t)
    da = np.where(small, -1.0 / 6.0 + s / 60.0, (t * cos_t - sin_t) / (2.0 * s_safe * t))
    db = np.where(small, -1.0 / 24.0 + s / 360.0, (t * sin_t - 2.0 * (1.0 - cos_t)) / (2.0 * s_safe * s_safe))
    return da, db


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix [w]x for vectors of shape (..., 3)."""
    w = np.asarray(w, dtype=np.float64)
    zeros = np.zeros(w.shape[:-1])
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    rows = [
        np.stack([zeros, -wz, wy], axis=-1),
        np.stack([wz, zeros, -wx], axis=-1),
        np.stack([-wy, wx, zeros], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Rotation matrix R = I + a[w]x + b[w]x^2 for axis-angle vectors (..., 3)."""
    w = np.asarray(w, dtype=np.float64)
    s = np.sum(w * w, axis=-1)
    a, b = rotvec_coeffs(s)
    k = skew(w)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * k2


def matrix_to_rotvec(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a single rotation matrix, magnitude in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    trace = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(trace)
    if angle < 1e-10:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # Near pi the off-diagonal extraction degenerates; use the symmetric part.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diagonal(m), 0.0))
        # Fix signs from the largest component.
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = axis / axis[i]
            axis[(i + 1) % 3] = m[i, (i + 1) % 3] / (axis[i] * np.maximum(axis[(i + 1) % 3], 1e-12)) * axis[(i + 1) % 3]
        axis = axis / np.linalg.norm(axis)
        # Resolve the remaining sign ambiguity via the skew part where possible.
        v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        if np.dot(v, axis) < 0:
            axis = -axis
        return axis * angle
    v = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return v * (angle / (2.0 * np.sin(angle)))


def wrap_rotvec(w: np.ndarray, limit: float = np.pi) -> np.ndarray:
    """Map axis-angle vectors (..., 3) to equivalent ones with magnitude < limit.

    Uses the identity R(w) = R(w - 2*pi*w/|w|); magnitudes that remain at the
    limit are scaled just inside it so downstream invariants hold strictly.
    """
    w = np.asarray(w, dtype=np.float64).copy()
    n = np.linalg.norm(w, axis=-1)
    over = n >= limit
    if np.any(over):
        n_over = n[over]
        k = np.floor((n_over + np.pi) / (2.0 * np.pi))
        wrapped = n_over - 2.0 * np.pi * k
        scale = np.where(n_over > 0, np.abs(wrapped) / np.maximum(n_over, 1e-300), 0.0)
        sign = np.where(wrapped >= 0, 1.0, -1.0)
        w[over] = w[over] * (scale * sign)[..., None]
        n2 = np.linalg.norm(w[over], axis=-1)
        still = n2 >= limit
        if np.any(still):
            w_over = w[over]
            w_over[still] *= (limit * (1.0 - 1e-12)) / n2[still][..., None]
            w[over] = w_over
    return w


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def rotvec_to_quat(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w)
    if angle < 1e-12:
        return np.array([1.0, w[0] / 2.0, w[1] / 2.0, w[2] / 2.0]) / np.sqrt(1.0 + angle * angle / 4.0)
    axis = w / angle
    half = angle / 2.0
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    sin_half = np.linalg.norm(q[1:])
    if sin_half < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(sin_half, q[0])
    return q[1:] / sin_half * angle


def quat_apply(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v of shape (..., 3) by unit quaternion q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[1:]
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)
