"""Rigid-body math: unit quaternions, rigid transforms, pose error metric.

Conventions:
  - Quaternions are stored as (w, x, y, z) with unit norm and canonical
    sign w >= 0.
  - Translations are in millimetres.
  - A RigidTransform maps points from its source frame to its target
    frame: p_target = R * p_source + t.
  - Angles are degrees at the API boundary, radians internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_EPS = 1e-12


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-6:
        raise ValueError(f"degenerate quaternion, norm {n:.3e}")
    q = q / n
    if q[0] < 0:
        q = -q
    return q


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, wxyz) plus translation (mm)."""

    q: np.ndarray  # shape (4,), unit norm, w >= 0
    t: np.ndarray  # shape (3,), millimetres

    def __post_init__(self):
        object.__setattr__(self, "q", _canonical_quat(self.q))
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite translation")
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return RigidTransform(matrix_to_quat(m[:3, :3]), m[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    def to_json(self) -> dict:
        return {"q": [float(v) for v in self.q], "t": [float(v) for v in self.t]}

    @staticmethod
    def from_json(d: dict) -> "RigidTransform":
        return RigidTransform(np.array(d["q"], dtype=np.float64),
                              np.array(d["t"], dtype=np.float64))


@dataclass(frozen=True)
class PoseError:
    position_mm: float
    orientation_deg: float


@dataclass(frozen=True)
class HeadScanSample:
    """One synchronized tracker sample: camera->marker and camera->pointer."""

    cam_to_marker: RigidTransform
    cam_to_pointer: RigidTransform


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns canonical (w >= 0) unit quaternion."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([s / 4,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      s / 4,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      s / 4,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      s / 4])
    return _canonical_quat(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle_deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = np.radians(angle_deg) / 2
    return _canonical_quat(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a."""
    q = quat_multiply(a.q, b.q)
    t = quat_to_matrix(a.q) @ b.t + a.t
    return RigidTransform(q, t)


def invert(t: RigidTransform) -> RigidTransform:
    r_inv = quat_to_matrix(t.q).T
    q_inv = np.array([t.q[0], -t.q[1], -t.q[2], -t.q[3]])
    return RigidTransform(q_inv, -(r_inv @ t.t))


def apply(t: RigidTransform, p) -> np.ndarray:
    """Rotate then translate a point or an (N, 3) array of points."""
    p = np.asarray(p, dtype=np.float64)
    return p @ quat_to_matrix(t.q).T + t.t


def to_axis_angle(q: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis (unit) and angle in degrees, angle in [0, 180].

    A rotation below 1e-9 degrees reports the fixed +x axis.
    """
    q = _canonical_quat(q)
    sin_half = np.linalg.norm(q[1:])
    angle = 2 * np.arctan2(sin_half, q[0])
    angle_deg = np.degrees(angle)
    if angle_deg < 1e-9:
        return np.array([1.0, 0.0, 0.0]), float(angle_deg)
    return q[1:] / sin_half, float(angle_deg)


def pose_error(predicted: RigidTransform, ground_truth: RigidTransform) -> PoseError:
    """Position is the norm of the residual translation; orientation is the
    axis-angle angle of the residual rotation (both of predicted^-1 * truth)."""
    residual = compose(invert(predicted), ground_truth)
    _, angle = to_axis_angle(residual.q)
    return PoseError(float(np.linalg.norm(residual.t)), angle)


def compile_head_scan(samples: list[HeadScanSample]) -> np.ndarray:
    """Pointer positions expressed in the marker frame, one row per sample."""
    if len(samples) == 0:
        raise ValueError("no samples")
    return np.array([
        compose(invert(s.cam_to_marker), s.cam_to_pointer).t for s in samples
    ])


@dataclass(frozen=True)
class WorkspaceBounds:
    """Axis-aligned box (mm) used to min-max scale position targets."""

    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if not np.all(hi > lo):
            raise ValueError("degenerate workspace bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @staticmethod
    def from_json(d: dict) -> "WorkspaceBounds":
        return WorkspaceBounds(np.array(d["lo"]), np.array(d["hi"]))


def pose_to_target(t: RigidTransform, bounds: WorkspaceBounds) -> np.ndarray:
    """7-vector regression target in [0, 1]: scaled position then quaternion."""
    if np.any(t.t < bounds.lo - _EPS) or np.any(t.t > bounds.hi + _EPS):
        raise ValueError(f"translation {t.t} outside workspace bounds")
    pos = (t.t - bounds.lo) / (bounds.hi - bounds.lo)
    quat = (t.q + 1.0) / 2.0
    return np.concatenate([pos, quat])


def target_to_pose(v: np.ndarray, bounds: WorkspaceBounds) -> RigidTransform:
    """Inverse of pose_to_target; renormalizes the decoded quaternion."""
    v = np.asarray(v, dtype=np.float64).reshape(7)
    pos = v[:3] * (bounds.hi - bounds.lo) + bounds.lo
    quat = v[3:] * 2.0 - 1.0
    return RigidTransform(quat, pos)  # constructor renormalizes / canonicalizes


def random_transform(rng: np.random.Generator,
                     max_translation_mm: float = 100.0) -> RigidTransform:
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-3:
        q = rng.normal(size=4)
    t = rng.uniform(-max_translation_mm, max_translation_mm, size=3)
    return RigidTransform(q, t)


def save_pose_json(path, t: RigidTransform) -> None:
    with open(path, "w") as f:
        json.dump(t.to_json(), f)


def load_pose_json(path) -> RigidTransform:
    with open(path) as f:
        return RigidTransform.from_json(json.load(f))
