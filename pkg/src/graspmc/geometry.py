"""Poses, quaternion helpers, point clouds and rim detection.

Quaternions are stored scalar-first, ``(w, x, y, z)``.  A grasp is the 7-vector
``(x, y, z, qw, qx, qy, qz)``; the gripper approaches along its local
``APPROACH_AXIS`` rotated by the orientation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import GraspMCError

log = logging.getLogger(__name__)

APPROACH_AXIS = np.array([0.0, 0.0, -1.0])
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# quaternion algebra


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise GraspMCError("non-unit-quaternion", f"cannot normalise {q!r}")
    return q / n


def quat_mul(a, b):
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate(([np.cos(h)], np.sin(h) * axis))


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    """Rotation matrix to unit quaternion (Shepperd's method), ``w >= 0``."""
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_rotate(q, v):
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_geodesic(a, b):
    """Rotation angle between two unit quaternions, in ``[0, pi]``.

    ``q`` and ``-q`` describe the same rotation, so the distance is
    ``2 * arccos(|<a, b>|)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for q in (a, b):
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise GraspMCError("non-unit-quaternion", f"|q| = {np.linalg.norm(q)}")
    dot = min(1.0, abs(float(a @ b)))
    return 2.0 * np.arccos(dot)


# ---------------------------------------------------------------------------
# grasps and rigid transforms


@dataclass
class Grasp:
    """Gripper pose relative to an object: position in meters, unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        self.position = np.array(self.position, dtype=float).reshape(3)
        q = np.array(self.orientation, dtype=float).reshape(4)
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(q))):
            raise GraspMCError("non-finite-grasp", f"{self.position}, {q}")
        self.orientation = quat_normalize(q)

    @classmethod
    def from_vector(cls, v, exact=False):
        """Build from a 7-vector.

        ``exact=True`` keeps an already-unit quaternion bit-for-bit instead of
        renormalising it (used when reloading saved chains).
        """
        v = np.asarray(v, dtype=float)
        if exact:
            q = v[3:7].copy()
            if np.all(np.isfinite(v)) and abs(np.linalg.norm(q) - 1.0) <= 1e-9:
                g = cls.__new__(cls)
                g.position = v[:3].copy()
                g.orientation = q
                return g
        return cls(v[:3], v[3:7])

    @property
    def vector(self):
        return np.concatenate((self.position, self.orientation))

    @property
    def approach(self):
        """Unit approach direction of the gripper in the object frame."""
        return quat_rotate(self.orientation, APPROACH_AXIS)


@dataclass
class RigidTransform:
    """``p -> rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.array(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.array(self.translation, dtype=float).reshape(3)

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_grasp(self, g):
        q = quat_mul(matrix_to_quat(self.rotation), g.orientation)
        return Grasp(self.rotation @ g.position + self.translation, q)

    def apply_vector(self, v):
        return self.rotation @ np.asarray(v, dtype=float)

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other):
        """``self`` after ``other``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


# ---------------------------------------------------------------------------
# point clouds


@dataclass
class PointCloud:
    points: np.ndarray
    name: str = "cloud"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GraspMCError("bad-cloud", f"expected (n, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise GraspMCError("bad-cloud", "non-finite coordinates")
        self.points = pts

    def __len__(self):
        return len(self.points)


def read_points(path):
    """Read an ASCII ``x y z`` file; ``#`` lines are comments, blank lines skipped."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise GraspMCError("bad-cloud-file", f"{path}:{lineno}: expected 3 columns")
            rows.append([float(p) for p in parts])
    return np.array(rows, dtype=float).reshape(-1, 3)


def write_points(path, points, header=None):
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend("%.17g %.17g %.17g" % tuple(p) for p in np.asarray(points, dtype=float))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_cloud(path):
    return PointCloud(read_points(path), name=Path(path).stem)


def save_cloud(cloud, path):
    write_points(path, cloud.points, header=f"point cloud {cloud.name}, units: m")


# ---------------------------------------------------------------------------
# rims


@dataclass(frozen=True)
class RimDetectionParams:
    radius: float
    zeta: float

    def __post_init__(self):
        if not (self.radius > 0 and self.zeta > 0):
            raise GraspMCError("bad-params", f"radius={self.radius}, zeta={self.zeta}")


@dataclass
class RimSet:
    rim_points: np.ndarray
    source: str = "cloud"
    indices: np.ndarray | None = None

    def __post_init__(self):
        self.rim_points = np.array(self.rim_points, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.rim_points)


def rim_scores(cloud, radius):
    """``||sum_i (p_i - o)||^2`` over the open ball of ``radius`` around each point.

    Also returns the neighbour count of every point.
    """
    pts = cloud.points
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray").astype(np.int64)
    return _kernels.neighbour_scores(pts, pairs.reshape(-1, 2))


def detect_rims(cloud, params):
    """Points whose summed neighbour displacement exceeds ``params.zeta``.

    The result may be empty when nothing crosses the threshold.
    """
    if len(cloud) == 0:
        raise GraspMCError("empty-cloud")
    if not (params.radius > 0 and params.zeta > 0):
        raise GraspMCError("bad-params")
    scores, counts = rim_scores(cloud, params.radius)
    if counts.max() == 0:
        raise GraspMCError("bad-params", f"no point has a neighbour within radius {params.radius}")
    idx = np.flatnonzero(scores > params.zeta)
    return RimSet(cloud.points[idx], source=cloud.name, indices=idx)


def nearest_rim(position, rims):
    """Closest rim point to ``position`` and its distance."""
    if len(rims) == 0:
        raise GraspMCError("no-rims")
    q = np.asarray(position, dtype=float)
    i, d2 = _kernels.nearest_index(rims.rim_points, q)
    return rims.rim_points[i], float(np.sqrt(d2))


def approach_angle(g, rim_point):
    """Angle between the reversed approach axis and the gripper-to-rim direction.

    ``pi`` when the gripper points straight at ``rim_point``, ``0`` when it
    points directly away.  A rim point coincident with the gripper position
    gives ``0`` (degenerate).
    """
    v = np.asarray(rim_point, dtype=float) - g.position
    n = np.linalg.norm(v)
    if n <= 1e-12:
        log.debug("approach_angle: rim point coincides with gripper position")
        return 0.0
    c = float(-g.approach @ v) / n
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# canonical alignment


def align_to_canonical(cloud):
    """Center ``cloud`` and rotate its principal axes onto +z, +x, +y.

    Axes are taken by descending spread.  Each axis is signed so the third
    moment of the coordinates along it is non-negative; if that leaves a
    reflection, the axis with the weakest third moment is flipped.

    Returns ``(aligned_cloud, transform, degenerate)``.
    """
    pts = cloud.points
    if len(pts) < 2:
        raise GraspMCError("degenerate-cloud", f"{len(pts)} points")
    centroid = pts.mean(axis=0)
    c = pts - centroid
    evals, evecs = np.linalg.eigh(c.T @ c / len(pts))
    order = np.argsort(evals, kind="stable")[::-1]
    evals = evals[order]
    # rows: new x, y, z  <-  2nd, 3rd, 1st principal axis
    axes = evecs[:, order].T[[1, 2, 0]].copy()
    m3 = np.empty(3)
    scale = np.sqrt(max(evals[0], 1e-300)) ** 3
    for k in range(3):
        m3[k] = np.mean((c @ axes[k]) ** 3)
        tie = abs(m3[k]) <= 1e-12 * scale
        if (tie and _dominant_component(axes[k]) < 0) or (not tie and m3[k] < 0):
            axes[k] = -axes[k]
            m3[k] = -m3[k]
    if np.linalg.det(axes) < 0:
        weakest = int(np.argmin(np.abs(m3)))
        axes[weakest] = -axes[weakest]
    degenerate = len(pts) < 4 or evals[2] <= 1e-12 * max(evals[0], 1e-300)
    tf = RigidTransform(axes, -axes @ centroid)
    return PointCloud(tf.apply(pts), name=cloud.name), tf, bool(degenerate)


def _dominant_component(v):
    return v[int(np.argmax(np.abs(v)))]
