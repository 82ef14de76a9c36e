"""Target density over grasps and a synthetic grasp-quality oracle.

Feasible grasps are scored by an oracle (``quality >= min_gws``).  Infeasible
grasps get the rim heuristic ``min_gws / (1 + d (pi - theta))``, where ``d``
is the distance to the nearest detected rim point and ``theta`` the approach
angle towards it, so the density never vanishes.

The oracle here is analytic: objects are surfaces of revolution (plate, pan,
pitcher analogues, the latter two with a handle) and a grasp is feasible when
it sits close to the top rim, approaches it from the prescribed direction and
the gripper palm stays clear of the object.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import GraspMCError
from .geometry import (Grasp, PointCloud, RigidTransform, approach_angle, nearest_rim,
                       quat_from_axis_angle, quat_to_matrix)

log = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


# ---------------------------------------------------------------------------
# heuristic and target


@dataclass(frozen=True)
class HeuristicParams:
    min_gws: float = 0.01

    def __post_init__(self):
        if not self.min_gws > 0:
            raise GraspMCError("bad-params", f"min_gws={self.min_gws}")


def heuristic_measure(theta, d, params=HeuristicParams()):
    """``min_gws / (1 + d (pi - theta))``, in ``(0, min_gws]``."""
    if d < 0:
        raise GraspMCError("bad-distance", f"d={d}")
    if not 0.0 <= theta <= math.pi:
        log.debug("heuristic_measure: theta=%r clamped to [0, pi]", theta)
        theta = min(max(theta, 0.0), math.pi)
    return params.min_gws / (1.0 + d * (math.pi - theta))


def normalize_measures(measures):
    m = np.asarray(measures, dtype=float)
    if m.size == 0:
        raise GraspMCError("nothing-to-normalize")
    if np.any(m <= 0):
        raise GraspMCError("bad-measure", "measures must be positive")
    return m / math.fsum(m)


class QualityOracle(Protocol):
    """Grasp-quality evaluator.

    ``evaluate`` returns the quality (``>= min_gws``) of a feasible grasp and
    ``None`` for an infeasible one.  It must be deterministic and safe to call
    from several threads.
    """

    def evaluate(self, g: Grasp) -> float | None: ...


@dataclass
class TargetDensity:
    """``pi(g)``: oracle quality when feasible, rim heuristic otherwise.

    ``box`` is an optional workspace ``(lo, hi)`` for grasp positions.
    Grasps outside it have density zero, so chains cannot drift off along
    the slowly decaying heuristic tail.  Random initial states are drawn
    from the box, or from the rims' bounding box grown by 0.05 m without one.
    """

    oracle: QualityOracle
    rims: object
    heuristic: HeuristicParams = field(default_factory=HeuristicParams)
    box: tuple | None = None
    name: str = "object"

    def evaluate(self, g):
        return evaluate_target(g, self)

    def sampling_box(self):
        if self.box is not None:
            return tuple(np.asarray(b, dtype=float) for b in self.box)
        if len(self.rims) == 0:
            raise GraspMCError("no-rims", "no workspace box and no rims to derive one")
        pts = self.rims.rim_points
        return pts.min(axis=0) - 0.05, pts.max(axis=0) + 0.05

    def random_grasp(self, rng):
        """Uniform position in the sampling box, uniform orientation."""
        lo, hi = self.sampling_box()
        q = rng.standard_normal(4)
        return Grasp(lo + (hi - lo) * rng.random(3), q / np.linalg.norm(q))


def evaluate_target(g, target):
    """``(measure, feasible)`` for grasp ``g``.

    The measure is > 0 for every grasp inside the workspace (everywhere
    without a box) and exactly 0 outside it.
    """
    if target.box is not None:
        lo, hi = target.box
        if np.any(g.position < lo) or np.any(g.position > hi):
            return 0.0, False
    q = target.oracle.evaluate(g)
    if q is not None:
        return max(float(q), target.heuristic.min_gws), True
    rim_point, d = nearest_rim(g.position, target.rims)
    return heuristic_measure(approach_angle(g, rim_point), d, target.heuristic), False


class TransformedOracle:
    """Evaluate ``oracle`` on grasps expressed in another frame.

    ``to_oracle_frame`` maps a grasp from the caller's frame into the frame
    the wrapped oracle works in.
    """

    def __init__(self, oracle, to_oracle_frame):
        self.oracle = oracle
        self.to_oracle_frame = to_oracle_frame

    def evaluate(self, g):
        return self.oracle.evaluate(self.to_oracle_frame.apply_grasp(g))


# ---------------------------------------------------------------------------
# synthetic objects

DEFAULT_DIMENSIONS = {
    "disc": {"radius": 0.1, "wall": 0.004, "approach_tilt": 0.5},
    "plate": {"radius": 0.12, "base_radius": 0.08, "lip_height": 0.015,
              "wall": 0.004, "approach_tilt": 0.5},
    "pan": {"radius": 0.12, "height": 0.05, "handle_length": 0.15, "handle_radius": 0.01,
            "handle_height": 0.04, "wall": 0.004, "approach_tilt": 0.5},
    "pitcher": {"radius": 0.07, "height": 0.2, "handle_span": 0.05, "handle_radius": 0.008,
                "wall": 0.004, "approach_tilt": 0.5},
}
KIND_ALIASES = {"pitcher-analog": "pitcher", "pitcher_analog": "pitcher"}


@dataclass
class SyntheticObject:
    """Parametric stand-in for a scanned object, posed by ``pose`` (object -> world)."""

    kind: str
    dimensions: dict = field(default_factory=dict)
    points: int = 2000
    noise_sigma: float = 0.0
    seed: int = 0
    pose: RigidTransform = field(default_factory=RigidTransform)
    name: str | None = None

    def __post_init__(self):
        self.kind = KIND_ALIASES.get(self.kind, self.kind)
        if self.kind not in DEFAULT_DIMENSIONS:
            raise GraspMCError("bad-object", f"unknown kind {self.kind!r}")
        dims = dict(DEFAULT_DIMENSIONS[self.kind])
        unknown = set(self.dimensions) - set(dims)
        if unknown:
            raise GraspMCError("bad-object", f"unknown dimensions {sorted(unknown)}")
        dims.update(self.dimensions)
        self.dimensions = dims
        positive = [k for k in dims if k != "approach_tilt"]
        if any(not dims[k] > 0 for k in positive):
            raise GraspMCError("bad-object", f"non-positive dimension in {dims}")
        if self.kind == "plate" and not dims["base_radius"] < dims["radius"]:
            raise GraspMCError("bad-object", "plate base_radius must be below radius")
        if self.points < 1 or self.noise_sigma < 0:
            raise GraspMCError("bad-object", f"points={self.points}, noise={self.noise_sigma}")
        if self.name is None:
            self.name = self.kind

    # -- geometry in the object frame ------------------------------------

    @property
    def profile(self):
        """Meridian polyline ``[(r, z), ...]`` from the axis out to the rim."""
        d = self.dimensions
        if self.kind == "plate":
            return np.array([[0.0, 0.0], [d["base_radius"], 0.0], [d["radius"], d["lip_height"]]])
        if self.kind == "disc":
            return np.array([[0.0, 0.0], [d["radius"], 0.0]])
        return np.array([[0.0, 0.0], [d["radius"], 0.0], [d["radius"], d["height"]]])

    @property
    def rim_radius(self):
        return float(self.profile[-1, 0])

    @property
    def rim_height(self):
        return float(self.profile[-1, 1])

    def _handle_curve(self, t):
        """Handle centre line at parameters ``t`` in [0, 1] (object frame)."""
        d = self.dimensions
        t = np.asarray(t, dtype=float)
        if self.kind == "pan":
            x = d["radius"] + t * d["handle_length"]
            return np.stack([x, np.zeros_like(t), np.full_like(t, d["handle_height"])], axis=-1)
        if self.kind == "pitcher":
            span = d["handle_span"]
            phi = (t - 0.5) * math.pi
            cz = 0.5 * d["height"]
            h = 0.5 * min(d["height"] * 0.8, 2 * span)
            return np.stack([d["radius"] + span * np.cos(phi), np.zeros_like(t),
                             cz + h * np.sin(phi)], axis=-1)
        return np.zeros((0, 3))

    @property
    def has_handle(self):
        return self.kind in ("pan", "pitcher")

    def rim_curve(self, n=360):
        phi = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        R, h = self.rim_radius, self.rim_height
        return self.pose.apply(np.stack([R * np.cos(phi), R * np.sin(phi), np.full(n, h)], axis=1))

    def rim_truth(self, points, tol=None):
        """Indices of ``points`` (world frame) within ``tol`` of the rim circle.

        ``tol`` defaults to 5% of the rim radius.
        """
        if tol is None:
            tol = 0.05 * self.rim_radius
        local = self.pose.inverse().apply(np.asarray(points, dtype=float))
        r = np.hypot(local[:, 0], local[:, 1])
        dist = np.hypot(r - self.rim_radius, local[:, 2] - self.rim_height)
        return np.flatnonzero(dist <= tol)

    def nearest_rim_point(self, p):
        """Nearest point of the top rim circle to object-frame point ``p``."""
        r = math.hypot(p[0], p[1])
        R, h = self.rim_radius, self.rim_height
        ux, uy = (p[0] / r, p[1] / r) if r > 1e-15 else (1.0, 0.0)
        c = np.array([R * ux, R * uy, h])
        return c, float(np.linalg.norm(p - c))

    def ideal_approach(self, c):
        """Best approach direction at rim point ``c``: down and tilted inwards."""
        tilt = self.dimensions["approach_tilt"]
        r = math.hypot(c[0], c[1])
        rx, ry = (c[0] / r, c[1] / r) if r > 1e-15 else (1.0, 0.0)
        return np.array([-math.sin(tilt) * rx, -math.sin(tilt) * ry, -math.cos(tilt)])

    def inside_solid(self, p):
        """Whether object-frame point ``p`` lies within the object's material."""
        r = math.hypot(p[0], p[1])
        if _polyline_distance(self.profile, r, p[2]) < 0.5 * self.dimensions["wall"]:
            return True
        if self.has_handle:
            return self._handle_distance(p) < self.dimensions["handle_radius"]
        return False

    def _handle_distance(self, p):
        ts = np.linspace(0.0, 1.0, 65)
        dist = np.linalg.norm(self._handle_curve(ts) - p, axis=1)
        # refine around the coarse minimum
        t0 = ts[int(np.argmin(dist))]
        fine = np.clip(np.linspace(t0 - 1 / 64, t0 + 1 / 64, 33), 0.0, 1.0)
        return float(min(dist.min(), np.min(np.linalg.norm(self._handle_curve(fine) - p, axis=1))))

    # -- sampling ---------------------------------------------------------

    def _surface_parts(self):
        parts = []
        prof = self.profile
        for (r0, z0), (r1, z1) in zip(prof[:-1], prof[1:]):
            area = math.pi * (r0 + r1) * math.hypot(r1 - r0, z1 - z0)
            parts.append(("segment", (r0, z0, r1, z1), area))
        if self.has_handle:
            ts = np.linspace(0.0, 1.0, 201)
            length = float(np.sum(np.linalg.norm(np.diff(self._handle_curve(ts), axis=0), axis=1)))
            parts.append(("handle", None, 2 * math.pi * self.dimensions["handle_radius"] * length))
        return parts

    def sample_points(self):
        """Quasi-uniform surface samples (world frame), plus optional Gaussian noise."""
        parts = self._surface_parts()
        counts = _apportion([a for _, _, a in parts], self.points)
        chunks = []
        for (kind, seg, _), n in zip(parts, counts):
            if n == 0:
                continue
            if kind == "segment":
                chunks.append(_sample_revolution_segment(*seg, n))
            else:
                chunks.append(self._sample_handle(n))
        pts = np.concatenate(chunks, axis=0)
        if self.noise_sigma > 0:
            rng = np.random.default_rng(self.seed)
            pts = pts + rng.normal(0.0, self.noise_sigma, size=pts.shape)
        return self.pose.apply(pts)

    def _sample_handle(self, n):
        k = np.arange(n)
        t = (k + 0.5) / n
        psi = k * GOLDEN_ANGLE
        c = self._handle_curve(t)
        tang = np.gradient(c, axis=0) if n > 1 else np.array([[1.0, 0.0, 0.0]])
        tang /= np.linalg.norm(tang, axis=1, keepdims=True)
        e1 = np.cross(tang, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(tang, e1)
        rho = self.dimensions["handle_radius"]
        return c + rho * (np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2)

    def cloud(self):
        return PointCloud(self.sample_points(), name=self.name)

    # -- (de)serialisation --------------------------------------------------

    def to_spec(self):
        spec = {"kind": self.kind, "dimensions": self.dimensions, "points": self.points,
                "noise_sigma": self.noise_sigma, "seed": self.seed, "name": self.name}
        if not (np.allclose(self.pose.rotation, np.eye(3)) and not np.any(self.pose.translation)):
            spec["pose"] = {"rotation": self.pose.rotation.tolist(),
                            "translation": self.pose.translation.tolist()}
        return spec

    @classmethod
    def from_spec(cls, spec):
        if not isinstance(spec, dict) or "kind" not in spec:
            raise GraspMCError("bad-object", "object spec needs a 'kind'")
        extra = set(spec) - {"kind", "dimensions", "points", "noise_sigma", "seed", "pose", "name"}
        if extra:
            raise GraspMCError("bad-object", f"unknown keys {sorted(extra)}")
        pose = RigidTransform()
        if spec.get("pose"):
            p = spec["pose"]
            rot = p.get("rotation")
            if rot is None and "axis" in p:
                rot = quat_to_matrix(quat_from_axis_angle(p["axis"], p.get("angle", 0.0)))
            pose = RigidTransform(rot if rot is not None else np.eye(3),
                                  p.get("translation", [0.0, 0.0, 0.0]))
        return cls(spec["kind"], dict(spec.get("dimensions", {})), int(spec.get("points", 2000)),
                   float(spec.get("noise_sigma", 0.0)), int(spec.get("seed", 0)), pose,
                   spec.get("name"))


def load_object_spec(path):
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise GraspMCError("bad-object", f"{path}: {exc}") from exc
    return SyntheticObject.from_spec(spec)


def _apportion(weights, total):
    w = np.asarray(weights, dtype=float)
    raw = w / w.sum() * total
    counts = np.floor(raw).astype(int)
    rest = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def _sample_revolution_segment(r0, z0, r1, z1, n):
    """Sunflower-style samples on the surface swept by segment (r0,z0)-(r1,z1)."""
    k = np.arange(n)
    u = (k + 0.5) / n
    phi = k * GOLDEN_ANGLE
    if abs(r1 - r0) > 1e-12:
        r = np.sqrt(r0 * r0 + u * (r1 * r1 - r0 * r0))
        z = z0 + (r - r0) / (r1 - r0) * (z1 - z0)
    else:
        r = np.full(n, r0)
        z = z0 + u * (z1 - z0)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _polyline_distance(poly, r, z):
    best = math.inf
    p = np.array([r, z])
    for a, b in zip(poly[:-1], poly[1:]):
        ab = b - a
        t = min(1.0, max(0.0, float((p - a) @ ab) / float(ab @ ab)))
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


# ---------------------------------------------------------------------------
# synthetic oracle


@dataclass
class SyntheticOracle:
    """Analytic quality oracle for a :class:`SyntheticObject`.

    Feasible iff the grasp is within ``eps_d`` of the top rim, its approach
    axis is within ``eps_theta`` of the ideal approach at the nearest rim
    point, and the palm (``palm_offset`` behind the grasp point along the
    approach axis) is not inside the object.  Quality falls linearly in both
    residuals from 1 at the ideal pose to ``min_gws`` at the tolerance edge.
    """

    obj: SyntheticObject
    eps_d: float = 0.02
    eps_theta: float = 0.5
    palm_offset: float = 0.04
    min_gws: float = 0.01

    def __post_init__(self):
        if not (self.eps_d > 0 and 0 < self.eps_theta <= math.pi):
            raise GraspMCError("bad-object", f"eps_d={self.eps_d}, eps_theta={self.eps_theta}")
        self._to_object = self.obj.pose.inverse()

    def residuals(self, g):
        """``(d, theta_residual, palm_clear)`` in the object frame."""
        p = self._to_object.apply(g.position)
        b = self._to_object.apply_vector(g.approach)
        c, d = self.obj.nearest_rim_point(p)
        cos_t = float(np.clip(b @ self.obj.ideal_approach(c), -1.0, 1.0))
        palm = p - self.palm_offset * b
        return d, math.acos(cos_t), not self.obj.inside_solid(palm)

    def evaluate(self, g):
        p = self._to_object.apply(g.position)
        c, d = self.obj.nearest_rim_point(p)
        if d > self.eps_d:
            return None
        b = self._to_object.apply_vector(g.approach)
        th = math.acos(float(np.clip(b @ self.obj.ideal_approach(c), -1.0, 1.0)))
        if th > self.eps_theta:
            return None
        if self.obj.inside_solid(p - self.palm_offset * b):
            return None
        score = (1.0 - d / self.eps_d) * (1.0 - th / self.eps_theta)
        return self.min_gws + (1.0 - self.min_gws) * score

    def ideal_grasp(self, phi=0.0, standoff=0.0):
        """World-frame grasp at rim azimuth ``phi`` with zero residuals.

        ``standoff`` moves the grasp back along the approach line (then the
        distance residual equals ``standoff``).
        """
        R, h = self.obj.rim_radius, self.obj.rim_height
        c = np.array([R * math.cos(phi), R * math.sin(phi), h])
        a = self.obj.ideal_approach(c)
        q = quat_between(np.array([0.0, 0.0, -1.0]), a)
        g = Grasp(c - standoff * a, q)
        return self.obj.pose.apply_grasp(g)


def synthetic_oracle(obj, eps_d=0.02, eps_theta=0.5, **kwargs):
    return SyntheticOracle(obj, eps_d, eps_theta, **kwargs)


def quat_between(u, v):
    """Unit quaternion rotating unit vector ``u`` onto unit vector ``v``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = float(u @ v)
    if c < -1.0 + 1e-12:
        axis = np.cross(u, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(u, [0.0, 1.0, 0.0])
        return quat_from_axis_angle(axis, math.pi)
    axis = np.cross(u, v)
    q = np.concatenate(([1.0 + c], axis))
    return q / np.linalg.norm(q)


def random_pose(rng, translation_scale=0.1):
    """Uniformly random rotation with a Gaussian translation."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return RigidTransform(quat_to_matrix(q), rng.normal(0.0, translation_scale, 3))


__all__ = [
    "HeuristicParams", "heuristic_measure", "normalize_measures", "QualityOracle",
    "TargetDensity", "evaluate_target", "TransformedOracle", "SyntheticObject",
    "SyntheticOracle", "synthetic_oracle", "load_object_spec", "quat_between",
    "random_pose",
]
