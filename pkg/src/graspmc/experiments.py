"""Scenes and the paired-run experiment protocol.

A scene is a synthetic object brought into its canonical pose, with rims
detected on its point cloud and a target density whose oracle still works
in the object's own frame.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, RigidTransform, RimDetectionParams, RimSet, align_to_canonical, detect_rims
from .grasp_model import HeuristicParams, SyntheticObject, TargetDensity, TransformedOracle, synthetic_oracle
from .sampler import InitSpec, KameleonConfig, RwConfig, run_chain
from .transfer import init_from_chain


@dataclass
class Scene:
    name: str
    obj: SyntheticObject
    cloud: PointCloud
    rims: object
    target: TargetDensity
    to_canonical: RigidTransform
    oracle: object


def suggest_rim_params(cloud, radius_factor=3.0, edge_fraction=0.5):
    """Rim parameters scaled to the cloud's sampling density.

    The spacing ``h`` comes from the median nearest-neighbour distance.  A
    point on a straight boundary of a flat patch with density ``1/h^2`` has
    a summed neighbour vector of length about ``(2/3) r^3 / h^2``; ``zeta``
    is ``edge_fraction`` of that, squared.
    """
    pts = cloud.points
    d, _ = cKDTree(pts).query(pts, k=2)
    h = float(np.median(d[:, 1])) / 1.075
    r = radius_factor * h
    edge = 2.0 / 3.0 * r ** 3 / h ** 2
    return RimDetectionParams(r, (edge_fraction * edge) ** 2)


def prepare_scene(obj, rim_params=None, align=True, eps_d=0.02, eps_theta=0.5,
                  heuristic=HeuristicParams(), margin=0.05, cloud=None, rim_points=None):
    """Build the scene for ``obj``.

    ``cloud`` and ``rim_points`` replace the generated cloud and the detected
    rims; both are given in the object's world frame.
    """
    cloud = obj.cloud() if cloud is None else cloud
    if align:
        cloud, to_canonical, _ = align_to_canonical(cloud)
    else:
        to_canonical = RigidTransform()
    if rim_points is None:
        rims = detect_rims(cloud, rim_params or suggest_rim_params(cloud))
    else:
        rims = RimSet(to_canonical.apply(np.asarray(rim_points, dtype=float).reshape(-1, 3)),
                      source=cloud.name)
    base = synthetic_oracle(obj, eps_d, eps_theta, min_gws=heuristic.min_gws)
    oracle = TransformedOracle(base, to_canonical.inverse())
    pts = cloud.points
    box = (pts.min(axis=0) - margin, pts.max(axis=0) + margin)
    target = TargetDensity(oracle, rims, heuristic, box, name=obj.name)
    return Scene(obj.name, obj, cloud, rims, target, to_canonical, base)


def feasible_fraction(scene, n, rng):
    """Monte-Carlo fraction of uniform random poses in the scene box that are feasible."""
    oracle, target = scene.target.oracle, scene.target
    return sum(oracle.evaluate(target.random_grasp(rng)) is not None for _ in range(n)) / n


def run_rw(scene, seed, n_iters=5000, **kw):
    cfg = RwConfig(n_iters=n_iters, seed=seed, **kw)
    return run_chain(scene.target, InitSpec("random"), cfg, object_id=scene.name)


def run_kameleon(scene, seed, burn_in=1000, prior=None, n_iters=5000, **kw):
    """Kameleon run, with ``prior`` (a donor history) in chain mode or a random prior."""
    cfg = KameleonConfig(n_iters=n_iters, burn_in=burn_in, seed=seed, **kw)
    rng = np.random.default_rng(seed)
    init = InitSpec("random") if prior is None else init_from_chain(prior, rng)
    return run_chain(scene.target, init, cfg, rng, object_id=scene.name)


def table_row_label(burn_in, prior):
    return f"[{burn_in},{'p' if prior else 'np'}]"


def grasp_learning_protocol(scene, seed, burn_ins=(1000, 2000), n_iters=5000, **kw):
    """One random-walk donor run plus four Kameleon runs, keyed by row label."""
    donor = run_rw(scene, seed, n_iters=n_iters)
    runs = {"RW MCMC": donor}
    for b in burn_ins:
        for prior in (False, True):
            runs[table_row_label(b, prior)] = run_kameleon(
                scene, seed, burn_in=b, prior=donor if prior else None, n_iters=n_iters, **kw)
    return runs


def scaled(obj, factor, name=None):
    """Copy of ``obj`` with every length dimension multiplied by ``factor``."""
    dims = {k: (v if k == "approach_tilt" else v * factor) for k, v in obj.dimensions.items()}
    return dataclasses.replace(obj, dimensions=dims, name=name or f"{obj.name}x{factor:g}")

