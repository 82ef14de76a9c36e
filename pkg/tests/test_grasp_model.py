import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspmc.errors import GraspMCError
from graspmc.geometry import Grasp, RigidTransform, RimSet, quat_from_axis_angle, quat_mul, quat_to_matrix
from graspmc.grasp_model import (
    HeuristicParams,
    SyntheticObject,
    TargetDensity,
    evaluate_target,
    heuristic_measure,
    normalize_measures,
    quat_between,
    synthetic_oracle,
)

angles = st.floats(0, math.pi)
dists = st.floats(0, 50)


class NeverFeasible:
    def evaluate(self, g):
        return None


def test_heuristic_examples():
    for d in (0.0, 0.3, 10.0):
        assert heuristic_measure(math.pi, d) == 0.01
    for th in (0.0, 1.0, 3.0):
        assert heuristic_measure(th, 0.0) == 0.01
    assert heuristic_measure(0.0, 1.0) == pytest.approx(0.00241453007005223860, abs=1e-12)


def test_heuristic_clamps_and_rejects():
    assert heuristic_measure(-0.5, 1.0) == heuristic_measure(0.0, 1.0)
    assert heuristic_measure(4.0, 1.0) == 0.01
    with pytest.raises(GraspMCError):
        heuristic_measure(1.0, -1.0)
    with pytest.raises(GraspMCError):
        HeuristicParams(0.0)


@settings(max_examples=200, deadline=None)
@given(angles, angles, dists, dists)
def test_heuristic_monotone_and_bounded(t1, t2, d1, d2):
    (t1, t2), (d1, d2) = sorted((t1, t2)), sorted((d1, d2))
    assert 0 < heuristic_measure(t1, d1) <= 0.01
    assert heuristic_measure(t1, d1) <= heuristic_measure(t2, d1)
    assert heuristic_measure(t1, d1) >= heuristic_measure(t1, d2)
    # a proposal closer and better aimed never scores lower
    assert heuristic_measure(t2, d1) >= heuristic_measure(t1, d2)


def test_normalize_measures():
    assert normalize_measures([0.5]).tolist() == [1.0]
    assert normalize_measures([1, 1, 2]).tolist() == [0.25, 0.25, 0.5]
    m = normalize_measures(np.random.default_rng(0).uniform(1e-3, 1, 1000))
    assert abs(m.sum() - 1) <= 1e-12
    with pytest.raises(GraspMCError) as e:
        normalize_measures([])
    assert e.value.code == "nothing-to-normalize"


def test_far_infeasible_grasp():
    target = TargetDensity(NeverFeasible(), RimSet(np.zeros((1, 3))))
    # approach axis (0,0,-1) at z = 10 points away from a rim at z = 20: theta = 0
    g = Grasp(np.array([0.0, 0.0, 10.0]), np.array([1.0, 0, 0, 0]))
    target.rims = RimSet(np.array([[0.0, 0.0, 20.0]]))
    m, feas = evaluate_target(g, target)
    assert not feas
    assert m == pytest.approx(0.01 / (1 + 10 * math.pi), abs=1e-15)
    assert m == pytest.approx(3.08490333877263544e-4, abs=1e-12)


def test_infeasible_measures_positive_and_below_floor():
    rng = np.random.default_rng(1)
    target = TargetDensity(NeverFeasible(), RimSet(rng.normal(size=(50, 3))))
    for _ in range(500):
        q = rng.standard_normal(4)
        m, feas = evaluate_target(Grasp(rng.normal(size=3) * 5, q / np.linalg.norm(q)), target)
        assert 0 < m <= 0.01 and not feas


def test_no_rims_propagates():
    target = TargetDensity(NeverFeasible(), RimSet(np.zeros((0, 3))))
    with pytest.raises(GraspMCError) as e:
        evaluate_target(Grasp(np.zeros(3), np.array([1.0, 0, 0, 0])), target)
    assert e.value.code == "no-rims"


def test_box_gives_zero_outside():
    target = TargetDensity(NeverFeasible(), RimSet(np.zeros((1, 3))),
                           box=(-np.ones(3), np.ones(3)))
    assert evaluate_target(Grasp(np.array([2.0, 0, 0]), np.array([1.0, 0, 0, 0])), target) == (0.0, False)
    assert evaluate_target(Grasp(np.array([0.5, 0, 0]), np.array([1.0, 0, 0, 0])), target)[0] > 0


@pytest.mark.parametrize("kind", ["plate", "pan", "pitcher", "disc"])
def test_ideal_pose_has_quality_one(kind):
    obj = SyntheticObject(kind)
    oracle = synthetic_oracle(obj)
    target = TargetDensity(oracle, RimSet(obj.rim_curve()))
    for phi in np.linspace(0, 2 * math.pi, 7):
        m, feas = evaluate_target(oracle.ideal_grasp(phi), target)
        assert feas and m == pytest.approx(1.0, abs=1e-12)


def test_tolerance_edges():
    obj = SyntheticObject("plate")
    oracle = synthetic_oracle(obj, eps_d=0.02, eps_theta=0.5)
    assert oracle.evaluate(oracle.ideal_grasp(0.3, standoff=0.04)) is None
    q = oracle.evaluate(oracle.ideal_grasp(0.3, standoff=0.01))
    assert q == pytest.approx(0.01 + 0.99 * 0.5, abs=1e-12)
    # rotating the approach by more than eps_theta about a perpendicular axis breaks feasibility
    g = oracle.ideal_grasp(0.0)
    a = g.approach
    perp = np.cross(a, [0.0, 1.0, 0.0])
    for ang, ok in ((0.25, True), (0.6, False)):
        tilted = Grasp(g.position, quat_mul(quat_from_axis_angle(perp, ang), g.orientation))
        res = oracle.evaluate(tilted)
        assert (res is not None) == ok
        if ok:
            assert res == pytest.approx(0.01 + 0.99 * 0.5, abs=1e-9)
    assert min(oracle.evaluate(oracle.ideal_grasp(p, standoff=0.019)) for p in (0, 1, 2)) >= 0.01


def test_feasible_dominates_infeasible():
    obj = SyntheticObject("plate")
    oracle = synthetic_oracle(obj)
    target = TargetDensity(oracle, RimSet(obj.rim_curve()))
    rng = np.random.default_rng(2)
    feas, infeas = [], []
    for _ in range(3000):
        base = oracle.ideal_grasp(rng.uniform(0, 2 * math.pi), standoff=rng.uniform(-0.03, 0.03))
        q = quat_mul(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 1.0)), base.orientation)
        m, f = evaluate_target(Grasp(base.position + rng.normal(size=3) * 0.005, q), target)
        (feas if f else infeas).append(m)
    assert feas and infeas
    assert min(feas) >= 0.01 >= max(infeas)


def test_bad_object():
    with pytest.raises(GraspMCError):
        SyntheticObject("teapot")
    with pytest.raises(GraspMCError):
        SyntheticObject("plate", {"radius": -1.0})
    with pytest.raises(GraspMCError):
        synthetic_oracle(SyntheticObject("plate"), eps_d=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_oracle_rigid_equivariance(seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(4)
    pose = RigidTransform(quat_to_matrix(q / np.linalg.norm(q)), rng.normal(size=3))
    plain = synthetic_oracle(SyntheticObject("pan"))
    moved = synthetic_oracle(SyntheticObject("pan", pose=pose))
    for _ in range(20):
        base = plain.ideal_grasp(rng.uniform(0, 2 * math.pi), standoff=rng.uniform(-0.03, 0.03))
        rot = quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.8))
        g = Grasp(base.position + rng.normal(size=3) * 0.01, quat_mul(rot, base.orientation))
        a, b = plain.evaluate(g), moved.evaluate(pose.apply_grasp(g))
        assert (a is None) == (b is None)
        if a is not None:
            assert abs(a - b) <= 1e-9


def test_quat_between():
    rng = np.random.default_rng(3)
    for _ in range(100):
        u, v = rng.normal(size=(2, 3))
        u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
        assert np.allclose(quat_to_matrix(quat_between(u, v)) @ u, v, atol=1e-12)
    assert np.allclose(quat_to_matrix(quat_between([0, 0, 1.0], [0, 0, -1.0])) @ [0, 0, 1.0],
                       [0, 0, -1.0], atol=1e-12)


def test_object_spec_roundtrip():
    obj = SyntheticObject("pitcher", {"radius": 0.08}, points=500, noise_sigma=0.001, seed=4,
                          pose=RigidTransform(np.eye(3), [0.1, 0, 0]))
    again = SyntheticObject.from_spec(obj.to_spec())
    assert np.array_equal(obj.sample_points(), again.sample_points())


def test_cloud_consistent_with_parametrisation():
    obj = SyntheticObject("plate", points=3000)
    local = obj.sample_points()
    r = np.hypot(local[:, 0], local[:, 1])
    from graspmc.grasp_model import _polyline_distance
    assert max(_polyline_distance(obj.profile, a, b) for a, b in zip(r, local[:, 2])) <= 1e-12
    assert len(obj.rim_truth(local)) > 0


@pytest.mark.slow
def test_plate_feasible_volume_monte_carlo():
    # Feasible set: positions in a tube of radius eps_d around the rim circle
    # (Pappus: 2 pi^2 R eps_d^2) times approach axes in a cap of half-angle
    # eps_theta ((1 - cos eps_theta) / 2 of the sphere).  The palm never hits
    # the plate there, so the fraction of the sampling box is closed-form.
    obj = SyntheticObject("plate")
    oracle = synthetic_oracle(obj)
    pts = obj.cloud().points
    lo, hi = pts.min(axis=0) - 0.05, pts.max(axis=0) + 0.05
    want = (2 * math.pi ** 2 * obj.rim_radius * 0.02 ** 2 * (1 - math.cos(0.5)) / 2
            / np.prod(hi - lo))
    rng = np.random.default_rng(5)
    n = 10 ** 6
    P = lo + (hi - lo) * rng.random((n, 3))
    Q = rng.standard_normal((n, 4))
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    hits = sum(oracle.evaluate(Grasp(p, q)) is not None for p, q in zip(P, Q))
    se = math.sqrt(want * (1 - want) / n)
    assert abs(hits / n - want) <= 4 * se
