import numpy as np
import pytest

from safegov.geometry import HPolytope, PolyUnion, lp_solve, set_equal, union_subset
from safegov.geometry.lp import OPTIMAL
from safegov.safeset import (
    ConstraintSpec,
    FragmentBudgetError,
    LinearSystem,
    NoSafeRegionError,
    OutOfDomainError,
    SafeSetArtifact,
    artifact_hash,
    build_safe_artifact,
    classify,
    compute_unrecoverable,
    dp_oracle,
    load_artifact,
    save_artifact,
)


def interval(lo, hi):
    return HPolytope.from_bounds([lo], [hi])


def sys_1d():
    """x+ = x + u + w with U = [-1, 1], W = [-2, 2], box [-10, 10]."""
    sys = LinearSystem(np.eye(1), np.eye(1), np.eye(1))
    spec = ConstraintSpec(
        X0=PolyUnion([HPolytope(np.array([[1.0]]), np.array([0.0]))]),
        U=interval(-1, 1),
        W=interval(-2, 2),
        box=interval(-10, 10),
    )
    return sys, spec


def in_box_upper(union, box_hi=10.0):
    """Largest x <= box_hi contained in the union (1-D helper)."""
    hi = -np.inf
    for m in union.members:
        hi = max(hi, min(m.support(np.array([1.0])), box_hi))
    return hi


def inflated_complement_oracle(z, Xk, E, W):
    """True iff z + E w stays outside every member of Xk for all w in W.

    Per member, 'exists w in W with z + E w inside' is an LP feasibility
    problem in w; the oracle is independent of the Minkowski-sum path.
    """
    z = np.asarray(z, dtype=float)
    for m in Xk.members:
        A = np.vstack([m.A @ E, W.A])
        b = np.concatenate([m.b - m.A @ z, W.b])
        if lp_solve(np.zeros(W.dim), A, b).status == OPTIMAL:
            return False
    return True


# ------------------------------------------------------ 1-D analytic case


def test_1d_recursion_matches_hand_solution():
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=5)
    assert sets.K == 5
    # In-box, X_k = [-10, k]: worst-case u shifts the band up by one per step.
    for k, Xk in enumerate(sets.sets):
        assert in_box_upper(Xk) == pytest.approx(float(k), abs=1e-6)
        xs = np.linspace(-9.9, 9.9, 397)
        labels = Xk.contains_many(xs[:, None])
        expected = xs <= k
        off_boundary = np.abs(xs - k) > 1e-6
        assert np.all(labels[off_boundary] == expected[off_boundary])


def test_1d_recursion_monotone_chain():
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=5)
    for a, b in zip(sets.sets[:-1], sets.sets[1:]):
        assert union_subset(a, b)


def test_1d_against_dp_oracle():
    sys, spec = sys_1d()
    K = 4
    sets = compute_unrecoverable(sys, spec, K=K)
    grid = dp_oracle(sys, spec, K, grid_resolution=200, n_u=9, n_w=9)
    centers = grid.centers()
    ours = sets.final.contains_many(centers)
    ref = grid.labels.ravel()
    cell = 20.0 / 200
    boundary = np.abs(centers[:, 0] - K) <= cell
    agree = (ours == ref) | boundary
    assert agree.mean() >= 0.99


def test_zero_disturbance_fixpoint_immediately():
    # W = {0}: staying put with u = 0 is always possible, so X_k = X0.
    sys = LinearSystem(np.eye(1), np.eye(1), np.eye(1))
    spec = ConstraintSpec(
        X0=PolyUnion([HPolytope(np.array([[1.0]]), np.array([0.0]))]),
        U=interval(-1, 1),
        W=HPolytope.from_point([0.0]),
        box=interval(-10, 10),
    )
    sets = compute_unrecoverable(sys, spec, K=6)
    assert sets.fixpoint_reached
    assert sets.K <= 2
    for Xk in sets.sets:
        assert in_box_upper(Xk) == pytest.approx(0.0, abs=1e-6)
    grid = dp_oracle(sys, spec, 6, grid_resolution=200, n_u=9, n_w=1)
    centers = grid.centers()
    ours = sets.final.contains_many(centers)
    boundary = np.abs(centers[:, 0] - 0.0) <= 0.1
    assert ((ours == grid.labels.ravel()) | boundary).mean() >= 0.99


def test_k_zero_returns_x0_only():
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=0)
    assert sets.K == 0
    assert union_subset(sets.sets[0], spec.X0) and union_subset(spec.X0, sets.sets[0])


def test_autonomous_backward_orbit():
    # u = 0, w = 0: the unrecoverable set is the backward orbit of X0.
    sys = LinearSystem(np.array([[1.1]]), np.eye(1), np.eye(1))
    spec = ConstraintSpec(
        X0=PolyUnion([interval(1.0, 2.0)]),
        U=HPolytope.from_point([0.0]),
        W=HPolytope.from_point([0.0]),
        box=interval(-10, 10),
    )
    sets = compute_unrecoverable(sys, spec, K=3)
    X3 = sets.final
    # orbit: union of [1/1.1^j, 2/1.1^j] for j = 0..3
    for j in range(4):
        lo, hi = 1.0 / 1.1 ** j, 2.0 / 1.1 ** j
        mid = 0.5 * (lo + hi)
        assert X3.contains([mid])
    assert not X3.contains([0.5])
    assert not X3.contains([2.5])
    grid = dp_oracle(sys, spec, 3, grid_resolution=400, n_u=1, n_w=1)
    centers = grid.centers()
    ours = X3.contains_many(centers)
    ref = grid.labels.ravel()
    # exclude one-cell bands at the orbit edges
    cell = 20.0 / 400
    band = np.zeros(len(centers), dtype=bool)
    for j in range(4):
        for edge in (1.0 / 1.1 ** j, 2.0 / 1.1 ** j):
            band |= np.abs(centers[:, 0] - edge) <= cell
    assert ((ours == ref) | band).mean() >= 0.99


def test_dp_oracle_empty_x0():
    sys = LinearSystem(np.eye(1), np.eye(1), np.eye(1))
    spec = ConstraintSpec(
        X0=PolyUnion([HPolytope.empty(1)], dim=1),
        U=interval(-1, 1),
        W=interval(-1, 1),
        box=interval(-10, 10),
    )
    grid = dp_oracle(sys, spec, 5, grid_resolution=50)
    assert not grid.labels.any()
    sets = compute_unrecoverable(sys, spec, K=3)
    assert all(X.is_empty() for X in sets.sets)
    assert sets.fixpoint_reached


# ------------------------------------------------------ 2-D reduced system


def sys_2d(v_fixed=20.0, Ts=0.5):
    """Gap/relative-speed subsystem at a frozen ego speed band."""
    A = np.array([[1.0, Ts], [0.0, 1.0]])
    B = np.array([[-Ts * Ts / 2.0], [-Ts]])
    E = np.array([[Ts * Ts / 2.0], [Ts]])
    sys = LinearSystem(A, B, E)
    box = HPolytope.from_bounds([0.0, -20.0], [120.0, 20.0])
    # unsafe: gap below v_fixed or above 2 v_fixed
    close = HPolytope(np.array([[1.0, 0.0]]), np.array([v_fixed]))
    far = HPolytope(np.array([[-1.0, 0.0]]), np.array([-2.0 * v_fixed]))
    spec = ConstraintSpec(
        X0=PolyUnion([close, far]),
        U=interval(-3, 3),
        W=interval(-1.5, 1.5),
        box=box,
    )
    return sys, spec


def test_2d_reduced_against_dp_oracle_small():
    sys, spec = sys_2d()
    K = 4
    sets = compute_unrecoverable(sys, spec, K=K)
    for a, b in zip(sets.sets[:-1], sets.sets[1:]):
        assert union_subset(a, b)
    grid = dp_oracle(sys, spec, K, grid_resolution=100, n_u=13, n_w=5)
    centers = grid.centers()
    ours = sets.final.contains_many(centers)
    ref = grid.labels.ravel()
    lab = grid.labels
    edge = np.zeros_like(lab)
    edge[:-1] |= lab[1:] != lab[:-1]
    edge[1:] |= lab[1:] != lab[:-1]
    edge[:, :-1] |= lab[:, 1:] != lab[:, :-1]
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    mask = ~edge.ravel()
    assert (ours[mask] == ref[mask]).mean() >= 0.99


# --------------------------------------------------------- safe artifacts


def test_safe_artifact_1d_band():
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=2)
    art = build_safe_artifact(sets, sys, spec)
    # X_2 reaches x <= 2; inflating by (-E)W = [-2, 2] pushes the safe
    # band to [2 + 2, 10].
    assert len(art.safe) == 1
    m = art.safe.members[0]
    assert m.support(np.array([1.0])) == pytest.approx(10.0, abs=1e-6)
    assert -m.support(np.array([-1.0])) == pytest.approx(4.0, abs=1e-6)


def test_safe_artifact_zero_disturbance_inflation_identity():
    sys = LinearSystem(np.eye(1), np.eye(1), np.eye(1))
    spec = ConstraintSpec(
        X0=PolyUnion([HPolytope(np.array([[1.0]]), np.array([0.0]))]),
        U=interval(-1, 1),
        W=HPolytope.from_point([0.0]),
        box=interval(-10, 10),
    )
    sets = compute_unrecoverable(sys, spec, K=3)
    art = build_safe_artifact(sets, sys, spec)
    assert len(art.inflated_unsafe) == len(art.unrecoverable)
    for a, b in zip(art.inflated_unsafe.members, art.unrecoverable.members):
        assert set_equal(a, b, tol=1e-8)


def test_safe_artifact_no_safe_region():
    sys, spec = sys_1d()
    bad = ConstraintSpec(
        X0=PolyUnion([interval(-10, 10)]),
        U=spec.U,
        W=spec.W,
        box=spec.box,
    )
    sets = compute_unrecoverable(sys, bad, K=0)
    with pytest.raises(NoSafeRegionError):
        build_safe_artifact(sets, sys, bad)


def test_inflated_complement_against_lp_oracle():
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=3)
    art = build_safe_artifact(sets, sys, spec)
    rng = np.random.default_rng(13)
    pts = rng.uniform(-9.5, 9.5, size=(500, 1))
    for z in pts:
        direct = not art.inflated_unsafe.contains(z, tol=0.0)
        oracle = inflated_complement_oracle(z, art.unrecoverable, sys.E, spec.W)
        near = art.inflated_unsafe.contains(z, tol=1e-5) and not art.inflated_unsafe.contains(z, tol=-1e-5)
        if not near:
            assert direct == oracle


def test_inflated_complement_oracle_2d():
    sys, spec = sys_2d()
    sets = compute_unrecoverable(sys, spec, K=3)
    art = build_safe_artifact(sets, sys, spec)
    rng = np.random.default_rng(29)
    pts = np.column_stack([rng.uniform(0, 120, 300), rng.uniform(-20, 20, 300)])
    checked = 0
    for z in pts:
        near = art.inflated_unsafe.contains(z, tol=1e-4) and not art.inflated_unsafe.contains(z, tol=-1e-4)
        if near:
            continue
        direct = not art.inflated_unsafe.contains(z, tol=0.0)
        assert direct == inflated_complement_oracle(z, art.unrecoverable, sys.E, spec.W)
        checked += 1
    assert checked > 200


def test_classify_1d():
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=2)
    art = build_safe_artifact(sets, sys, spec)
    assert classify([-5.0], art) == "unsafe"
    assert classify([1.0], art) == "unrecoverable"
    assert classify([3.0], art) == "unrecoverable"  # inside the disturbance margin
    assert classify([7.0], art) == "safe"
    with pytest.raises(OutOfDomainError):
        classify([11.0], art)


def test_classify_never_safe_inside_x0():
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=2)
    art = build_safe_artifact(sets, sys, spec)
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = rng.uniform(-10, 0)
        assert classify([x], art) != "safe"


def test_fragment_budget_error_reports_k():
    sys, spec = sys_1d()
    with pytest.raises(FragmentBudgetError) as ei:
        compute_unrecoverable(sys, spec, K=5, member_budget=0)
    assert ei.value.k_reached == 0


def test_artifact_roundtrip(tmp_path):
    sys, spec = sys_1d()
    sets = compute_unrecoverable(sys, spec, K=2)
    art = build_safe_artifact(sets, sys, spec)
    p = tmp_path / "artifact.json"
    save_artifact(art, str(p))
    loaded = load_artifact(str(p))
    assert loaded.k_used == art.k_used
    assert loaded.content_hash == art.content_hash
    assert loaded.content_hash == artifact_hash(sys, spec, 2)
    for m1, m2 in zip(art.safe.members, loaded.safe.members):
        assert np.array_equal(m1.A, m2.A) and np.array_equal(m1.b, m2.b)
    # same inputs -> same hash; different depth -> different hash
    assert artifact_hash(sys, spec, 3) != art.content_hash
