import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsirm_ns.clustering import (
    MIDPOINT_LABEL,
    ClusterSolution,
    DensityGrid,
    adjust_centers,
    assign_items,
    assign_students,
    bic,
    center_density,
    center_labels,
    cluster_count_mode,
    cluster_positions,
    select_centers_bic,
)
from lsirm_ns.config import NsConfig
from lsirm_ns.data import LatentConfig
from lsirm_ns.errors import AdjustmentError, ContractError, SelectionError
from lsirm_ns.ns import Domain2D, NsEnsemble, NsFit, NsState, UnitFrame

UNIT = Domain2D(0.0, 1.0, 0.0, 1.0)


def ensemble_of(states, dom=UNIT):
    fits = [NsFit(s, 0.0, 0.0, k, np.array([len(s.centers)]), {}) for k, s in enumerate(states)]
    return NsEnsemble(fits, dom, 0)


def state(*centers, alpha=5.0, omega=0.1):
    return NsState(np.array(centers, dtype=float), alpha, omega)


def test_labels_skip_midpoint():
    labels = center_labels(30)
    assert labels[:3] == ["A", "B", "C"] and MIDPOINT_LABEL not in labels
    assert labels[11] == "L" and labels[12] == "N"
    assert labels[25] == "AA" and len(set(labels)) == 30


def test_count_mode_examples():
    assert cluster_count_mode([5, 5, 5, 4]) == ({4: 1, 5: 3}, 5)
    assert cluster_count_mode([4, 4, 5, 5])[1] == 4
    with pytest.raises(ContractError):
        cluster_count_mode([])


def test_bic_oracle():
    pts = np.array([[0.1, 0.1], [0.15, 0.12], [0.2, 0.1], [0.8, 0.8], [0.82, 0.85], [0.9, 0.8]])
    a = state((0.15, 0.1), (0.85, 0.8))
    b = state((0.5, 0.5), (0.85, 0.8))
    e = ensemble_of([a, b])
    sel = select_centers_bic(e, pts, UNIT, 2)
    oracle = []
    for s in (a, b):
        ll = UNIT.area
        for c in s.centers:
            mx = 0.5 * (math.erf((1 - c[0]) / (0.1 * math.sqrt(2))) + math.erf(c[0] / (0.1 * math.sqrt(2))))
            my = 0.5 * (math.erf((1 - c[1]) / (0.1 * math.sqrt(2))) + math.erf(c[1] / (0.1 * math.sqrt(2))))
            ll -= 5.0 * mx * my
        for p in pts:
            ll += math.log(sum(5.0 * math.exp(-((p[0] - c[0]) ** 2 + (p[1] - c[1]) ** 2) / 0.02) / (2 * math.pi * 0.01) for c in s.centers))
        oracle.append(-2 * ll + 6 * math.log(6))
    assert oracle[0] < oracle[1]
    assert sel.run_index == 0 and sel.candidates == 2
    assert sel.bic == pytest.approx(oracle[0], abs=1e-9)
    assert bic(sel.log_likelihood, 2, 6) == pytest.approx(oracle[0], abs=1e-9)
    assert bic(0.0, 2, 6, "2M") == pytest.approx(4 * math.log(6))
    assert bic(0.0, 2, 6, "3M") == pytest.approx(6 * math.log(6))


def test_bic_single_candidate_and_missing_count():
    pts = np.array([[0.5, 0.5], [0.4, 0.5]])
    e = ensemble_of([state((0.5, 0.5)), state((0.2, 0.2), (0.8, 0.8))])
    assert select_centers_bic(e, pts, UNIT, 1).run_index == 0
    with pytest.raises(SelectionError):
        select_centers_bic(e, pts, UNIT, 3)


def test_density_of_identical_centers_peaks_there():
    e = ensemble_of([state((0.3, 0.6))] * 10)
    d = center_density(e, grid_size=101)
    iy, ix = np.unravel_index(np.argmax(d.density), d.density.shape)
    assert (d.xs[ix], d.ys[iy]) == pytest.approx((0.3, 0.6))


def test_density_two_clouds_equal_peaks(rng):
    a = rng.normal([0.0, 0.0], 0.3, size=(400, 2))
    b = rng.normal([5.0, 0.0], 0.3, size=(400, 2))
    d = center_density(np.vstack([a, b]), Domain2D(-2, 7, -3, 3), grid_size=181, bandwidth=0.3)
    left = d.density[:, d.xs < 2.5].max()
    right = d.density[:, d.xs > 2.5].max()
    assert abs(left - right) / max(left, right) < 0.1


def test_density_integrates_to_one(rng):
    d = center_density(rng.normal(size=(300, 2)) * 0.5, Domain2D(-6, 6, -6, 6), grid_size=241)
    assert d.integral() == pytest.approx(1.0, abs=0.02)


def test_density_csv_round_trip(tmp_path, rng):
    d = center_density(rng.random((20, 2)), UNIT, grid_size=15)
    back = DensityGrid.from_csv(d.to_csv(tmp_path / "d.csv"))
    np.testing.assert_array_equal(back.density, d.density)
    np.testing.assert_array_equal(back.xs, d.xs)


def test_density_transform_keeps_mass(rng):
    frame = UnitFrame((2.0, -1.0), 3.0)
    d = center_density(rng.normal(0.5, 0.05, size=(200, 2)), UNIT, grid_size=101)
    t = d.transformed(frame)
    assert t.integral() == pytest.approx(d.integral(), rel=1e-9)
    assert t.xs[0] == 2.0 and t.xs[-1] == 5.0


def test_adjust_keeps_peaks_and_drops_empty_corner(rng):
    cloud_a = rng.normal([0.3, 0.3], 0.03, size=(300, 2))
    cloud_b = rng.normal([0.7, 0.7], 0.03, size=(300, 2))
    d = center_density(np.vstack([cloud_a, cloud_b]), UNIT, grid_size=101)
    adj = adjust_centers(state((0.3, 0.3), (0.7, 0.7)), d)
    assert adj.kept == (0, 1) and adj.dropped == ()
    adj = adjust_centers(state((0.3, 0.3), (0.98, 0.02), (0.7, 0.7)), d)
    assert adj.dropped == (1,)
    np.testing.assert_array_equal(adj.centers, [[0.3, 0.3], [0.7, 0.7]])
    assert adjust_centers(state((0.3, 0.3), (0.98, 0.02)), d, tau=0.0).dropped == ()


def test_adjust_refuses_to_drop_everything(rng):
    d = center_density(rng.normal(0.2, 0.01, size=(100, 2)), UNIT, grid_size=51)
    with pytest.raises(AdjustmentError):
        adjust_centers(state((0.9, 0.9)), d)
    with pytest.raises(ContractError):
        adjust_centers(state((0.2, 0.2)), d, tau=1.0)


def test_assign_items_examples():
    c = np.array([[0.0, 0.0], [2.0, 0.0]])
    np.testing.assert_array_equal(assign_items(np.array([[2.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), c), [1, 0, 0])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_assignments_match_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(int(rng.integers(1, 6)), 2))
    pts = rng.normal(size=(12, 2))
    got = assign_items(pts, c)
    for p, k in zip(pts, got):
        d = [math.dist(p, ci) for ci in c]
        assert d[k] == min(d) and k == d.index(min(d))
    labels, mid = assign_students(pts, c)
    names = center_labels(len(c)) + [MIDPOINT_LABEL]
    cand = np.vstack([c, c.mean(axis=0)])
    for p, lab in zip(pts, labels):
        d = [math.dist(p, q) for q in cand]
        assert lab == names[d.index(min(d))]
    np.testing.assert_allclose(mid, c.mean(axis=0))


def test_assign_students_examples():
    c = np.array([[0.0, 0.0], [2.0, 0.0]])
    labels, mid = assign_students(np.array([[1.9, 0.0], [1.0, 0.0]]), c)
    assert labels == ["B", MIDPOINT_LABEL]
    np.testing.assert_array_equal(mid, [1.0, 0.0])


def test_cluster_positions_end_to_end(rng):
    truth = np.array([[0.25, 0.25], [0.75, 0.75]])
    w = np.vstack([rng.normal(t, 0.03, size=(10, 2)) for t in truth])
    z = rng.normal(0.5, 0.2, size=(15, 2)).clip(0.01, 0.99)
    states = [state(*truth + rng.normal(0, 0.01, size=(2, 2))) for _ in range(8)] + [state((0.5, 0.5))]
    e = ensemble_of(states)
    w_bar = LatentConfig(tuple(f"i{k}" for k in range(20)), w)
    z_bar = LatentConfig(tuple(f"r{k}" for k in range(15)), z)
    sol = cluster_positions(w_bar, z_bar, e, NsConfig(grid_size=60))
    assert sol.mode == 2 and sol.histogram == {1: 1, 2: 8}
    assert sorted(set(sol.item_membership)) == ["A", "B"]
    assert sol.item_membership[:10] == (sol.item_membership[0],) * 10
    assert len(sol.student_membership) == 15
    back = ClusterSolution.from_dict(sol.to_dict())
    np.testing.assert_array_equal(back.centers, sol.centers)
    assert back.student_membership == sol.student_membership
