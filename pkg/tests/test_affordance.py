import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import chebyshev_clearance, exhaustive_pose
from stowsim.affordance import (MAX_COST, AffordanceKind, build_costmap, costmap_from_obstacles,
                                fill_above, free_window_exists, generate_affordance, kernel_cells,
                                quantize_cost, render_overlay)
from stowsim.perception import MultiMask


def _mask(inst):
    inst = np.asarray(inst, dtype=np.int32)
    s = inst.shape
    return MultiMask(np.ones(s, bool), inst, np.zeros(s, bool), np.full(s, 50.0), 10, 400)


def _cm(obst):
    return costmap_from_obstacles(np.asarray(obst, bool), 10, AffordanceKind.ITEM_INSERT)


def test_empty_bin_min_cost_at_centre():
    cm = build_costmap(_mask(np.zeros((21, 31))))
    assert cm.cost[10, 15] == cm.cost.min()
    square = build_costmap(_mask(np.zeros((21, 21))))
    assert np.argwhere(square.cost == square.cost.min()).tolist() == [[10, 10]]


def test_fully_blocked_costs_are_max():
    cm = build_costmap(_mask(np.ones((8, 8))))
    assert (cm.cost == MAX_COST).all()


def test_single_obstacle_column_symmetric():
    obst = np.zeros((9, 21), bool)
    obst[:, 10] = True
    cm = _cm(obst)
    assert np.array_equal(cm.cost, cm.cost[:, ::-1])


def test_item_costmap_fills_above_items():
    inst = np.zeros((6, 6))
    inst[4:, 2] = 1
    cm = build_costmap(_mask(inst), AffordanceKind.ITEM_INSERT)
    assert cm.blocked[:, 2].all() and "fill_above" in cm.provenance
    plank = build_costmap(_mask(inst), AffordanceKind.PLANK_INSERT)
    assert not plank.blocked[0, 2]


def test_fill_above():
    items = np.zeros((4, 3), bool)
    items[2, 1] = True
    assert fill_above(items)[:, 1].tolist() == [True, True, True, False]


small = st.tuples(st.integers(1, 12), st.integers(1, 12)).flatmap(
    lambda s: hnp.arrays(bool, s, elements=st.booleans()))


@given(small)
def test_costmap_matches_brute_distance(obst):
    cm = _cm(obst)
    d = chebyshev_clearance(obst)
    assert np.array_equal(cm.clearance, d)
    expected = np.where(obst, 1.0, quantize_cost(1.0 / (1.0 + d)))
    assert np.array_equal(cm.cost, expected)
    assert np.isfinite(cm.cost).all() and (cm.cost >= 0).all()


def test_empty_bin_centred_pose_is_optimal():
    # in a wide bin the clearance plateaus, so the centred pose ties with others
    cm = build_costmap(_mask(np.zeros((30, 40))))
    for kernel in [(50, 50), (120, 80), (10, 290)]:
        aff = generate_affordance(cm, kernel, rotations=(0,))
        kw, kh = kernel_cells(kernel[0], 10), kernel_cells(kernel[1], 10)
        c0, r0 = (40 - kw) // 2, (30 - kh) // 2
        assert cm.cost[r0:r0 + kh, c0:c0 + kw].sum() == aff.cost
        assert abs(aff.y - 150) <= 5


def test_square_empty_bin_pose_is_centred():
    cm = build_costmap(_mask(np.zeros((30, 30))))
    aff = generate_affordance(cm, (100, 100), rotations=(0, 90))
    assert (aff.x, aff.y) == (150, 150)


def test_kernel_wider_than_bin_is_none():
    cm = build_costmap(_mask(np.zeros((30, 40))))
    assert generate_affordance(cm, (410, 10), rotations=(0,)) is None


def test_left_half_blocked_quarter_kernel():
    obst = np.zeros((20, 40), bool)
    obst[:, :20] = True
    cm = _cm(obst)
    aff = generate_affordance(cm, (100, 100), rotations=(0, 90))
    best = exhaustive_pose(cm.cost, {0: (10, 10), 90: (10, 10)})
    assert aff.x0 >= 200
    assert (aff.cost, aff.col, aff.row, aff.rotation) == best


def test_blocked_everywhere_returns_none():
    assert generate_affordance(_cm(np.ones((5, 5), bool)), (10, 10)) is None


def test_rotation_only_used_when_needed():
    obst = np.zeros((4, 20), bool)
    cm = _cm(obst)
    aff = generate_affordance(cm, (10, 100), rotations=(0, 90))
    assert aff.rotation == 90 and aff.kernel_w == 100 and aff.kernel_h == 10


@given(small, st.integers(1, 60), st.integers(1, 60), st.sampled_from([(0,), (90,), (0, 90)]))
def test_generate_affordance_matches_exhaustive(obst, w_mm, h_mm, rots):
    cm = _cm(obst)
    kw, kh = kernel_cells(w_mm, 10), kernel_cells(h_mm, 10)
    ks = {r: ((kw, kh) if r == 0 else (kh, kw)) for r in rots}
    best = exhaustive_pose(cm.cost, ks)
    aff = generate_affordance(cm, (w_mm, h_mm), rotations=rots)
    if best is None:
        assert aff is None
        return
    assert (aff.cost, aff.col, aff.row, aff.rotation) == best
    kw_, kh_ = ks[aff.rotation]
    foot = cm.clearance[aff.row:aff.row + kh_, aff.col:aff.col + kw_]
    assert aff.margin == max(0, int(foot.min()) - 1) * 10 and aff.margin >= 0
    assert 0 <= aff.x0 and aff.x1 <= cm.shape[1] * 10


@given(small, st.data(), st.integers(1, 40), st.integers(1, 40))
def test_adding_obstacle_never_lowers_optimal_cost(obst, data, w_mm, h_mm):
    r = data.draw(st.integers(0, obst.shape[0] - 1))
    c = data.draw(st.integers(0, obst.shape[1] - 1))
    a = generate_affordance(_cm(obst), (w_mm, h_mm))
    more = obst.copy()
    more[r, c] = True
    b = generate_affordance(_cm(more), (w_mm, h_mm))
    if a is None:
        assert b is None
    elif b is not None:
        assert b.cost >= a.cost


@given(small, st.integers(1, 12), st.integers(1, 12))
def test_free_window_exists_matches_exhaustive(obst, kw, kh):
    ref = exhaustive_pose(np.where(obst, 1.0, 0.0), {0: (kw, kh)}) is not None
    assert free_window_exists(obst, kw, kh) == ref


def test_render_overlay_marks_footprint():
    cm = _cm(np.zeros((4, 6), bool))
    aff = generate_affordance(cm, (20, 20), rotations=(0,))
    text = render_overlay(cm, aff)
    assert text.count("@") == 4 and len(text.splitlines()) == 4


def test_crop_keeps_absolute_columns():
    obst = np.zeros((5, 20), bool)
    cm = _cm(obst).crop_cols(14, 20)
    aff = generate_affordance(cm, (10, 50), rotations=(0,))
    assert aff.col >= 14 and aff.x1 <= 200
