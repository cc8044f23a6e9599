"""Proposal connection, line boxes, and the x/w refinement head."""

import numpy as np
import pytest

from slicedet.errors import AnnotationError, ConfigError, DegenerateRegionError, UsageError
from slicedet.features import FusedFeature
from slicedet.grid import Grid, region_max_pool
from slicedet.proposals import VerticalProposal
from slicedet.textlines import (RegressionConfig, connect_proposals, decode_xw, encode_xw,
                                init_regression_params, line_bbox, line_regression_loss,
                                pooled_line_vector, project_to_cells, proposals_connect,
                                regression_forward)

HEIGHTS = (11, 16, 23, 33, 47, 67, 96, 137)


def _prop(col, y_center, height, score=0.9):
    return VerticalProposal(col=col, y_center=float(y_center), height=float(height),
                            score=float(score))


# ---------------------------------------------------------------------------
# connection rules


def _union_find_lines(props, max_gap, min_overlap):
    """All-pairs union-find; the reference grouping for connect_proposals."""
    parent = list(range(len(props)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(props)):
        for j in range(i + 1, len(props)):
            if proposals_connect(props[i], props[j], max_gap, min_overlap):
                parent[find(i)] = find(j)
    comps = {}
    for i in range(len(props)):
        comps.setdefault(find(i), set()).add(i)
    return {frozenset(c) for c in comps.values()}


def test_connect_fixture_two_lines():
    # three proposals in a row, one vertically offset stray
    props = [_prop(0, 50, 30), _prop(1, 50, 30), _prop(2, 51, 30), _prop(3, 200, 30)]
    lines = connect_proposals(props, max_gap_px=50.0, min_v_overlap=0.7)
    assert sorted(len(l.members) for l in lines) == [1, 3]
    big = max(lines, key=lambda l: len(l.members))
    assert [p.col for p in big.members] == [0, 1, 2]


def test_connect_gap_rule_uses_centers():
    # cols 0 and 3: centers 8 and 56, distance 48 <= 50 connects
    assert len(connect_proposals([_prop(0, 50, 30), _prop(3, 50, 30)])) == 1
    # cols 0 and 4: distance 64 > 50 stays apart
    assert len(connect_proposals([_prop(0, 50, 30), _prop(4, 50, 30)])) == 2


def test_connect_overlap_rule():
    a, b = _prop(0, 50, 30), _prop(1, 70, 30)
    # v-IoU = 10/50 = 0.2
    assert not proposals_connect(a, b)
    assert proposals_connect(a, _prop(1, 54, 30))  # v-IoU = 26/34 ~ 0.76


def test_connect_matches_union_find():
    rng = np.random.default_rng(71)
    for trial in range(1000):
        n = int(rng.integers(0, 28))
        props = [_prop(int(rng.integers(0, 24)), float(rng.uniform(10, 250)),
                       float(HEIGHTS[int(rng.integers(0, len(HEIGHTS)))]),
                       float(rng.uniform(0.5, 1.0)))
                 for _ in range(n)]
        max_gap = float(rng.choice([20.0, 50.0, 80.0]))
        min_ov = float(rng.choice([0.5, 0.7, 0.9]))
        lines = connect_proposals(props, max_gap, min_ov)
        index = {id(p): i for i, p in enumerate(props)}
        got = {frozenset(index[id(p)] for p in line.members) for line in lines}
        assert got == _union_find_lines(props, max_gap, min_ov)
        assert sum(len(l.members) for l in lines) == n


def test_line_members_sorted_and_score_mean():
    props = [_prop(2, 50, 30, 0.8), _prop(0, 50, 30, 0.6), _prop(1, 50, 30, 0.7)]
    (line,) = connect_proposals(props)
    assert [p.col for p in line.members] == [0, 1, 2]
    assert line.score == pytest.approx(0.7)


def test_line_bbox():
    props = [_prop(1, 50, 30), _prop(2, 60, 40)]
    assert line_bbox(props) == (16.0, 35.0, 48.0, 80.0)
    with pytest.raises(UsageError):
        line_bbox([])


# ---------------------------------------------------------------------------
# x/w encoding


def test_encode_decode_fixtures():
    prop = (0.0, 0.0, 32.0, 20.0)
    assert encode_xw(prop, prop) == (0.0, 0.0)
    t = encode_xw(prop, (8.0, 0.0, 40.0, 20.0))
    assert t == pytest.approx((0.25, 0.0))
    t = encode_xw(prop, (-16.0, 0.0, 48.0, 20.0))
    assert t == pytest.approx((0.0, np.log(2.0)))


def test_decode_inverts_encode():
    rng = np.random.default_rng(72)
    for trial in range(1000):
        x0 = float(rng.uniform(0, 300))
        pw = float(rng.uniform(4, 200))
        prop = (x0, float(rng.uniform(0, 50)), x0 + pw, float(rng.uniform(60, 120)))
        gx0 = float(rng.uniform(0, 300))
        gt = (gx0, 0.0, gx0 + float(rng.uniform(4, 200)), 10.0)
        back = decode_xw(prop, encode_xw(prop, gt))
        assert back[0] == pytest.approx(gt[0], abs=1e-9)
        assert back[2] == pytest.approx(gt[2], abs=1e-9)
        # vertical extent stays the proposal's
        assert (back[1], back[3]) == (prop[1], prop[3])


def test_encode_decode_validation():
    with pytest.raises(AnnotationError):
        encode_xw((0, 0, 0, 10), (0, 0, 10, 10))
    with pytest.raises(AnnotationError):
        encode_xw((0, 0, 10, 10), (5, 0, 5, 10))
    with pytest.raises(AnnotationError):
        decode_xw((3, 0, 3, 10), (0.0, 0.0))


# ---------------------------------------------------------------------------
# refinement head


def test_project_to_cells():
    assert project_to_cells((0.0, 0.0, 32.0, 32.0), (4, 4)) == (0, 0, 2, 2)
    assert project_to_cells((10.0, 10.0, 20.0, 20.0), (4, 4)) == (0, 0, 2, 2)
    # clipped to the map
    assert project_to_cells((-5.0, 40.0, 200.0, 90.0), (4, 4)) == (0, 2, 4, 4)
    with pytest.raises(DegenerateRegionError):
        project_to_cells((100.0, 0.0, 120.0, 32.0), (4, 4))
    with pytest.raises(DegenerateRegionError):
        project_to_cells((10.0, 10.0, 10.0, 20.0), (4, 4))


def test_pooled_vector_matches_region_pool():
    rng = np.random.default_rng(73)
    cfg = RegressionConfig(pool_bins=2, hidden=4)
    fmap = Grid(rng.normal(size=(1, 3, 6, 8)))
    fused = FusedFeature(grid=fmap)
    box = (5.0, 5.0, 90.0, 60.0)
    vec = pooled_line_vector(fused, box, cfg)
    assert vec.shape == (1, 3 * 4)
    cells = project_to_cells(box, (6, 8))
    want = region_max_pool(fmap, cells, bins=2).data.reshape(1, -1)
    assert np.array_equal(vec.data, want)


def test_regression_forward_output_shape():
    rng = np.random.default_rng(74)
    cfg = RegressionConfig(pool_bins=4, hidden=6)
    params = init_regression_params(5, cfg, rng)
    fused = FusedFeature(grid=Grid(rng.normal(size=(1, 5, 8, 12))))
    out = regression_forward(fused, (10.0, 10.0, 150.0, 100.0), params, cfg)
    assert out.shape == (2,)


def test_regression_params_learnability_split():
    params = init_regression_params(4, RegressionConfig(pool_bins=2, hidden=3),
                                    np.random.default_rng(0))
    assert sorted(params) == ["regress/fc1.b", "regress/fc1.w", "regress/fc2.b",
                              "regress/fc2.w", "regress/norm.mu", "regress/norm.nu"]
    assert not params["regress/norm.mu"].requires_grad
    assert not params["regress/norm.nu"].requires_grad
    assert np.array_equal(params["regress/norm.nu"].data, np.ones((1, 16)))
    for name in ("regress/fc1.w", "regress/fc1.b", "regress/fc2.w", "regress/fc2.b"):
        assert params[name].requires_grad
    assert params["regress/fc2.w"].shape == (3, 2)


def test_standardization_changes_head_output():
    rng = np.random.default_rng(75)
    cfg = RegressionConfig(pool_bins=2, hidden=4)
    params = init_regression_params(3, cfg, rng)
    fused = FusedFeature(grid=Grid(rng.normal(size=(1, 3, 6, 6))))
    box = (0.0, 0.0, 90.0, 90.0)
    base = regression_forward(fused, box, params, cfg).data.copy()
    params["regress/norm.mu"].data[...] = rng.normal(size=(1, 12))
    shifted = regression_forward(fused, box, params, cfg).data
    assert not np.allclose(base, shifted)


def test_line_regression_loss_paths():
    assert line_regression_loss((0.5, 0.0), (0.5, 0.0)) == 0.0
    # |d|=2 on one component: smooth-L1 = 1.5
    assert line_regression_loss((2.0, 0.0), (0.0, 0.0)) == pytest.approx(1.5)
    g = line_regression_loss(Grid(np.array([0.2, 0.4])), (0.0, 0.0))
    assert g.item() == pytest.approx(0.5 * 0.04 + 0.5 * 0.16)
    with pytest.raises(ConfigError):
        line_regression_loss(Grid(np.zeros(3)), (0.0, 0.0))
