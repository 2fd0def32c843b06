import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from glenoid._thinning import EULER_BLOCK, thin
from glenoid.errors import GeometryError
from glenoid.phantom import generate, random_specs
from glenoid.points import PointSet3
from glenoid.rim import (RimHeatmap, binarize_heatmap, catmull_rom, chamfer_distance, gaussian_heatmap,
                         ground_truth_chain, heatmap_to_rim, resample_polyline, skeletonize, spline_tube)
from glenoid.volume import VoxelMask

CUBE26 = np.ones((3, 3, 3))


def _grid(dims, spacing=1.0):
    return VoxelMask(np.zeros(dims, np.uint8), (spacing,) * 3)


def test_resample_segment():
    out = resample_polyline(PointSet3([[0, 0, 0], [10, 0, 0]], ordered=True), 30)
    assert np.allclose(out.points[:, 0], 10 * np.arange(30) / 29, atol=1e-12)
    assert np.allclose(out.points[:, 1:], 0)
    assert out.ordered


def test_resample_two_points_are_endpoints():
    pts = np.array([[0, 0, 0], [1, 2, 0], [3, 3, 3], [5, 0, 1]], float)
    out = resample_polyline(pts, 2)
    assert np.array_equal(out.points, pts[[0, -1]])


def test_resample_quarter_arc_equal_gaps():
    t = np.linspace(0, np.pi / 2, 4001)
    arc = np.column_stack([10 * np.cos(t), 10 * np.sin(t), np.zeros_like(t)])
    out = resample_polyline(arc, 5).points
    # oracle: cumulative arc length of the dense polyline, looked up per output point
    seg = np.linalg.norm(np.diff(arc, axis=0), axis=1)
    cum = np.concatenate([[0], np.cumsum(seg)])
    pos = []
    for p in out:
        k = np.argmin(np.linalg.norm(arc - p, axis=1))
        k = min(k, len(arc) - 2)
        if np.linalg.norm(p - arc[k]) > 0 and k > 0 and np.dot(p - arc[k], arc[k + 1] - arc[k]) < 0:
            k -= 1
        pos.append(cum[k] + np.linalg.norm(p - arc[k]))
    gaps = np.diff(pos)
    assert np.max(np.abs(gaps - gaps.mean())) < 1e-6


def test_resample_zero_length():
    with pytest.raises(GeometryError, match="zero-length"):
        resample_polyline([[1, 1, 1], [1, 1, 1], [1, 1, 1]], 30)


def test_catmull_rom_interpolates_landmarks_and_step():
    pts = np.array([[0, 0, 0], [5, 2, 0], [9, 7, 1], [12, 12, 4]], float)
    curve = catmull_rom(pts, 0.1)
    for p in pts:
        assert np.min(np.linalg.norm(curve - p, axis=1)) < 1e-12
    assert np.max(np.linalg.norm(np.diff(curve, axis=0), axis=1)) <= 0.1 + 1e-12


def test_tube_cross_section_matches_cylinder():
    grid = _grid((40, 30, 30), 0.5)
    line = [[2, 7.5, 7.5], [10, 7.5, 7.5], [18, 7.5, 7.5]]
    tube = spline_tube(line, 1.0, grid)
    expected = np.pi * 1.0 ** 2 / (0.5 * 0.5)
    for i in range(10, 30):
        count = tube.data[i].sum()
        assert abs(count - expected) <= 0.2 * expected


def test_tube_zero_length_and_undersampled():
    with pytest.raises(GeometryError, match="zero-length"):
        spline_tube([[1, 1, 1], [1, 1, 1]], 1.0, _grid((5, 5, 5)))
    with pytest.raises(GeometryError, match="undersampled"):
        spline_tube([[0, 0, 0], [3, 0, 0]], 1.0, _grid((5, 5, 5), 2.0))


@pytest.fixture(scope="module")
def phantom_chains():
    out = []
    for spec in random_specs(5, seed=11):
        case = generate(spec)
        out.append((case, ground_truth_chain(case.rim_truth, case.mask)))
    return out


def test_tube_contains_landmark_voxels(phantom_chains):
    for case, gt in phantom_chains:
        idx = np.rint(gt.resampled.points / 0.5).astype(int)
        assert gt.tube.data[tuple(idx.T)].all()


def test_tube_skeleton_follows_spline(phantom_chains):
    diag = np.sqrt(3) * 0.5
    for case, gt in phantom_chains:
        dense = catmull_rom(gt.resampled, 0.05)
        assert chamfer_distance(gt.skeleton, dense) < diag


def test_thin_line_unchanged():
    v = np.zeros((14, 14, 14), bool)
    v[1:12, 3, 5] = True
    for i in range(1, 12):
        v[i, i, 10] = True
    assert np.array_equal(thin(v), v)


@pytest.mark.parametrize("width", [2, 3, 4])
def test_thin_bar_gives_centre_line(width):
    n = 24
    v = np.zeros((width + 4, width + 4, n + 6), bool)
    v[2:2 + width, 2:2 + width, 3:3 + n] = True
    s = thin(v)
    idx = np.argwhere(s)
    zs = idx[:, 2]
    assert abs(len(set(zs)) - n) <= 2 + width
    assert len(idx) == len(set(zs))
    centre = 2 + (width - 1) / 2
    assert np.all(np.abs(idx[:, :2] - centre) <= 0.5 + 1e-9)


def test_thin_3x3_bar_length():
    v = np.zeros((7, 7, 40), bool)
    v[2:5, 2:5, 5:35] = True
    idx = np.argwhere(thin(v))
    assert abs(len(idx) - 30) <= 2
    assert np.all(idx[:, 0] == 3) and np.all(idx[:, 1] == 3)


def test_thin_empty_and_single_voxel():
    v = np.zeros((4, 4, 4), bool)
    assert not thin(v).any()
    v[1, 2, 3] = True
    assert np.array_equal(thin(v), v)


def test_euler_table_reference_values():
    # single voxel: 1/8 of a closed cube's characteristic 1 at each of its 8 corners
    assert EULER_BLOCK[0] == 0
    assert all(EULER_BLOCK[1 << b] == 1 for b in range(8))
    assert EULER_BLOCK[255] == 0


def test_euler_table_sums_to_characteristic():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.random((6, 6, 6)) < 0.35
        p = np.pad(v, 1).astype(int)
        total = 0
        for x in range(p.shape[0] - 1):
            for y in range(p.shape[1] - 1):
                for z in range(p.shape[2] - 1):
                    blk = p[x:x + 2, y:y + 2, z:z + 2]
                    cfg = sum(int(blk[a, b, c]) << (a + 2 * b + 4 * c)
                              for a in range(2) for b in range(2) for c in range(2))
                    total += EULER_BLOCK[cfg]
        assert total % 8 == 0
        # oracle: V - E + F - C of the closed-cube complex, counted directly
        verts, edges, faces = set(), set(), set()
        for x, y, z in np.argwhere(v):
            for a in range(2):
                for b in range(2):
                    for c in range(2):
                        verts.add((x + a, y + b, z + c))
            for a in range(2):
                for b in range(2):
                    edges.add(("x", x, y + a, z + b))
                    edges.add(("y", x + a, y, z + b))
                    edges.add(("z", x + a, y + b, z))
            for a in range(2):
                faces.add(("x", x + a, y, z))
                faces.add(("y", x, y + a, z))
                faces.add(("z", x, y, z + a))
        chi = len(verts) - len(edges) + len(faces) - int(v.sum())
        assert total // 8 == chi


@settings(max_examples=40, deadline=None)
@given(arrays(np.bool_, (7, 7, 7), elements=st.booleans()))
def test_thin_subset_and_components(v):
    s = thin(v)
    assert not (s & ~v).any()
    assert ndimage.label(s, CUBE26)[1] == ndimage.label(v, CUBE26)[1]


def test_skeletonize_returns_mm_points():
    v = np.zeros((5, 5, 12), np.uint8)
    v[1:4, 1:4, 2:10] = 1
    pts = skeletonize(VoxelMask(v, (0.5, 0.5, 2.0))).points
    assert np.allclose(pts[:, 0], 1.0) and np.allclose(pts[:, 1], 1.0)
    assert np.all(pts[:, 2] % 2.0 == 0)


def test_heatmap_single_point():
    grid = _grid((9, 9, 9), 1.0)
    h = gaussian_heatmap(PointSet3([[4, 4, 4]]), 1.0, grid)
    d = h.grid.data
    assert d[4, 4, 4] == pytest.approx(1.0)
    for off in [(1, 0, 0), (0, -1, 0), (0, 0, 1)]:
        assert d[4 + off[0], 4 + off[1], 4 + off[2]] == pytest.approx(np.exp(-0.5), abs=1e-6)


def test_heatmap_empty_skeleton():
    h = gaussian_heatmap(PointSet3(np.zeros((0, 3))), 1.0, _grid((5, 5, 5)))
    assert not h.grid.data.any()


def test_heatmap_two_points_pointwise_max():
    grid = _grid((30, 10, 10), 1.0)
    a, b = [5, 5, 5], [15, 5, 5]
    both = gaussian_heatmap(PointSet3([a, b]), 1.0, grid).grid.data
    ha = gaussian_heatmap(PointSet3([a]), 1.0, grid).grid.data
    hb = gaussian_heatmap(PointSet3([b]), 1.0, grid).grid.data
    assert np.max(np.abs(both - np.maximum(ha, hb))) < 1e-6


def test_heatmap_matches_direct_evaluation():
    rng = np.random.default_rng(3)
    grid = _grid((12, 10, 8), 0.7)
    pts = rng.uniform(1, 5, size=(6, 3))
    h = gaussian_heatmap(PointSet3(pts), 1.0, grid).grid.data
    centers = grid.voxel_centers_mm().reshape(grid.dims + (3,))
    d2 = ((centers[..., None, :] - pts) ** 2).sum(-1).min(-1)
    direct = np.where(np.sqrt(d2) <= 6.0, np.exp(-0.5 * d2), 0.0)
    assert np.max(np.abs(h - direct)) < 1e-6


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(0, 8)), arrays(np.float64, (2, 3), elements=st.floats(0, 8)))
def test_heatmap_monotone_in_points(base, extra):
    grid = _grid((9, 9, 9), 1.0)
    h0 = gaussian_heatmap(PointSet3(base), 1.0, grid).grid.data
    h1 = gaussian_heatmap(PointSet3(np.vstack([base, extra])), 1.0, grid).grid.data
    assert np.all(h1 >= h0)
    assert h1.max() <= 1.0 and h1.min() >= 0.0


def test_binarize_zero_and_level_set_radius():
    zero = VoxelMask(np.zeros((5, 5, 5), np.float32), (1, 1, 1))
    assert binarize_heatmap(zero, 0.3).count() == 0
    grid = _grid((21, 21, 21), 1.0)
    h = gaussian_heatmap(PointSet3([[10, 10, 10]]), 1.0, grid)
    fg = binarize_heatmap(h, 0.3).foreground_mm()
    radius = np.sqrt(-2 * np.log(0.3))
    assert radius == pytest.approx(1.552, abs=1e-3)
    # oracle: enumerate voxel centres inside the closed-form level set
    centers = grid.voxel_centers_mm().reshape(-1, 3)
    inside = np.linalg.norm(centers - 10.0, axis=1) <= radius
    assert len(fg) == inside.sum()
    assert np.max(np.linalg.norm(fg - 10.0, axis=1)) <= radius


def test_heatmap_rejects_binary_grid():
    with pytest.raises(ValueError):
        RimHeatmap(_grid((3, 3, 3)), 1.0)


def test_chamfer_closed_forms():
    a = PointSet3([[0, 0, 0]])
    b = PointSet3([[3, 4, 0]])
    assert chamfer_distance(a, b) == pytest.approx(10.0)
    pts = np.random.default_rng(0).normal(size=(20, 3))
    assert chamfer_distance(pts, pts) == 0.0
    with pytest.raises(ValueError, match="empty"):
        chamfer_distance(np.zeros((0, 3)), pts)


def _chamfer_loops(a, b):
    def one_way(p, q):
        total = 0.0
        for x in p:
            best = float("inf")
            for y in q:
                d = ((x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2 + (x[2] - y[2]) ** 2) ** 0.5
                best = min(best, d)
            total += best
        return total / len(p)
    return one_way(a, b) + one_way(b, a)


def test_chamfer_matches_double_loop():
    rng = np.random.default_rng(42)
    for _ in range(100):
        a = rng.normal(size=(rng.integers(1, 40), 3)) * 5
        b = rng.normal(size=(rng.integers(1, 40), 3)) * 5
        assert abs(chamfer_distance(a, b) - _chamfer_loops(a, b)) < 1e-9


def test_chamfer_kdtree_path_matches_double_loop():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(300, 3))
    b = rng.normal(size=(280, 3))
    assert abs(chamfer_distance(a, b) - _chamfer_loops(a, b)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-50, 50)), arrays(np.float64, (7, 3), elements=st.floats(-50, 50)))
def test_chamfer_symmetric(a, b):
    assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), abs=1e-12)


def test_chain_roundtrip(phantom_chains):
    diag = np.sqrt(3) * 0.5
    for case, gt in phantom_chains:
        assert gt.heatmap.grid.data.max() == pytest.approx(1.0)
        recovered = heatmap_to_rim(gt.heatmap, 0.3)
        assert chamfer_distance(gt.skeleton, recovered) < diag
