import numpy as np
import pytest
from scipy.spatial import Delaunay

from terrascout.errors import EmptyPatch, EmptySet
from terrascout.patches import (BARY_TOL, PAD_RADIUS, RASTER_RES,
                                ChunkPointIndex, PatchKey, PatchSpacePoints,
                                gather_and_normalize, grid_cell_centers,
                                interpolate_patch, nearest_neighbor_query,
                                patch_grid_for, reconstruct_patch)

# ---------------- independent oracles ----------------


def oracle_nn(xy, queries):
    """Linear scan; first (lowest) index wins ties."""
    d2 = ((queries[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def _signed_area(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def oracle_bary(tri_pts, p):
    """Barycentric coordinates via signed sub-triangle areas."""
    a, b, c = tri_pts
    total = _signed_area(a, b, c)
    if total == 0:
        return None
    w0 = _signed_area(p, b, c) / total
    w1 = _signed_area(a, p, c) / total
    w2 = _signed_area(a, b, p) / total
    return w0, w1, w2


def oracle_face_map(pts_xy, res):
    """Exhaustive per-cell point-in-triangle; lowest triangle id wins.

    Runs over the same Delaunay triangulation (corner padding included),
    then blanks cells covered by padding triangles, exactly like the
    declared contract.
    """
    corners = np.array([[-1., -1.], [1., -1.], [-1., 1.], [1., 1.]])
    all_xy = np.vstack([pts_xy, corners])
    tri = Delaunay(all_xy)
    simplices = tri.simplices
    centers = grid_cell_centers(res)
    face = np.full(res * res, -1, dtype=np.int64)
    lo, hi = -BARY_TOL, 1.0 + BARY_TOL
    for j, p in enumerate(centers):
        for t, simplex in enumerate(simplices):
            w = oracle_bary(all_xy[simplex], p)
            if w is None:
                continue
            if all(lo <= wi <= hi for wi in w):
                face[j] = t
                break
    pad = (simplices >= len(pts_xy)).any(axis=1)
    cov = face >= 0
    face[cov & pad[np.where(cov, face, 0)]] = -1
    return face, simplices, all_xy


def oracle_linear_heights(pts_xy, h, face, simplices, all_xy, res):
    """Solve the barycentric system per covered cell (float64)."""
    centers = grid_cell_centers(res)
    out = np.full(res * res, np.nan)
    h_all = np.concatenate([h, [np.nan] * 4])
    for j in np.nonzero(face >= 0)[0]:
        simplex = simplices[face[j]]
        a, b, c = all_xy[simplex]
        m = np.array([[a[0], b[0], c[0]], [a[1], b[1], c[1]], [1, 1, 1]])
        w = np.linalg.solve(m, np.array([centers[j][0], centers[j][1], 1.0]))
        out[j] = w @ h_all[simplex]
    return out


def random_pts(rng, n, with_rgb=False):
    xy = rng.uniform(-1, 1, (n, 2))
    h = rng.uniform(-0.6, 0.6, n)
    rgb = rng.random((n, 3)).astype(np.float32) if with_rgb else None
    return PatchSpacePoints(xy=xy, h=h, rgb=rgb)


# ---------------- patch grid ----------------


class TestPatchGrid:
    def test_single_aligned_patch(self):
        grid = patch_grid_for((0, 0, 0), (640, 640, 10))
        assert (grid.ni, grid.nj) == (1, 1)
        assert grid.key(0, 0).center == (320.0, 320.0)

    def test_ceiling(self):
        grid = patch_grid_for((0, 0, 0), (641, 640, 10))
        assert (grid.ni, grid.nj) == (2, 1)

    def test_covers_unaligned_bbox(self):
        grid = patch_grid_for((630, -10, 0), (650, 30, 5))
        xs = [grid.key(i, 0).center[0] for i in range(grid.ni)]
        assert min(xs) - 320 <= 630
        assert max(xs) + 320 >= 650

    def test_centers_on_grid(self):
        grid = patch_grid_for((100, 900, 0), (3000, 4000, 10))
        for key in grid.keys():
            assert (key.center[0] - grid.origin[0]) % 640 == 320
            assert (key.center[1] - grid.origin[1]) % 640 == 320

    def test_degenerate_bbox(self):
        with pytest.raises(ValueError):
            patch_grid_for((0, 0, 0), (0, 640, 1))


# ---------------- gather and normalize ----------------


class TestGatherNormalize:
    def make_index(self, xyz, rgb=None):
        index = ChunkPointIndex()
        index.add_points(np.asarray(xyz, float), rgb)
        return index

    def test_center_point_normalizes_to_origin(self):
        key = PatchKey(0, 0, (320.0, 320.0))
        index = self.make_index([[320.0, 320.0, 55.0]])
        pts = gather_and_normalize(key, index)
        assert np.allclose(pts.xy, [[0, 0]])
        assert pts.h[0] == 0.0
        assert pts.c_z == 55.0

    def test_padded_corner_maps_to_one(self):
        key = PatchKey(0, 0, (320.0, 320.0))
        index = self.make_index([[320.0, 320.0, 5.0],
                                 [320.0 + 480, 320.0 + 480, 5.0]])
        pts = gather_and_normalize(key, index)
        assert np.allclose(sorted(pts.xy[:, 0]), [0, 1])

    def test_point_past_padding_excluded(self):
        key = PatchKey(0, 0, (320.0, 320.0))
        index = self.make_index([[320.0, 320.0, 5.0],
                                 [320.0 + 481, 320.0, 7.0]])
        pts = gather_and_normalize(key, index)
        assert len(pts.xy) == 1

    def test_empty_patch(self):
        key = PatchKey(0, 0, (320.0, 320.0))
        index = self.make_index([[5000.0, 5000.0, 1.0]])
        with pytest.raises(EmptyPatch):
            gather_and_normalize(key, index)


# ---------------- nearest neighbor ----------------


class TestNearestNeighbor:
    def test_exact_point(self):
        pts = PatchSpacePoints(xy=np.array([[0.1, 0.2], [0.5, -0.5]]),
                               h=np.zeros(2), rgb=None)
        assert nearest_neighbor_query(pts, (0.5, -0.5)) == 1

    def test_tie_goes_to_lower_index(self):
        pts = PatchSpacePoints(xy=np.array([[1.0, 0.0], [-1.0, 0.0]]),
                               h=np.zeros(2), rgb=None)
        assert nearest_neighbor_query(pts, (0.0, 0.0)) == 0

    def test_empty_set(self):
        pts = PatchSpacePoints(xy=np.empty((0, 2)), h=np.empty(0), rgb=None)
        with pytest.raises(EmptySet):
            nearest_neighbor_query(pts, (0, 0))

    def test_matches_linear_scan(self, rng):
        xy = rng.uniform(-1, 1, (1000, 2))
        queries = rng.uniform(-1, 1, (1000, 2))
        pts = PatchSpacePoints(xy=xy, h=np.zeros(1000), rgb=None)
        expect = oracle_nn(xy, queries)
        got = [nearest_neighbor_query(pts, q) for q in queries]
        assert np.array_equal(got, expect)


# ---------------- interpolation (Algorithm 1 behavior) ----------------


class TestInterpolatePatch:
    def test_single_point_constant(self):
        pts = PatchSpacePoints(xy=np.array([[0.3, -0.2]]),
                               h=np.array([0.17]), rgb=None)
        raw = interpolate_patch(pts)
        assert np.all(raw.hm_nn == np.float32(0.17))
        assert np.all(raw.hm_lin == np.float32(0.17))
        assert np.all(raw.face_map.cells == -1)

    def test_three_point_centroid_value(self):
        xy = np.array([[-0.5, -0.5], [0.5, -0.5], [0.0, 0.5]])
        h = np.array([0.0, 0.0, 1.0])
        pts = PatchSpacePoints(xy=xy, h=h, rgb=None)
        raw = interpolate_patch(pts)
        centroid = xy.mean(axis=0)
        res = RASTER_RES
        gx = int(round((centroid[0] + 1) * res / 2 - 0.5))
        gy = int(round((centroid[1] + 1) * res / 2 - 0.5))
        cell_xy = grid_cell_centers(res)[gy * res + gx]
        w = oracle_bary(xy, cell_xy)
        assert abs(raw.hm_lin[gy, gx] - (w @ h)) < 1e-6
        assert abs(raw.hm_lin[gy, gx] - 1 / 3) < 0.03  # near-centroid cell

    @pytest.mark.parametrize("trial", range(8))
    def test_matches_exhaustive_oracle(self, trial):
        rng = np.random.default_rng(100 + trial)
        pts = random_pts(rng, int(rng.integers(3, 200)))
        raw = interpolate_patch(pts)
        face, simplices, all_xy = oracle_face_map(pts.xy, RASTER_RES)
        assert np.array_equal(raw.face_map.cells.ravel(), face)
        want = oracle_linear_heights(pts.xy, pts.h, face, simplices,
                                     all_xy, RASTER_RES)
        got = raw.hm_lin.ravel().astype(np.float64)
        covered = face >= 0
        assert np.abs(got[covered] - want[covered]).max() < 1e-6
        # outside hull: nearest neighbor
        nn = oracle_nn(pts.xy, grid_cell_centers(RASTER_RES)[~covered])
        assert np.abs(got[~covered] - pts.h[nn]).max() < 1e-6
        # hm_nn everywhere
        nn_all = oracle_nn(pts.xy, grid_cell_centers(RASTER_RES))
        assert np.abs(raw.hm_nn.ravel() - pts.h[nn_all]).max() < 1e-6

    def test_affine_exactness(self, rng):
        a, b, d = 0.3, -0.2, 0.05
        xy = rng.uniform(-1, 1, (80, 2))
        h = a * xy[:, 0] + b * xy[:, 1] + d
        raw = interpolate_patch(PatchSpacePoints(xy=xy, h=h, rgb=None))
        covered = raw.face_map.cells.ravel() >= 0
        centers = grid_cell_centers(RASTER_RES)[covered]
        plane = a * centers[:, 0] + b * centers[:, 1] + d
        assert np.abs(raw.hm_lin.ravel()[covered] - plane).max() < 1e-5

    def test_boundedness_within_triangle(self, rng):
        pts = random_pts(rng, 60)
        raw = interpolate_patch(pts)
        face, simplices, _all_xy = oracle_face_map(pts.xy, RASTER_RES)
        h_all = np.concatenate([pts.h, [np.nan] * 4])
        flat = raw.hm_lin.ravel()
        for j in np.nonzero(face >= 0)[0][::17]:
            vh = h_all[simplices[face[j]]]
            assert vh.min() - 1e-5 <= flat[j] <= vh.max() + 1e-5

    def test_nn_idempotence_on_cell_center(self):
        res = RASTER_RES
        cell = grid_cell_centers(res)[40 * res + 40]
        xy = np.array([cell, [0.9, 0.9], [-0.8, 0.6]])
        h = np.array([0.25, 0.0, -0.1])
        raw = interpolate_patch(PatchSpacePoints(xy=xy, h=h, rgb=None))
        assert raw.hm_nn[40, 40] == np.float32(0.25)

    def test_no_unassigned_cells(self, rng):
        for n in (1, 2, 3, 7, 150):
            pts = random_pts(rng, n)
            raw = interpolate_patch(pts)
            assert not np.any(raw.face_map.cells == -2)

    def test_deterministic(self, rng):
        pts = random_pts(rng, 90, with_rgb=True)
        a = interpolate_patch(pts)
        b = interpolate_patch(pts)
        assert np.array_equal(a.hm_lin, b.hm_lin)
        assert np.array_equal(a.hm_nn, b.hm_nn)
        assert np.array_equal(a.face_map.cells, b.face_map.cells)
        assert np.array_equal(a.rgb_lin, b.rgb_lin)

    def test_collinear_points_fall_back_to_nn(self):
        xy = np.stack([np.linspace(-0.7, 0.7, 5), np.zeros(5)], axis=1)
        h = np.linspace(0, 1, 5)
        raw = interpolate_patch(PatchSpacePoints(xy=xy, h=h, rgb=None))
        # every triangle touches a padding corner, so linear == NN
        assert np.all(raw.face_map.cells == -1)
        assert np.array_equal(raw.hm_lin, raw.hm_nn)

    def test_rgb_interpolated_alongside(self, rng):
        pts = random_pts(rng, 50, with_rgb=True)
        raw = interpolate_patch(pts)
        assert raw.rgb_lin.shape == (RASTER_RES, RASTER_RES, 3)
        assert raw.rgb_nn.shape == (RASTER_RES, RASTER_RES, 3)
        assert np.isfinite(raw.rgb_lin).all()


class TestRecentering:
    def test_center_cell_defines_cz(self, small_dataset):
        from terrascout.engine import ScoutEngine

        engine = ScoutEngine(small_dataset)
        engine.load_overview()
        key = engine.grid.key(1, 1)
        raw = reconstruct_patch(key, engine.index)
        res = RASTER_RES
        # after re-centering the linear raster's center cell is zero, so
        # its model-space height equals the stored c_z
        assert raw.hm_lin[res // 2, res // 2] == 0.0
        assert raw.key.c_z != 0.0

    def test_recenter_is_constant_shift(self, rng):
        pts = random_pts(rng, 70)
        key = PatchKey(0, 0, (320.0, 320.0))
        pts.c_z = 100.0
        raw_plain = interpolate_patch(pts)
        raw_shifted = interpolate_patch(pts, key=key)
        delta = raw_plain.hm_lin[RASTER_RES // 2, RASTER_RES // 2]
        assert np.allclose(raw_shifted.hm_lin, raw_plain.hm_lin - delta,
                           atol=1e-6)
        assert np.isclose(raw_shifted.key.c_z,
                          100.0 + float(delta) * PAD_RADIUS)
