import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import rotation
from glenoid.errors import GeometryError, MaskFormatError
from glenoid.phantom import generate, random_specs
from glenoid.volume import (RigidTransform, VoxelMask, apply_transform, crop_pad, flip_points_sagittal,
                            flip_sagittal, pca_reorient, principal_axes, read_mask, write_mask)


def test_all_ones_roundtrip_bytes(tmp_path):
    m = VoxelMask(np.ones((2, 2, 2), np.uint8), (1.0, 1.0, 1.0))
    write_mask(m, tmp_path / "m")
    assert (tmp_path / "m.raw").read_bytes() == b"\x01" * 8
    header = json.loads((tmp_path / "m.json").read_text())
    assert header == {"dims": [2, 2, 2], "spacing_mm": [1.0, 1.0, 1.0], "dtype": "u8",
                      "frame": "native", "order": "x-fastest"}
    assert read_mask(tmp_path / "m.json") == m


def test_x_fastest_payload_order(tmp_path):
    data = np.zeros((3, 2, 1), np.uint8)
    data[1, 0, 0] = 1
    write_mask(VoxelMask(data, (1, 1, 1)), tmp_path / "m")
    assert (tmp_path / "m.raw").read_bytes() == bytes([0, 1, 0, 0, 0, 0])


def test_payload_size_mismatch(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"dims": [3, 3, 3], "spacing_mm": [1, 1, 1], "dtype": "u8"}))
    (tmp_path / "m.raw").write_bytes(b"\x00" * 26)
    with pytest.raises(MaskFormatError, match="payload size mismatch"):
        read_mask(tmp_path / "m.json")


def test_non_binary_payload_rejected(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"dims": [2, 1, 1], "spacing_mm": [1, 1, 1], "dtype": "u8"}))
    (tmp_path / "m.raw").write_bytes(b"\x00\x02")
    with pytest.raises(MaskFormatError, match="non-binary"):
        read_mask(tmp_path / "m.json")


@pytest.mark.parametrize("doc", [
    [1, 2, 3],
    {"dims": [3, 3], "spacing_mm": [1, 1, 1], "dtype": "u8"},
    {"dims": [3, 3, 3], "spacing_mm": [1, 0, 1], "dtype": "u8"},
    {"dims": [3, 3, 3], "spacing_mm": [1, 1, 1], "dtype": "i16"},
    {"spacing_mm": [1, 1, 1], "dtype": "u8"},
])
def test_malformed_header(tmp_path, doc):
    (tmp_path / "m.json").write_text(json.dumps(doc))
    (tmp_path / "m.raw").write_bytes(b"\x00" * 27)
    with pytest.raises(MaskFormatError, match="malformed header"):
        read_mask(tmp_path / "m.json")


def test_phantom_case0_roundtrip(tmp_path):
    case = generate(random_specs(1, seed=42)[0])
    write_mask(case.mask, tmp_path / "case")
    back = read_mask(tmp_path / "case.json")
    assert back == case.mask
    assert np.array_equal(back.data, case.mask.data)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, (4, 3, 5), elements=st.floats(0, 1, width=32)))
def test_heatmap_roundtrip_bit_exact(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("h") / "h"
    m = VoxelMask(data, (0.5, 0.7, 1.1))
    write_mask(m, path)
    back = read_mask(path)
    assert back.data.dtype == np.float32
    assert back.data.tobytes() == m.data.tobytes()


def test_voxel_coordinates_have_no_origin_offset():
    data = np.zeros((4, 4, 4), np.uint8)
    data[1, 2, 3] = 1
    m = VoxelMask(data, (0.5, 1.0, 2.0))
    assert np.allclose(m.foreground_mm(), [[0.5, 2.0, 6.0]])


def test_flip_single_voxel():
    data = np.zeros((4, 2, 2), np.uint8)
    data[0, 0, 0] = 1
    out = flip_sagittal(VoxelMask(data, (1, 1, 1)))
    assert out.foreground_indices().tolist() == [[3, 0, 0]]


def test_flip_symmetric_mask_unchanged():
    data = np.zeros((5, 3, 3), np.uint8)
    data[1:4, 1, 1] = 1
    m = VoxelMask(data, (1, 1, 1))
    assert flip_sagittal(m) == m


def test_flip_involution_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(50):
        dims = tuple(rng.integers(1, 8, size=3))
        m = VoxelMask((rng.random(dims) < 0.3).astype(np.uint8), (1.0, 0.5, 2.0))
        assert flip_sagittal(flip_sagittal(m)) == m


def test_flip_points_matches_mask_flip():
    rng = np.random.default_rng(1)
    data = (rng.random((6, 5, 4)) < 0.2).astype(np.uint8)
    m = VoxelMask(data, (0.5, 0.7, 0.9))
    assert np.allclose(np.sort(flip_points_sagittal(m.foreground_mm(), m).points, axis=0),
                       np.sort(flip_sagittal(m).foreground_mm(), axis=0))


def _plate(dims=(40, 40, 20), z=(9, 11)):
    data = np.zeros(dims, np.uint8)
    data[5:35, 8:32, z[0]:z[1]] = 1
    return VoxelMask(data, (1.0, 1.0, 1.0))


def test_reorient_aligned_plate_is_identity_up_to_sign():
    m = _plate()
    out, t = pca_reorient(m)
    assert np.allclose(np.abs(t.rotation), np.eye(3), atol=1e-9)
    assert out.count() == m.count()
    assert out.frame == "reoriented"


def _extent_z(m):
    return np.ptp(m.foreground_indices()[:, 2]) + 1


def test_reorient_rotated_plate_flattens():
    plate = _plate(dims=(60, 60, 60), z=(29, 31))
    rot = rotation([1, 0, 0], 30)
    c = np.array([30.0, 30.0, 30.0])
    t = RigidTransform(rot.T, c - rot.T @ c)
    from glenoid.volume import resample
    tilted = resample(plate, t, plate.dims, plate.spacing_mm, "native")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out, back = pca_reorient(tilted)
    assert _extent_z(out) <= _extent_z(plate) + 2
    assert abs(np.linalg.det(back.rotation) - 1) < 1e-9


def test_reorient_count_drift_below_tolerance():
    from glenoid.volume import resample
    plate = _plate(dims=(60, 60, 60), z=(27, 33))
    rot = rotation([1, 1, 0], 30)
    c = np.full(3, 30.0)
    tilted = resample(plate, RigidTransform(rot, c - rot @ c), plate.dims, plate.spacing_mm, "native")
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        out, _ = pca_reorient(tilted)
    assert abs(out.count() - tilted.count()) / tilted.count() < 0.05


def test_reorient_min_variance_on_z():
    rng = np.random.default_rng(4)
    plate = _plate(dims=(60, 60, 60), z=(28, 32))
    from glenoid.volume import resample
    for _ in range(3):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        q *= np.sign(np.linalg.det(q))
        c = np.full(3, 30.0)
        tilted = resample(plate, RigidTransform(q, c - q @ c), plate.dims, plate.spacing_mm, "native")
        out, _ = pca_reorient(tilted)
        var = out.foreground_mm().var(axis=0)
        assert var[2] <= 1.05 * min(var[0], var[1])


def test_reorient_transform_maps_back_to_native():
    rng = np.random.default_rng(5)
    data = np.zeros((30, 30, 30), np.uint8)
    data[5:25, 8:20, 12:16] = 1
    data[5:10, 8:12, 16:18] = 1
    m = VoxelMask(data, (0.8, 0.8, 0.8))
    out, t = pca_reorient(m)
    native = apply_transform(out.foreground_mm(), t).points
    idx = np.rint(native / 0.8).astype(int)
    assert data[tuple(idx.T)].all()


def test_single_voxel_degenerate():
    data = np.zeros((3, 3, 3), np.uint8)
    data[1, 1, 1] = 1
    with pytest.raises(GeometryError, match="degenerate principal axes"):
        pca_reorient(VoxelMask(data, (1, 1, 1)))


def test_coplanar_voxels_degenerate():
    data = np.zeros((6, 6, 6), np.uint8)
    data[:, :, 2] = 1
    with pytest.raises(GeometryError, match="degenerate principal axes"):
        pca_reorient(VoxelMask(data, (1, 1, 1)))


def test_principal_axes_right_handed():
    rng = np.random.default_rng(6)
    for _ in range(20):
        pts = rng.normal(size=(200, 3)) * [5, 3, 1] @ np.linalg.qr(rng.normal(size=(3, 3)))[0]
        _, axes, var = principal_axes(pts)
        assert np.allclose(axes.T @ axes, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(axes) - 1) < 1e-9
        assert axes[2, 2] >= 0 and axes[1, 1] >= 0
        assert var[0] >= var[1] >= var[2]


def test_crop_pad_centred_blob():
    data = np.zeros((112, 112, 112), np.uint8)
    data[51:61, 51:61, 51:61] = 1
    out = crop_pad(VoxelMask(data, (1, 1, 1)), (112, 112, 48))
    assert out.dims == (112, 112, 48)
    assert out.count() == 1000
    centroid = out.foreground_indices().mean(axis=0)
    assert np.all(np.abs(centroid - (np.array(out.dims) - 1) / 2) <= 1)


def test_crop_pad_empty():
    out = crop_pad(VoxelMask(np.zeros((5, 5, 5), np.uint8), (1, 1, 1)), (7, 3, 2))
    assert out.dims == (7, 3, 2) and out.count() == 0


def test_crop_pad_too_wide():
    data = np.zeros((80, 20, 20), np.uint8)
    data[10:70, 5:10, 5:10] = 1
    with pytest.raises(GeometryError, match="foreground exceeds target window"):
        crop_pad(VoxelMask(data, (1, 1, 1)), (48, 20, 20))


def test_crop_pad_keeps_offcentre_foreground():
    data = np.zeros((40, 10, 10), np.uint8)
    data[0:20, 4, 4] = 1
    data[39, 4, 4] = 1
    out, shift = crop_pad(VoxelMask(data, (1, 1, 1)), (40, 10, 10), return_shift=True)
    assert out.count() == 21


def test_transform_identity_and_translation():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    assert np.array_equal(apply_transform(pts, RigidTransform.identity()).points, pts)
    t = RigidTransform(np.eye(3), [1, 2, 3])
    assert np.allclose(apply_transform(np.zeros((1, 3)), t).points, [[1, 2, 3]])


def test_transform_roundtrip_and_compose():
    rng = np.random.default_rng(7)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.linalg.det(q))
    t = RigidTransform(q, rng.normal(size=3) * 50)
    pts = rng.normal(size=(100, 3)) * 30
    back = apply_transform(apply_transform(pts, t), t.inverse()).points
    assert np.max(np.abs(back - pts)) < 1e-9
    ident = t.compose(t.inverse())
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(ident.translation, 0, atol=1e-9)


def test_transform_rejects_reflection():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1),
       arrays(np.float64, (12, 3), elements=st.floats(-100, 100)),
       arrays(np.float64, (3,), elements=st.floats(-100, 100)))
def test_transform_preserves_distances(q, pts, trans):
    w, x, y, z = np.asarray(q) / np.linalg.norm(q)
    rot = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                    [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                    [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
    out = apply_transform(pts, RigidTransform(rot, trans)).points
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_mask_rejects_bad_values():
    with pytest.raises((ValueError, MaskFormatError)):
        VoxelMask(np.full((2, 2, 2), 2, np.uint8), (1, 1, 1))
    with pytest.raises(ValueError):
        VoxelMask(np.zeros((2, 2, 2), np.uint8), (1, 0, 1))
