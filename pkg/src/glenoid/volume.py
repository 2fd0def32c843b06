"""Voxel masks, rigid transforms and the reorientation/cropping preprocessing.

Index-to-physical map: voxel ``(i, j, k)`` has its centre at
``(i * sx, j * sy, k * sz)`` mm. There is no origin offset anywhere in the
package; all geometry is relative.

On disk a mask is a sidecar pair ``<name>.json`` + ``<name>.raw``. The raw
payload is x-fastest (``i`` innermost), ``u8`` 0/1 for binary masks and
little-endian ``f32`` for heatmaps.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import GeometryError, MaskFormatError
from .io_utils import atomic_write_bytes, atomic_write_text
from .points import PointSet3, as_points

FRAMES = ("native", "reoriented", "projected")
DTYPES = {"u8": np.dtype("u1"), "f32le": np.dtype("<f4")}
RESAMPLE_DRIFT_TOL = 0.05


@dataclass(frozen=True, eq=False)
class VoxelMask:
    """Scalar grid with anisotropic spacing.

    ``data`` is indexed ``data[i, j, k]``. ``uint8`` data is a binary mask
    (values 0/1 only); ``float32`` data is a heatmap with values in [0, 1].
    """

    data: np.ndarray
    spacing_mm: tuple
    frame: str = "native"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"mask data must be 3-D, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        if arr.dtype == np.uint8:
            if arr.size and arr.max(initial=0) > 1:
                raise MaskFormatError("non-binary value in binary mask")
        else:
            arr = arr.astype(np.float32)
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing_mm}")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def dims(self) -> tuple:
        return tuple(int(d) for d in self.data.shape)

    @property
    def is_binary(self) -> bool:
        return self.data.dtype == np.uint8

    @property
    def dtype_tag(self) -> str:
        return "u8" if self.is_binary else "f32le"

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing_mm))

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def foreground_indices(self) -> np.ndarray:
        return np.argwhere(self.data > 0)

    def foreground_mm(self) -> np.ndarray:
        """Voxel-centre coordinates (mm) of every non-zero voxel."""
        return self.foreground_indices() * np.asarray(self.spacing_mm)

    def voxel_centers_mm(self) -> np.ndarray:
        """Centres of all voxels, ``(nx, ny, nz, 3)``."""
        axes = [np.arange(n) * s for n, s in zip(self.dims, self.spacing_mm)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def with_data(self, data, frame=None) -> "VoxelMask":
        return VoxelMask(data, self.spacing_mm, self.frame if frame is None else frame)

    def __eq__(self, other):
        if not isinstance(other, VoxelMask):
            return NotImplemented
        return (
            self.spacing_mm == other.spacing_mm
            and self.frame == other.frame
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def empty_like(mask: VoxelMask, dtype=np.uint8) -> VoxelMask:
    return VoxelMask(np.zeros(mask.dims, dtype=dtype), mask.spacing_mm, mask.frame)


def _sidecar_paths(path) -> tuple:
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    return path.with_suffix(".json"), path.with_suffix(".raw")


def mask_header(mask: VoxelMask) -> dict:
    return {
        "dims": list(mask.dims),
        "spacing_mm": list(mask.spacing_mm),
        "dtype": mask.dtype_tag,
        "frame": mask.frame,
        "order": "x-fastest",
    }


def write_mask(mask: VoxelMask, path) -> None:
    """Write ``mask`` as ``<path>.json`` + ``<path>.raw``."""
    header_path, raw_path = _sidecar_paths(path)
    payload = np.asarray(mask.data, dtype=DTYPES[mask.dtype_tag]).tobytes(order="F")
    atomic_write_bytes(raw_path, payload)
    atomic_write_text(header_path, json.dumps(mask_header(mask)) + "\n")


def parse_header(doc) -> dict:
    if not isinstance(doc, dict):
        raise MaskFormatError("malformed header: expected a JSON object")
    for key in ("dims", "spacing_mm", "dtype"):
        if key not in doc:
            raise MaskFormatError(f"malformed header: missing {key!r}")
    dims = doc["dims"]
    if len(dims) != 3 or not all(isinstance(d, int) and d > 0 for d in dims):
        raise MaskFormatError(f"malformed header: bad dims {dims!r}")
    if doc["dtype"] not in DTYPES:
        raise MaskFormatError(f"malformed header: unknown dtype {doc['dtype']!r}")
    if doc.get("order", "x-fastest") != "x-fastest":
        raise MaskFormatError(f"malformed header: unsupported order {doc['order']!r}")
    spacing = doc["spacing_mm"]
    if len(spacing) != 3 or not all(float(s) > 0 for s in spacing):
        raise MaskFormatError(f"malformed header: bad spacing {spacing!r}")
    frame = doc.get("frame", "native")
    if frame not in FRAMES:
        raise MaskFormatError(f"malformed header: unknown frame {frame!r}")
    return {"dims": tuple(dims), "spacing_mm": tuple(float(s) for s in spacing),
            "dtype": doc["dtype"], "frame": frame}


def read_mask(path) -> VoxelMask:
    """Read a sidecar mask written by :func:`write_mask`."""
    header_path, raw_path = _sidecar_paths(path)
    try:
        doc = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise MaskFormatError(f"malformed header: {exc}") from exc
    header = parse_header(doc)
    dtype = DTYPES[header["dtype"]]
    payload = raw_path.read_bytes()
    expected = int(np.prod(header["dims"])) * dtype.itemsize
    if len(payload) != expected:
        raise MaskFormatError(
            f"payload size mismatch: expected {expected} bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(header["dims"], order="F")
    if header["dtype"] == "u8" and data.size and data.max() > 1:
        raise MaskFormatError("non-binary value in binary mask")
    if header["dtype"] == "f32le":
        data = data.astype(np.float32)
    return VoxelMask(data, header["spacing_mm"], header["frame"])


def flip_sagittal(mask: VoxelMask) -> VoxelMask:
    """Mirror along x: voxel ``(i, j, k)`` moves to ``(nx - 1 - i, j, k)``."""
    return mask.with_data(mask.data[::-1, :, :])


def flip_points_sagittal(points, mask: VoxelMask) -> PointSet3:
    """Mirror point coordinates consistently with :func:`flip_sagittal`."""
    pts = as_points(points).copy()
    pts[:, 0] = (mask.dims[0] - 1) * mask.spacing_mm[0] - pts[:, 0]
    ordered = points.ordered if isinstance(points, PointSet3) else False
    return PointSet3(pts, ordered=ordered)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``p -> rotation @ p + translation`` in mm."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        trans = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self.compose(other)`` applies ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def as_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation_mm": self.translation.tolist()}


def apply_transform(points, t: RigidTransform) -> PointSet3:
    pts = as_points(points)
    ordered = points.ordered if isinstance(points, PointSet3) else False
    return PointSet3(pts @ t.rotation.T + t.translation, ordered=ordered)


def principal_axes(coords: np.ndarray, tol: float = 1e-9):
    """Eigen-decomposition of the coordinate covariance.

    Returns ``(centroid, axes, variances)`` with ``axes[:, 0]`` the
    largest-variance direction and ``axes[:, 2]`` the smallest. Signs follow
    the native-axis convention: the least-variance axis points along +z,
    the middle one along +y, and the first completes a right-handed frame.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.shape[0] < 4:
        raise GeometryError("degenerate principal axes")
    centroid = coords.mean(axis=0)
    centered = coords - centroid
    cov = centered.T @ centered / coords.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if evals[0] <= 0 or evals[2] <= tol * evals[0]:
        raise GeometryError("degenerate principal axes")
    e3 = evecs[:, 2] if evecs[2, 2] >= 0 else -evecs[:, 2]
    e2 = evecs[:, 1] if evecs[1, 1] >= 0 else -evecs[:, 1]
    e1 = np.cross(e2, e3)
    return centroid, np.column_stack([e1, e2, e3]), evals


def resample(mask: VoxelMask, t: RigidTransform, dims, spacing_mm, frame: str) -> VoxelMask:
    """Sample ``mask`` on a new grid whose mm coordinates map to ``mask``'s via ``t``.

    Binary masks use nearest neighbour, heatmaps trilinear interpolation.
    """
    out_spacing = np.asarray(spacing_mm, dtype=float)
    axes = [np.arange(n) * s for n, s in zip(dims, out_spacing)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=0).reshape(3, -1)
    native = t.rotation @ grid + t.translation[:, None]
    idx = native / np.asarray(mask.spacing_mm)[:, None]
    order = 0 if mask.is_binary else 1
    src = mask.data if mask.is_binary else mask.data.astype(np.float64)
    vals = ndimage.map_coordinates(src, idx, order=order, mode="constant", cval=0.0)
    vals = vals.reshape(tuple(dims))
    if mask.is_binary:
        vals = (vals > 0).astype(np.uint8)
    else:
        vals = np.clip(vals, 0.0, 1.0).astype(np.float32)
    return VoxelMask(vals, tuple(out_spacing), frame)


def pca_reorient(mask: VoxelMask, margin_vox: int = 2):
    """Rotate ``mask`` so its least-variance principal axis lies along +z.

    Returns ``(reoriented_mask, transform)`` where ``transform`` maps
    reoriented mm coordinates back to native mm coordinates. The output grid
    is isotropic at the finest input spacing and tightly bounds the rotated
    foreground.
    """
    coords = mask.foreground_mm()
    centroid, axes, _ = principal_axes(coords)
    spacing = min(mask.spacing_mm)
    local = (coords - centroid) @ axes
    half_diag = 0.5 * float(np.linalg.norm(mask.spacing_mm))
    lo = local.min(axis=0) - half_diag - margin_vox * spacing
    hi = local.max(axis=0) + half_diag + margin_vox * spacing
    dims = tuple(int(np.ceil((h - l) / spacing)) + 1 for l, h in zip(lo, hi))
    transform = RigidTransform(axes, centroid + axes @ lo)
    out = resample(mask, transform, dims, (spacing,) * 3, "reoriented")
    before = mask.count() * mask.voxel_volume
    after = out.count() * out.voxel_volume
    if before > 0 and abs(after - before) / before >= RESAMPLE_DRIFT_TOL:
        warnings.warn(
            f"foreground volume changed by {100 * (after - before) / before:.1f}% "
            "during reorientation",
            RuntimeWarning,
            stacklevel=2,
        )
    return out, transform


def crop_pad(mask: VoxelMask, target_dims, return_shift: bool = False):
    """Crop or zero-pad ``mask`` to ``target_dims``, centring the foreground.

    The foreground centroid lands on the window centre when that keeps every
    foreground voxel inside; otherwise the shift is clamped just enough to
    keep them. ``return_shift`` also returns the integer index shift
    (``out_idx = in_idx + shift``).
    """
    target = tuple(int(d) for d in target_dims)
    if len(target) != 3 or min(target) <= 0:
        raise ValueError(f"target_dims must be three positive integers, got {target_dims}")
    idx = mask.foreground_indices()
    if idx.size == 0:
        shift = np.array([(t - n) // 2 for t, n in zip(target, mask.dims)])
        out = VoxelMask(np.zeros(target, dtype=mask.data.dtype), mask.spacing_mm, mask.frame)
        return (out, shift) if return_shift else out
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    if np.any(hi - lo + 1 > np.asarray(target)):
        raise GeometryError("foreground exceeds target window")
    if mask.is_binary:
        centroid = idx.mean(axis=0)
    else:
        w = mask.data[tuple(idx.T)].astype(float)
        centroid = (idx * w[:, None]).sum(axis=0) / w.sum()
    shift = np.rint((np.asarray(target) - 1) / 2.0 - centroid).astype(int)
    shift = np.clip(shift, -lo, np.asarray(target) - 1 - hi)

    out = np.zeros(target, dtype=mask.data.dtype)
    src_sl, dst_sl = [], []
    for n, t, s in zip(mask.dims, target, shift):
        a0 = max(0, -s)
        a1 = min(n, t - s)
        src_sl.append(slice(a0, a1))
        dst_sl.append(slice(a0 + s, a1 + s))
    out[tuple(dst_sl)] = mask.data[tuple(src_sl)]
    result = VoxelMask(out, mask.spacing_mm, mask.frame)
    return (result, shift) if return_shift else result
