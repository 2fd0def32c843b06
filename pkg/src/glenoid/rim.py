"""Rim-curve processing: landmark resampling, spline tubes, thinning, heatmaps.

The ground-truth chain for the rim predictor is::

    landmarks -> resample_polyline(30) -> spline_tube(1.0 mm)
              -> skeletonize -> gaussian_heatmap(sigma=1 mm)

and predicted heatmaps are turned back into rim points with
``binarize_heatmap(0.3) -> skeletonize``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._thinning import thin
from .errors import GeometryError
from .points import PointSet3, as_points
from .volume import VoxelMask

BRUTE_FORCE_MAX = 256
HEATMAP_CUTOFF_SIGMAS = 6.0


@dataclass(frozen=True)
class RimHeatmap:
    grid: VoxelMask
    sigma_mm: float

    def __post_init__(self):
        if self.grid.is_binary:
            raise ValueError("heatmap grid must hold real values")
        if self.sigma_mm <= 0:
            raise ValueError("sigma must be positive")


def _dedupe(pts: np.ndarray) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0
    return pts[keep]


def resample_polyline(landmarks, n: int) -> PointSet3:
    """``n`` points equally spaced by arc length along the polyline."""
    pts = as_points(landmarks)
    if n < 2:
        raise ValueError("n must be at least 2")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if len(pts) < 2 or arc[-1] <= 0:
        raise GeometryError("zero-length polyline")
    targets = arc[-1] * np.arange(n) / (n - 1)
    out = np.column_stack([np.interp(targets, arc, pts[:, d]) for d in range(3)])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return PointSet3(out, ordered=True)


def catmull_rom(landmarks, max_step: float) -> np.ndarray:
    """Dense samples of the uniform Catmull-Rom spline through ``landmarks``.

    Segment tangents are ``0.5 * (p[i+1] - p[i-1])`` (cardinal spline with
    tension 0.5); the end tangents use reflected ghost points. Consecutive
    samples are at most ``max_step`` mm apart.
    """
    pts = _dedupe(as_points(landmarks))
    if len(pts) < 2:
        raise GeometryError("zero-length polyline")
    ghost = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
    tangents = 0.5 * (ghost[2:] - ghost[:-2])
    chunks = []
    probe_t = np.linspace(0.0, 1.0, 33)
    for i in range(len(pts) - 1):
        p0, p1, m0, m1 = pts[i], pts[i + 1], tangents[i], tangents[i + 1]
        probe = _hermite(p0, p1, m0, m1, probe_t)
        length = np.linalg.norm(np.diff(probe, axis=0), axis=1).sum()
        n = max(2, int(np.ceil(1.25 * length / max_step)) + 1)
        t = np.linspace(0.0, 1.0, n)
        chunks.append(_hermite(p0, p1, m0, m1, t if i == 0 else t[1:]))
    return np.vstack(chunks)


def _hermite(p0, p1, m0, m1, t):
    t = t[:, None]
    t2, t3 = t * t, t * t * t
    return (
        (2 * t3 - 3 * t2 + 1) * p0
        + (t3 - 2 * t2 + t) * m0
        + (-2 * t3 + 3 * t2) * p1
        + (t3 - t2) * m1
    )


def _subgrid(template: VoxelMask, lo_mm, hi_mm):
    """Index slices covering the mm box ``[lo_mm, hi_mm]`` clipped to the grid."""
    spacing = np.asarray(template.spacing_mm)
    lo = np.maximum(np.floor(np.asarray(lo_mm) / spacing).astype(int), 0)
    hi = np.minimum(np.ceil(np.asarray(hi_mm) / spacing).astype(int), np.asarray(template.dims) - 1)
    if np.any(hi < lo):
        return None
    return tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))


def _centers(template: VoxelMask, sl) -> np.ndarray:
    axes = [np.arange(s.start, s.stop) * sp for s, sp in zip(sl, template.spacing_mm)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def spline_tube(landmarks, radius_mm: float, grid_template: VoxelMask) -> VoxelMask:
    """Binary tube of voxels whose centres lie within ``radius_mm`` of the spline."""
    if radius_mm <= 0:
        raise ValueError("tube radius must be positive")
    if max(grid_template.spacing_mm) > radius_mm:
        raise GeometryError("tube undersampled")
    step = 0.125 * min(grid_template.spacing_mm)
    curve = catmull_rom(landmarks, step)
    out = np.zeros(grid_template.dims, dtype=np.uint8)
    sl = _subgrid(grid_template, curve.min(axis=0) - radius_mm, curve.max(axis=0) + radius_mm)
    if sl is not None:
        centers = _centers(grid_template, sl)
        dist, _ = cKDTree(curve).query(centers, distance_upper_bound=radius_mm * 1.01)
        shape = tuple(s.stop - s.start for s in sl)
        out[sl] = (dist <= radius_mm).reshape(shape)
    return VoxelMask(out, grid_template.spacing_mm, grid_template.frame)


def skeletonize(mask: VoxelMask) -> PointSet3:
    """Voxel centres (mm) of the 3-D thinning skeleton of a binary mask."""
    if not mask.is_binary:
        raise ValueError("skeletonize expects a binary mask")
    idx = mask.foreground_indices()
    if idx.size == 0:
        return PointSet3(np.zeros((0, 3)))
    lo = idx.min(axis=0)
    hi = idx.max(axis=0) + 1
    sub = mask.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]].astype(bool)
    skel = np.argwhere(thin(sub)) + lo
    return PointSet3(skel * np.asarray(mask.spacing_mm))


def gaussian_heatmap(skeleton, sigma_mm: float, grid_template: VoxelMask) -> RimHeatmap:
    """Pointwise max of isotropic Gaussians centred on the skeleton points.

    Values further than six sigma from every point are set to zero.
    """
    if sigma_mm <= 0:
        raise ValueError("sigma must be positive")
    pts = as_points(skeleton)
    out = np.zeros(grid_template.dims, dtype=np.float32)
    if len(pts):
        reach = HEATMAP_CUTOFF_SIGMAS * sigma_mm
        sl = _subgrid(grid_template, pts.min(axis=0) - reach, pts.max(axis=0) + reach)
        if sl is not None:
            centers = _centers(grid_template, sl)
            dist, _ = cKDTree(pts).query(centers, distance_upper_bound=reach)
            vals = np.where(np.isfinite(dist), np.exp(-0.5 * (dist / sigma_mm) ** 2), 0.0)
            out[sl] = vals.reshape(tuple(s.stop - s.start for s in sl))
    grid = VoxelMask(out, grid_template.spacing_mm, grid_template.frame)
    return RimHeatmap(grid, float(sigma_mm))


def binarize_heatmap(h, threshold: float = 0.3) -> VoxelMask:
    """Foreground wherever the heatmap value is at least ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    grid = h.grid if isinstance(h, RimHeatmap) else h
    return VoxelMask((grid.data >= threshold).astype(np.uint8), grid.spacing_mm, grid.frame)


def _chamfer_brute(a: np.ndarray, b: np.ndarray):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return d.min(axis=1), d.min(axis=0)


def chamfer_distance(a, b) -> float:
    """Symmetric Chamfer distance: mean NN distance A->B plus mean NN distance B->A."""
    pa, pb = as_points(a), as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer undefined on empty set")
    if max(len(pa), len(pb)) <= BRUTE_FORCE_MAX:
        ab, ba = _chamfer_brute(pa, pb)
    else:
        ab, _ = cKDTree(pb).query(pa)
        ba, _ = cKDTree(pa).query(pb)
    return float(ab.mean() + ba.mean())


def heatmap_to_rim(h, threshold: float = 0.3) -> PointSet3:
    """Binarize a (predicted) heatmap and thin it to rim skeleton points."""
    return skeletonize(binarize_heatmap(h, threshold))


@dataclass(frozen=True)
class RimGroundTruth:
    resampled: PointSet3
    tube: VoxelMask
    skeleton: PointSet3
    heatmap: RimHeatmap


def ground_truth_chain(landmarks, grid_template: VoxelMask, n: int = 30,
                       tube_radius_mm: float = 1.0, sigma_mm: float = 1.0) -> RimGroundTruth:
    resampled = resample_polyline(landmarks, n)
    tube = spline_tube(resampled, tube_radius_mm, grid_template)
    skeleton = skeletonize(tube)
    heatmap = gaussian_heatmap(skeleton, sigma_mm, grid_template)
    return RimGroundTruth(resampled, tube, skeleton, heatmap)
