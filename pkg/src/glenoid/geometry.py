"""En-face plane, projection, circle fitting and the bone-loss measurement.

Bone loss is ``100 * B / A`` where ``A`` is the fitted circle diameter and
``B`` the longest radial gap between the glenoid outline and the circle.
By default the circle radius is fixed to ``diameter_ratio * H / 2`` with
``H`` the glenoid height measured on the en-face projection.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import RunConfig
from .errors import GeometryError, GlenoidError, StageError
from .metrics import severity_class
from .optim import bfgs
from .points import PointSet3, as_points
from .volume import VoxelMask

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class EnFacePlane:
    origin: np.ndarray
    normal: np.ndarray
    basis_u: np.ndarray
    basis_v: np.ndarray

    def as_dict(self) -> dict:
        return {
            "origin_mm": self.origin.tolist(),
            "normal": self.normal.tolist(),
            "basis_u": self.basis_u.tolist(),
            "basis_v": self.basis_v.tolist(),
        }


@dataclass(frozen=True)
class FittedCircle:
    center: tuple
    radius: float
    constrained: bool
    objective: float = float("nan")
    n_iter: int = 0
    grad_norm: float = float("nan")
    history: tuple = ()

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def as_dict(self) -> dict:
        return {
            "center_uv_mm": [float(c) for c in self.center],
            "radius_mm": float(self.radius),
            "constrained": bool(self.constrained),
            "objective": float(self.objective),
            "n_iter": int(self.n_iter),
        }


@dataclass(frozen=True, eq=False)
class ProjectedMask:
    """2-D raster of the en-face projection.

    Cell ``(a, b)`` covers ``u in [u0 + a*cell, u0 + (a+1)*cell)`` and the
    same along ``v``.
    """

    grid: np.ndarray
    origin_uv: np.ndarray
    cell_mm: float

    def cell_centers(self) -> np.ndarray:
        idx = np.argwhere(self.grid)
        return self.origin_uv + (idx + 0.5) * self.cell_mm

    def lookup(self, uv: np.ndarray) -> np.ndarray:
        idx = np.floor((uv - self.origin_uv) / self.cell_mm).astype(np.int64)
        nu, nv = self.grid.shape
        inside = (idx[..., 0] >= 0) & (idx[..., 0] < nu) & (idx[..., 1] >= 0) & (idx[..., 1] < nv)
        out = np.zeros(idx.shape[:-1], dtype=bool)
        out[inside] = self.grid[idx[..., 0][inside], idx[..., 1][inside]]
        return out

    def to_voxel_mask(self) -> VoxelMask:
        return VoxelMask(self.grid[:, :, None].astype(np.uint8), (self.cell_mm,) * 3, "projected")


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def plane_from_normal(origin, normal) -> EnFacePlane:
    """Plane with a deterministic right-handed in-plane basis.

    ``basis_u`` is the native axis least aligned with the normal, projected
    into the plane; ``basis_v = normal x basis_u``.
    """
    n = _unit(normal)
    ref = np.eye(3)[int(np.argmin(np.abs(n)))]
    u = _unit(ref - (ref @ n) * n)
    v = np.cross(n, u)
    return EnFacePlane(np.asarray(origin, dtype=float), n, u, v)


def fit_plane(rim) -> EnFacePlane:
    """Least-squares plane through the rim points (normal = least singular direction)."""
    pts = as_points(rim)
    if len(pts) < 3:
        raise GeometryError("plane fit needs at least 3 points")
    origin = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - origin, full_matrices=False)
    if len(s) < 3:
        s = np.concatenate([s, np.zeros(3 - len(s))])
    if s[0] <= 0 or (s[1] - s[2]) <= 1e-9 * s[0]:
        raise GeometryError("rim points collinear")
    normal = vt[2]
    if normal[2] < 0 or (normal[2] == 0 and normal @ np.ones(3) < 0):
        normal = -normal
    return plane_from_normal(origin, normal)


def project(points, plane: EnFacePlane) -> np.ndarray:
    """Plane coordinates ``((p - origin).u, (p - origin).v)``, shape ``(N, 2)``."""
    d = as_points(points) - plane.origin
    return np.column_stack([d @ plane.basis_u, d @ plane.basis_v])


def _disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def project_mask(mask: VoxelMask, plane: EnFacePlane, cell_mm: float | None = None,
                 closing_radius: int = 2) -> ProjectedMask:
    """Rasterise projected foreground voxel centres, then close small gaps.

    A thin plate tilted against the voxel grid projects to a sparse, irregular
    point pattern; a closing radius of two cells seals it into one region.
    """
    if cell_mm is None:
        cell_mm = min(mask.spacing_mm) / 2.0
    uv = project(mask.foreground_mm(), plane)
    if len(uv) == 0:
        return ProjectedMask(np.zeros((1, 1), dtype=bool), np.zeros(2), float(cell_mm))
    pad = closing_radius + 2
    origin = np.floor(uv.min(axis=0) / cell_mm) * cell_mm - pad * cell_mm
    idx = np.floor((uv - origin) / cell_mm).astype(np.int64)
    shape = tuple(idx.max(axis=0) + pad + 1)
    grid = np.zeros(shape, dtype=bool)
    grid[idx[:, 0], idx[:, 1]] = True
    if closing_radius > 0:
        grid = ndimage.binary_closing(grid, structure=_disk(closing_radius))
    return ProjectedMask(grid, origin, float(cell_mm))


def glenoid_height(projected: ProjectedMask) -> float:
    """Extent of the foreground cell centres along the first principal axis.

    Cell centres stand in for the projected voxel centres they collect, so
    the extent is not widened by the cell size.
    """
    pts = projected.cell_centers()
    if len(pts) == 0:
        raise GeometryError("empty projection")
    centered = pts - pts.mean(axis=0)
    if len(pts) == 1:
        return 0.0
    _, vecs = np.linalg.eigh(centered.T @ centered)
    along = centered @ vecs[:, -1]
    return float(along.max() - along.min())


def circle_objective(center, radius, pts) -> float:
    d = np.linalg.norm(pts - center, axis=1)
    return float(((d - radius) ** 2).sum())


def _circle_grad(center, radius, pts):
    diff = center - pts
    d = np.linalg.norm(diff, axis=1)
    ok = d >= 1e-12
    res = d[ok] - radius
    g_c = (2 * res[:, None] * diff[ok] / d[ok, None]).sum(axis=0)
    g_r = -2 * res.sum()
    return g_c, g_r


def _check_2d(rim2d) -> np.ndarray:
    pts = np.asarray(rim2d, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise GeometryError("non-finite rim coordinates")
    return pts


def fit_circle_unconstrained(rim2d, gtol: float = 1e-8, max_iter: int = 200) -> FittedCircle:
    """Minimise ``sum (|p - c| - r)^2`` over centre and radius with BFGS."""
    pts = _check_2d(rim2d)
    if len(pts) < 3:
        raise GeometryError("circle underdetermined")
    shift = pts.mean(axis=0)
    local = pts - shift
    s = np.linalg.svd(local, compute_uv=False)
    if s[0] <= 0 or s[-1] <= 1e-9 * s[0]:
        raise GeometryError("circle underdetermined")
    x0 = np.array([0.0, 0.0, np.linalg.norm(local, axis=1).mean()])

    def fun(x):
        return circle_objective(x[:2], x[2], local)

    def grad(x):
        g_c, g_r = _circle_grad(x[:2], x[2], local)
        return np.array([g_c[0], g_c[1], g_r])

    res = bfgs(fun, grad, x0, gtol=gtol, max_iter=max_iter)
    radius = float(res.x[2])
    center = res.x[:2]
    if radius < 0:
        radius = -radius
    if radius == 0:
        raise GeometryError("circle underdetermined")
    return FittedCircle(tuple(float(c) for c in center + shift), radius, False,
                        res.fun, res.n_iter, res.grad_norm, tuple(res.history))


def fit_circle_constrained(rim2d, radius_mm: float, gtol: float = 1e-8,
                           max_iter: int = 200) -> FittedCircle:
    """Minimise ``sum (|p - c| - radius)^2`` over the centre only."""
    pts = _check_2d(rim2d)
    if len(pts) < 2:
        raise GeometryError("constrained circle fit needs at least 2 points")
    if not radius_mm > 0:
        raise GeometryError("constrained radius must be positive")
    radius = float(radius_mm)
    shift = pts.mean(axis=0)
    local = pts - shift

    def fun(c):
        return circle_objective(c, radius, local)

    def grad(c):
        return _circle_grad(c, radius, local)[0]

    res = bfgs(fun, grad, np.zeros(2), gtol=gtol, max_iter=max_iter)
    return FittedCircle(tuple(float(c) for c in res.x + shift), radius, True,
                        res.fun, res.n_iter, res.grad_norm, tuple(res.history))


def ray_extents(projected: ProjectedMask, center, angles_rad, r_max: float | None = None):
    """Signed position of the outermost foreground along each direction.

    The whole line through ``center`` is marched, so a direction whose
    foreground lies only behind the centre gets a negative extent (a chord
    cut past the centre yields a gap larger than the radius). Lines with no
    foreground at all get 0.
    """
    center = np.asarray(center, dtype=float)
    step = projected.cell_mm / 4.0
    if r_max is None:
        nu, nv = projected.grid.shape
        corners = projected.origin_uv + np.array([[0, 0], [nu, 0], [0, nv], [nu, nv]]) * projected.cell_mm
        r_max = float(np.linalg.norm(corners - center, axis=1).max())
    n = int(np.ceil(r_max / step))
    t = np.arange(-n, n + 1) * step
    dirs = np.column_stack([np.cos(angles_rad), np.sin(angles_rad)])
    samples = center + dirs[:, None, :] * t[None, :, None]
    hit = projected.lookup(samples)
    any_hit = hit.any(axis=1)
    last = hit.shape[1] - 1 - np.argmax(hit[:, ::-1], axis=1)
    return np.where(any_hit, t[last] + 0.5 * step, 0.0)


def defect_length(projected: ProjectedMask, circle: FittedCircle, angular_step_deg: float = 0.5):
    """Longest radial gap ``max(0, r - d(theta))`` between outline and circle.

    Returns ``(B_mm, angle_deg)``; the angle is measured in the plane from
    ``basis_u`` towards ``basis_v``.
    """
    if not 0 < angular_step_deg <= 1:
        raise GeometryError("angular step must lie in (0, 1] degrees")
    center = np.asarray(circle.center, dtype=float)
    cells = projected.cell_centers()
    if len(cells) == 0 or not np.any(np.linalg.norm(cells - center, axis=1) <= circle.radius):
        raise GeometryError("circle placement invalid")
    n = int(round(360.0 / angular_step_deg))
    angles = np.arange(n) * (2 * np.pi / n)
    d = ray_extents(projected, center, angles)
    gap = np.clip(circle.radius - d, 0.0, 2.0 * circle.radius)
    k = int(np.argmax(gap))
    return float(gap[k]), float(np.degrees(angles[k]))


@dataclass
class MeasurementReport:
    bone_loss_pct: float
    defect_B_mm: float
    diameter_A_mm: float
    normal: np.ndarray
    circle: FittedCircle
    glenoid_height_mm: float
    severity: str
    defect_angle_deg: float
    plane: EnFacePlane
    config: RunConfig
    projected_mask: ProjectedMask = field(repr=False, default=None)
    projected_rim: np.ndarray = field(repr=False, default=None)
    intermediates: dict = field(default_factory=dict)
    timings_s: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "bone_loss_pct": float(self.bone_loss_pct),
            "defect_B_mm": float(self.defect_B_mm),
            "diameter_A_mm": float(self.diameter_A_mm),
            "defect_angle_deg": float(self.defect_angle_deg),
            "glenoid_height_mm": float(self.glenoid_height_mm),
            "severity": self.severity,
            "normal": [float(c) for c in self.normal],
            "circle": self.circle.as_dict(),
            "plane": self.plane.as_dict(),
            "intermediates": dict(self.intermediates),
            "config": self.config.as_dict(),
        }


@dataclass(frozen=True, eq=False)
class PreparedCase:
    """Everything upstream of the circle fit; reused across diameter ratios."""

    plane: EnFacePlane
    projected_mask: ProjectedMask
    rim2d: np.ndarray
    height_mm: float
    timings_s: dict


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (GlenoidError, ValueError) as exc:
        raise StageError(name, str(exc)) from exc


def prepare_case(mask: VoxelMask, rim, config: RunConfig | None = None) -> PreparedCase:
    config = config or RunConfig()
    timings = {}
    t0 = time.perf_counter()
    plane = _stage("plane", fit_plane, rim)
    timings["plane"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pm = _stage("project", project_mask, mask, plane, config.raster_cell_mm, config.closing_radius)
    rim2d = _stage("project", project, rim, plane)
    timings["project"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    height = _stage("height", glenoid_height, pm)
    timings["height"] = time.perf_counter() - t0
    return PreparedCase(plane, pm, rim2d, height, timings)


def measure_prepared(prep: PreparedCase, config: RunConfig, diameter_ratio: float | None = None):
    timings = dict(prep.timings_s)
    ratio = config.diameter_ratio if diameter_ratio is None else diameter_ratio
    t0 = time.perf_counter()
    if config.constrained:
        circle = _stage("circle", fit_circle_constrained, prep.rim2d, ratio * prep.height_mm / 2.0)
    else:
        circle = _stage("circle", fit_circle_unconstrained, prep.rim2d)
    timings["circle"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    b_mm, angle = _stage("defect", defect_length, prep.projected_mask, circle, config.angular_step_deg)
    timings["defect"] = time.perf_counter() - t0

    pct = 100.0 * b_mm / circle.diameter
    return MeasurementReport(
        bone_loss_pct=pct,
        defect_B_mm=b_mm,
        diameter_A_mm=circle.diameter,
        normal=prep.plane.normal,
        circle=circle,
        glenoid_height_mm=prep.height_mm,
        severity=severity_class(pct, config.cutoffs),
        defect_angle_deg=angle,
        plane=prep.plane,
        config=config,
        projected_mask=prep.projected_mask,
        projected_rim=prep.rim2d,
        timings_s=timings,
    )


def measure_bone_loss(mask: VoxelMask, rim, config: RunConfig | None = None) -> MeasurementReport:
    """Plane fit, projection, height, circle fit and defect search for one case."""
    config = config or RunConfig()
    if not mask.is_binary:
        raise StageError("mask", "glenoid mask must be binary")
    if isinstance(rim, PointSet3) and len(rim) == 0:
        raise StageError("rim", "empty rim point set")
    return measure_prepared(prepare_case(mask, rim, config), config)


DEFAULT_RATIO_GRID = tuple(float(x) for x in np.round(np.linspace(0.65, 0.75, 11), 10))


@dataclass
class RatioTuning:
    best_ratio: float
    mae_curve: list
    failures: dict


def tune_diameter_ratio(cases, grid=DEFAULT_RATIO_GRID, config: RunConfig | None = None,
                        allow_failures: bool = False) -> RatioTuning:
    """Grid-search the diameter/height ratio that minimises bone-loss MAE.

    ``cases`` is an iterable of ``(mask, rim, truth_pct)``. Ties go to the
    smaller ratio. Failing cases raise unless ``allow_failures`` is set, in
    which case they are excluded and reported in ``failures``.
    """
    config = config or RunConfig()
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("ratio grid must not be empty")
    cases = list(cases)
    if not cases:
        raise ValueError("need at least one case")
    failures = {}
    errors = {g: [] for g in grid}
    for i, (mask, rim, truth) in enumerate(cases):
        try:
            prep = prepare_case(mask, rim, config)
            per_case = [abs(measure_prepared(prep, config, g).bone_loss_pct - truth) for g in grid]
        except StageError as exc:
            if not allow_failures:
                raise
            failures[i] = str(exc)
            continue
        for g, e in zip(grid, per_case):
            errors[g].append(e)
    if not errors[grid[0]]:
        raise StageError("tune", "every case failed")
    curve = [(g, float(np.mean(errors[g]))) for g in grid]
    best = min(curve, key=lambda item: item[1])[0]
    return RatioTuning(best, curve, failures)
