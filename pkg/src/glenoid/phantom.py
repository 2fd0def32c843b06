"""Synthetic glenoid phantoms with analytically known bone loss.

Profile frame (before orientation): the inferior circle of radius ``R`` is
centred at the origin, ``+x`` points anteriorly (3 o'clock), ``+y``
superiorly, and the articular surface faces ``+z``. The outline is the
convex hull of that circle and a superior lobe of radius ``0.75 R``, placed
so the total height is ``2 R / height_ratio``. A half-plane chord defect
sits at distance ``R - B`` from the centre (``B = defect_pct / 100 * 2R``).
An optional paraboloid cup pushes the articular layer down by up to
``cup_depth_mm``, reproducing cavitary erosion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import GeometryError
from .geometry import fit_plane
from .io_utils import atomic_write_text
from .metrics import angular_error
from .points import PointSet3, write_points
from .volume import VoxelMask, flip_points_sagittal, flip_sagittal, principal_axes, write_mask

LOBE_SCALE = 0.75
MARGIN_VOX = 3
MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seeds(master: int, n: int) -> list:
    # the reference splitmix64 stream seeded with ``master``
    state = master & MASK64
    seeds = []
    for _ in range(n):
        seeds.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) & MASK64
    return seeds


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True, eq=False)
class PhantomSpec:
    radius_mm: float = 12.0
    defect_pct: float = 0.0
    defect_angle_deg: float = 0.0
    plate_thickness_mm: float = 2.0
    cup_depth_mm: float = 0.0
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    spacing_mm: float = 0.5
    rng_seed: int = 0
    height_ratio: float = 0.6955
    # profile-frame cup centre; None puts it on the outline's area centroid
    cup_center_mm: tuple | None = None
    cup_radius_mm: float | None = None
    rim_step_deg: float = 2.0

    def __post_init__(self):
        rot = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
            raise ValueError("orientation must be a proper rotation matrix")
        object.__setattr__(self, "orientation", rot)
        if not 10.0 <= self.radius_mm <= 16.0:
            raise ValueError("radius_mm must lie in [10, 16]")
        if not 1.0 <= self.plate_thickness_mm <= 3.0:
            raise ValueError("plate_thickness_mm must lie in [1, 3]")
        if self.cup_depth_mm < 0:
            raise ValueError("cup_depth_mm must be non-negative")
        if self.defect_pct < 0:
            raise ValueError("defect_pct must be non-negative")
        if self.defect_pct >= 50:
            raise GeometryError("defect_pct >= 50 crosses the circle centre")
        if self.spacing_mm <= 0 or self.spacing_mm > self.radius_mm / 10.0:
            raise GeometryError("spacing too coarse")
        if not 0 < self.height_ratio < 1:
            raise ValueError("height_ratio must lie in (0, 1)")

    @property
    def defect_mm(self) -> float:
        return self.defect_pct / 100.0 * 2.0 * self.radius_mm

    @property
    def height_mm(self) -> float:
        return 2.0 * self.radius_mm / self.height_ratio

    @property
    def lobe_offset_mm(self) -> float:
        return self.height_mm - (1.0 + LOBE_SCALE) * self.radius_mm

    @property
    def defect_direction(self) -> np.ndarray:
        a = np.radians(self.defect_angle_deg)
        return np.array([np.cos(a), np.sin(a)])


@dataclass(frozen=True, eq=False)
class PhantomCase:
    spec: PhantomSpec
    mask: VoxelMask
    rim_truth: PointSet3
    normal_truth: np.ndarray
    bone_loss_truth_pct: float
    height_truth_mm: float
    circle_center_mm: np.ndarray
    laterality: str = "Left"


def inside_outline(x, y, spec: PhantomSpec) -> np.ndarray:
    """Inside the convex hull of the inferior circle and the superior lobe."""
    r = spec.radius_mm
    s = spec.lobe_offset_mm
    k = (1.0 - LOBE_SCALE) * r
    q = k / s
    w = q * np.abs(x) / np.sqrt(1.0 - q * q)
    t = np.clip((y - w) / s, 0.0, 1.0)
    return np.hypot(x, y - t * s) <= r - k * t


def intact(x, y, spec: PhantomSpec) -> np.ndarray:
    d = spec.defect_direction
    return x * d[0] + y * d[1] <= spec.radius_mm - spec.defect_mm


def outline_centroid(spec: PhantomSpec) -> np.ndarray:
    step = spec.spacing_mm / 4.0
    r = spec.radius_mm
    xs = np.arange(-r, r + step, step)
    ys = np.arange(-r, spec.height_mm - r + step, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    inside = inside_outline(gx, gy, spec) & intact(gx, gy, spec)
    return np.array([gx[inside].mean(), gy[inside].mean()])


def _cup_geometry(spec: PhantomSpec):
    center = outline_centroid(spec) if spec.cup_center_mm is None else np.asarray(spec.cup_center_mm, float)
    radius = 0.5 * spec.radius_mm if spec.cup_radius_mm is None else float(spec.cup_radius_mm)
    return center, radius


def cup_displacement(x, y, spec: PhantomSpec, cup=None) -> np.ndarray:
    if spec.cup_depth_mm == 0:
        return np.zeros(np.broadcast(x, y).shape)
    center, radius = cup if cup is not None else _cup_geometry(spec)
    rho2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    return spec.cup_depth_mm * np.maximum(0.0, 1.0 - rho2 / radius ** 2)


def _rim_profile(spec: PhantomSpec, cup) -> np.ndarray:
    rng = np.random.default_rng(spec.rng_seed)
    phase = rng.uniform(0.0, spec.rim_step_deg)
    phi = -np.arange(phase, 180.0 + 1e-9, spec.rim_step_deg)
    phi = np.radians(phi)
    x = spec.radius_mm * np.cos(phi)
    y = spec.radius_mm * np.sin(phi)
    keep = (x * spec.defect_direction[0] + y * spec.defect_direction[1]) < spec.radius_mm - spec.defect_mm
    x, y = x[keep], y[keep]
    z = spec.plate_thickness_mm - cup_displacement(x, y, spec, cup)
    return np.column_stack([x, y, z])


def generate(spec: PhantomSpec) -> PhantomCase:
    """Voxelise the phantom by voxel-centre inclusion and sample its rim arc."""
    rot = spec.orientation
    r = spec.radius_mm
    cup = _cup_geometry(spec) if spec.cup_depth_mm > 0 else None
    lo_p = np.array([-r, -r, -spec.cup_depth_mm])
    hi_p = np.array([r, spec.height_mm - r, spec.plate_thickness_mm])
    corners = np.array([[a, b, c] for a in (lo_p[0], hi_p[0]) for b in (lo_p[1], hi_p[1])
                        for c in (lo_p[2], hi_p[2])])
    world = corners @ rot.T
    h = spec.spacing_mm
    trans = -world.min(axis=0) + MARGIN_VOX * h
    dims = tuple(int(np.ceil(e / h)) + 2 * MARGIN_VOX + 1 for e in world.max(axis=0) - world.min(axis=0))

    axes = [np.arange(n) * h for n in dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx - trans[0], gy - trans[1], gz - trans[2]], axis=-1)
    local = pts @ rot
    x, y, z = local[..., 0], local[..., 1], local[..., 2]
    solid = inside_outline(x, y, spec) & intact(x, y, spec)
    disp = cup_displacement(x, y, spec, cup)
    solid &= (z >= -disp) & (z <= spec.plate_thickness_mm - disp)
    mask = VoxelMask(solid.astype(np.uint8), (h, h, h), "native")

    rim = _rim_profile(spec, cup) @ rot.T + trans
    return PhantomCase(
        spec=spec,
        mask=mask,
        rim_truth=PointSet3(rim, ordered=True),
        normal_truth=rot[:, 2].copy(),
        bone_loss_truth_pct=float(spec.defect_pct),
        height_truth_mm=spec.height_mm,
        circle_center_mm=trans.copy(),
    )


def mirror_case(case: PhantomCase) -> PhantomCase:
    """Right-shoulder twin: mask and rim mirrored across the sagittal plane."""
    normal = case.normal_truth.copy()
    normal[0] = -normal[0]
    center = flip_points_sagittal(case.circle_center_mm[None, :], case.mask).points[0]
    return replace(
        case,
        mask=flip_sagittal(case.mask),
        rim_truth=flip_points_sagittal(case.rim_truth, case.mask),
        normal_truth=normal,
        circle_center_mm=center,
        laterality="Right" if case.laterality == "Left" else "Left",
    )


def random_specs(n: int, seed: int = 42, spacing_mm: float = 0.5, defect_range=(0.0, 35.0),
                 cup: bool = False, height_ratio: float = 0.6955) -> list:
    """``n`` random phantom specs; each case draws from its own splitmix-derived seed.

    Cupped phantoms get an offset (anterior-superior) cup of depth twice the
    plate thickness.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    lo, hi = defect_range
    specs = []
    for child in child_seeds(seed, n):
        rng = np.random.default_rng(child)
        radius = rng.uniform(10.0, 16.0)
        thickness = rng.uniform(1.0, 3.0)
        kwargs = dict(
            radius_mm=radius,
            defect_pct=rng.uniform(lo, hi),
            defect_angle_deg=rng.uniform(-15.0, 15.0),
            plate_thickness_mm=thickness,
            orientation=random_rotation(rng),
            spacing_mm=spacing_mm,
            rng_seed=int(rng.integers(2**31)),
            height_ratio=height_ratio,
        )
        if cup:
            beta = np.radians(rng.uniform(20.0, 70.0))
            kwargs.update(
                cup_depth_mm=2.0 * thickness,
                cup_center_mm=(0.35 * radius * np.cos(beta), 0.35 * radius * np.sin(beta)),
                cup_radius_mm=0.6 * radius,
            )
        specs.append(PhantomSpec(**kwargs))
    return specs


def pca_vs_rim_normal(case: PhantomCase) -> dict:
    """Angular error of the whole-mask PCA normal and of the rim-plane normal."""
    _, axes, _ = principal_axes(case.mask.foreground_mm())
    pca_normal = axes[:, 2]
    rim_normal = fit_plane(case.rim_truth).normal
    return {
        "pca_angular_err_deg": angular_error(pca_normal, case.normal_truth),
        "rim_angular_err_deg": angular_error(rim_normal, case.normal_truth),
    }


def write_cases(cases, out_dir) -> Path:
    """Write ``case_XXX_mask.{json,raw}``, ``case_XXX_rim.json`` and ``truth.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, case in enumerate(cases):
        cid = f"case_{i:03d}"
        write_mask(case.mask, out_dir / f"{cid}_mask")
        write_points(case.rim_truth, out_dir / f"{cid}_rim.json")
        normal = " ".join(repr(float(c)) for c in case.normal_truth)
        rows.append([cid, repr(float(case.bone_loss_truth_pct)), normal,
                     repr(float(case.height_truth_mm)), case.laterality])
    lines = ["case_id,bone_loss_truth_pct,normal_truth,height_truth,laterality"]
    lines += [",".join(r) for r in rows]
    atomic_write_text(out_dir / "truth.csv", "\n".join(lines) + "\n")
    return out_dir / "truth.csv"


def read_truth(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["bone_loss_truth_pct"] = float(row["bone_loss_truth_pct"])
        row["normal_truth"] = np.array([float(v) for v in row["normal_truth"].split()])
        row["height_truth"] = float(row["height_truth"])
    return rows
