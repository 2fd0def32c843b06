from __future__ import annotations

from dataclasses import asdict, dataclass, fields

LATERALITIES = ("Left", "Right")


@dataclass(frozen=True)
class RunConfig:
    """Run parameters; echoed into every report for provenance."""

    diameter_ratio: float = 0.6955
    heatmap_threshold: float = 0.3
    angular_step_deg: float = 0.5
    sigma_mm: float = 1.0
    tube_radius_mm: float = 1.0
    resample_n: int = 30
    cutoffs: tuple = (13.5, 20.0)
    laterality: str = "Left"
    constrained: bool = True
    # None -> half the finest voxel spacing
    raster_cell_mm: float | None = None
    closing_radius: int = 2

    def __post_init__(self):
        if self.laterality not in LATERALITIES:
            raise ValueError(f"laterality must be one of {LATERALITIES}, got {self.laterality!r}")
        lo, hi = self.cutoffs
        if not lo < hi:
            raise ValueError("cutoffs must be increasing")
        object.__setattr__(self, "cutoffs", (float(lo), float(hi)))
        if not 0 < self.heatmap_threshold < 1:
            raise ValueError("heatmap_threshold must lie in (0, 1)")
        if self.diameter_ratio <= 0:
            raise ValueError("diameter_ratio must be positive")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["cutoffs"] = list(self.cutoffs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "cutoffs" in kwargs:
            kwargs["cutoffs"] = tuple(kwargs["cutoffs"])
        return cls(**kwargs)
