"""3-D point sets in millimetres and their JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MaskFormatError
from .io_utils import atomic_write_text


@dataclass(frozen=True, eq=False)
class PointSet3:
    """An ``(N, 3)`` array of points in mm.

    ``ordered`` marks polylines (landmark curves); skeleton clouds are unordered.
    """

    points: np.ndarray
    ordered: bool = False

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointSet3):
            return NotImplemented
        return self.ordered == other.ordered and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.points.tobytes(), self.ordered))


def as_points(points) -> np.ndarray:
    """Return an ``(N, 3)`` float array from a PointSet3 or array-like."""
    if isinstance(points, PointSet3):
        return points.points
    return np.asarray(points, dtype=float).reshape(-1, 3)


def write_points(points: PointSet3, path) -> None:
    doc = {
        "points_mm": [[float(c) for c in p] for p in points.points],
        "ordered": bool(points.ordered),
    }
    atomic_write_text(Path(path), json.dumps(doc, indent=1) + "\n")


def read_points(path) -> PointSet3:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MaskFormatError(f"malformed point-set file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "points_mm" not in doc:
        raise MaskFormatError(f"{path}: missing 'points_mm'")
    pts = np.asarray(doc["points_mm"], dtype=float)
    if pts.size and (pts.ndim != 2 or pts.shape[1] != 3):
        raise MaskFormatError(f"{path}: 'points_mm' must be a list of [x, y, z]")
    return PointSet3(pts.reshape(-1, 3), ordered=bool(doc.get("ordered", False)))
