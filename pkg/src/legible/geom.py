"""Piecewise-linear paths, arc-length resampling and viewpoint projection.

Points are plain ``numpy`` arrays: a path or trajectory is an ``(n, 3)``
float64 array, a single point is a length-3 array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_POINTS = 100


class GeometryError(ValueError):
    pass


class DegeneratePath(GeometryError):
    pass


class InvalidCount(GeometryError):
    pass


class DegenerateViewpoint(GeometryError):
    pass


def as_path(points) -> np.ndarray:
    path = np.asarray(points, dtype=np.float64)
    if path.ndim != 2 or path.shape[0] < 2:
        raise DegeneratePath(f"a path needs at least two waypoints, got shape {path.shape}")
    if not np.all(np.isfinite(path)):
        raise DegeneratePath("path contains non-finite coordinates")
    return path


def segment_lengths(path: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(path, axis=0), axis=1)


def arc_length(path) -> float:
    """Total Euclidean length of a piecewise-linear path.

    Raises:
        DegeneratePath: if every waypoint coincides.
    """
    path = as_path(path)
    total = float(np.sum(segment_lengths(path)))
    if total <= 0.0:
        raise DegeneratePath("path has zero arc length")
    return total


def resample_uniform(path, n: int = N_POINTS) -> np.ndarray:
    """Place ``n`` points at equal arc-length intervals along ``path``.

    Point ``k`` sits at arc-length fraction ``k / (n - 1)``, linearly
    interpolated inside the segment that contains it. Corners are not
    forced into the output and zero-length segments are skipped. The first
    and last output points are copies of the path endpoints.
    """
    if int(n) != n or n < 2:
        raise InvalidCount(f"need at least 2 output points, got {n}")
    n = int(n)
    path = as_path(path)
    seg = segment_lengths(path)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = cum[-1]
    if total <= 0.0:
        raise DegeneratePath("path has zero arc length")

    targets = total * (np.arange(n, dtype=np.float64) / (n - 1))
    # side="right" lands on the last of several equal cumulative values,
    # i.e. past any zero-length segment
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    seg_idx = seg[idx]
    safe = np.where(seg_idx > 0.0, seg_idx, 1.0)
    frac = np.where(seg_idx > 0.0, (targets - cum[idx]) / safe, 0.0)
    frac = np.clip(frac, 0.0, 1.0)

    out = path[idx] + frac[:, None] * (path[idx + 1] - path[idx])
    out[0] = path[0]
    out[-1] = path[-1]
    return out


@dataclass(frozen=True)
class Viewpoint:
    """An orthographic observer: eye position, look-at target and up vector."""

    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(d, e1, e2)``: view direction and the two image axes."""
        eye = np.asarray(self.eye, dtype=np.float64)
        d = np.asarray(self.look_at, dtype=np.float64) - eye
        norm_d = np.linalg.norm(d)
        if not np.isfinite(norm_d) or norm_d == 0.0:
            raise DegenerateViewpoint("eye and look_at coincide")
        d = d / norm_d
        side = np.cross(d, np.asarray(self.up, dtype=np.float64))
        norm_side = np.linalg.norm(side)
        if norm_side < 1e-12:
            raise DegenerateViewpoint("up vector is parallel to the view direction")
        e1 = side / norm_side
        e2 = np.cross(d, e1)
        return d, e1, e2

    def translated(self, offset) -> "Viewpoint":
        offset = np.asarray(offset, dtype=np.float64)
        return Viewpoint(
            eye=tuple(np.asarray(self.eye) + offset),
            look_at=tuple(np.asarray(self.look_at) + offset),
            up=self.up,
        )

    def to_dict(self) -> dict:
        return {"eye": list(self.eye), "look_at": list(self.look_at), "up": list(self.up)}

    @classmethod
    def from_dict(cls, d: dict) -> "Viewpoint":
        return cls(
            eye=tuple(float(v) for v in d["eye"]),
            look_at=tuple(float(v) for v in d["look_at"]),
            up=tuple(float(v) for v in d.get("up", (0.0, 0.0, 1.0))),
        )


def project_viewpoint(points, vp: Viewpoint) -> np.ndarray:
    """Orthographically project 3-D points onto the observer's image plane.

    Each point ``p`` maps to ``((p - eye) . e1, (p - eye) . e2)``.
    """
    _, e1, e2 = vp.basis()
    rel = np.asarray(points, dtype=np.float64) - np.asarray(vp.eye, dtype=np.float64)
    return np.stack([rel @ e1, rel @ e2], axis=-1)
