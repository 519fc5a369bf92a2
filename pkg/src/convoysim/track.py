"""Reference paths, projection onto them, the lap speed profile and RMSE."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, GeometryError

DEFAULT_SPACING = 0.02


@dataclass(frozen=True, eq=False)
class Path:
    """Polyline samples with headings and cumulative arc length.

    For closed paths the last sample is not repeated; the closing segment runs
    from ``x[-1]`` back to ``x[0]`` and ``total_length`` includes it.
    """

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    s: np.ndarray
    closed: bool
    total_length: float

    def __len__(self):
        return len(self.s)

    def wrap(self, s: float) -> float:
        return s % self.total_length if self.closed else s

    def along_distance(self, s_from: float, s_to: float) -> float:
        """Forward distance from ``s_from`` to ``s_to`` (modulo the lap for closed paths)."""
        d = s_to - s_from
        return d % self.total_length if self.closed else d

    def point_at(self, s: float) -> tuple[float, float, float]:
        """Interpolated (x, y, heading) at arc length ``s``."""
        s = self.wrap(s)
        i = int(np.searchsorted(self.s, s, side="right")) - 1
        i = min(max(i, 0), len(self.s) - 1)
        j = (i + 1) % len(self.s) if self.closed else min(i + 1, len(self.s) - 1)
        s_end = self.s[j] if j > i else self.total_length
        seg = s_end - self.s[i]
        u = 0.0 if seg <= 0 else (s - self.s[i]) / seg
        return (float(self.x[i] + u * (self.x[j] - self.x[i])),
                float(self.y[i] + u * (self.y[j] - self.y[i])),
                _lerp_angle(self.heading[i], self.heading[j], u))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("s,x,y,heading\n")
        for s, x, y, h in zip(self.s, self.x, self.y, self.heading):
            buf.write(f"{s:.6f},{x:.6f},{y:.6f},{h:.6f}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class PathQuery:
    x: float
    y: float
    s: float
    cross_track: float   # positive when the query point is left of the tangent
    heading: float


def _lerp_angle(a: float, b: float, u: float) -> float:
    d = math.remainder(b - a, 2.0 * math.pi)
    return math.remainder(a + u * d, 2.0 * math.pi)


def oval_path(length: float = 8.0, width: float = 4.0, spacing: float = DEFAULT_SPACING) -> Path:
    """Counter-clockwise stadium centred on the origin.

    Straights run along x at y = -width/2 and y = +width/2, joined by
    semicircles of radius width/2. Arc length starts at the middle of the
    bottom straight, heading +x.
    """
    if not (width > 0 and length > width):
        raise GeometryError(f"need length > width > 0, got {length} x {width}")
    if not spacing > 0:
        raise GeometryError("spacing must be > 0")
    r = width / 2.0
    half = (length - width) / 2.0
    straight = length - width
    arc = math.pi * r
    total = 2.0 * straight + 2.0 * arc
    n = math.ceil(total / spacing)
    s = np.arange(n) * (total / n)

    # Piece boundaries measured from the start point (0, -r).
    b1 = half                    # end of bottom-right half straight
    b2 = b1 + arc                # end of right semicircle
    b3 = b2 + straight           # end of top straight
    b4 = b3 + arc                # end of left semicircle

    x = np.empty(n)
    y = np.empty(n)
    h = np.empty(n)
    for k, sk in enumerate(s):
        if sk < b1:
            x[k], y[k], h[k] = sk, -r, 0.0
        elif sk < b2:
            phi = -math.pi / 2 + (sk - b1) / r
            x[k], y[k], h[k] = half + r * math.cos(phi), r * math.sin(phi), phi + math.pi / 2
        elif sk < b3:
            x[k], y[k], h[k] = half - (sk - b2), r, math.pi
        elif sk < b4:
            phi = math.pi / 2 + (sk - b3) / r
            x[k], y[k], h[k] = -half + r * math.cos(phi), r * math.sin(phi), phi + math.pi / 2
        else:
            x[k], y[k], h[k] = -half + (sk - b4), -r, 0.0
    h = np.array([math.remainder(v, 2.0 * math.pi) for v in h])
    return Path(x, y, h, s, True, total)


def straight_path(length: float, spacing: float = DEFAULT_SPACING, heading: float = 0.0) -> Path:
    if not (length > 0 and spacing > 0):
        raise GeometryError("length and spacing must be > 0")
    n = math.ceil(length / spacing) + 1
    s = np.linspace(0.0, length, n)
    return Path(s * math.cos(heading), s * math.sin(heading), np.full(n, heading), s, False, float(length))


def _project(path: Path, i: int, px: float, py: float):
    """Project onto the segment starting at sample i; None if it does not exist."""
    n = len(path)
    j = i + 1
    if j >= n:
        if not path.closed:
            return None
        j = 0
    x0, y0 = path.x[i], path.y[i]
    dx, dy = path.x[j] - x0, path.y[j] - y0
    seg2 = dx * dx + dy * dy
    u = 0.0 if seg2 == 0 else min(1.0, max(0.0, ((px - x0) * dx + (py - y0) * dy) / seg2))
    qx, qy = x0 + u * dx, y0 + u * dy
    s_end = path.s[j] if j > i else path.total_length
    s = path.s[i] + u * (s_end - path.s[i])
    return (px - qx) ** 2 + (py - qy) ** 2, s, qx, qy, i, j, u


def nearest(path: Path, x: float, y: float) -> PathQuery:
    """Closest point on the polyline, refined on the two segments around the nearest sample."""
    if len(path) == 0:
        raise ContractError("path is empty")
    d2 = (path.x - x) ** 2 + (path.y - y) ** 2
    k = int(np.argmin(d2))   # first minimum: smallest s among tied samples
    n = len(path)
    candidates = []
    prev = k - 1 if k > 0 else (n - 1 if path.closed else None)
    for i in (prev, k):
        if i is not None:
            c = _project(path, i, x, y)
            if c is not None:
                candidates.append(c)
    if not candidates:
        dist2, s, qx, qy, i, j, u = float(d2[k]), float(path.s[k]), path.x[k], path.y[k], k, k, 0.0
    else:
        dist2, s, qx, qy, i, j, u = min(candidates, key=lambda c: (c[0], path.wrap(c[1])))
    heading = _lerp_angle(path.heading[i], path.heading[j], u)
    # left of the tangent is positive
    side = math.cos(heading) * (y - qy) - math.sin(heading) * (x - qx)
    dist = math.sqrt(dist2)
    cross = math.copysign(dist, side) if dist > 0 else 0.0
    return PathQuery(float(qx), float(qy), path.wrap(float(s)), cross, heading)


def speed_profile(distance: float, path: Path, first: float = 1.0, after: float = 2.0) -> float:
    """Lap speed schedule keyed on cumulative distance travelled (not wrapped)."""
    return first if distance < path.total_length / 2.0 else after


def rmse(values) -> float:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ContractError("rmse of an empty series")
    if not np.all(np.isfinite(arr)):
        raise ContractError("rmse input contains non-finite values")
    return float(np.sqrt(np.mean(arr * arr)))


def read_path_csv(text: str) -> Path:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("path CSV has no rows")
    cols = {k: np.array([float(r[k]) for r in rows]) for k in ("s", "x", "y", "heading")}
    dx = cols["x"][0] - cols["x"][-1]
    dy = cols["y"][0] - cols["y"][-1]
    closing = math.hypot(dx, dy)
    step = float(np.max(np.diff(cols["s"]))) if len(rows) > 1 else 0.0
    closed = len(rows) > 2 and closing <= 1.5 * step
    total = float(cols["s"][-1] + (closing if closed else 0.0))
    return Path(cols["x"], cols["y"], cols["heading"], cols["s"], closed, total)
