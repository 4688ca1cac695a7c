"""Grid geometry primitives shared by the whole pipeline.

Coordinates are continuous grid units: a point ``(x, y)`` lives in
``[0, width-1] x [0, height-1]`` and ``(i, j)`` indexes ``values[j, i]``
(row-major, y is the row axis).  Grid spacing is fixed at 1; physical
units are the caller's concern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERSECT_TOL = 1e-6


class GridError(ValueError):
    """Domain error raised by grid primitives (out of bounds, bad polygon)."""


@dataclass(frozen=True)
class ScalarField2D:
    """A real-valued function sampled on a regular grid.

    ``values`` has shape ``(height, width)``.  Extended-real fields
    (distance maps, impassability indicators) may hold ``+inf``; every
    other field must be finite.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise GridError("field must be at least 2x2")
        if np.isnan(v).any():
            raise GridError("field holds NaN")
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise GridError("point coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Polyline:
    """Ordered point sequence with sub-pixel coordinates.

    ``points`` has shape ``(n, 2)`` as ``(x, y)`` rows.  A closed polyline
    implicitly joins its last vertex back to the first (the first vertex
    is not duplicated).  Single-point polylines are allowed as degenerate
    paths (a backtrack that starts on its source).
    """

    points: np.ndarray
    closed: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
            raise GridError("polyline needs an (n, 2) point array")
        if not np.isfinite(pts).all():
            raise GridError("polyline holds non-finite coordinates")
        if len(pts) > 1:
            seg = np.diff(pts, axis=0)
            if (np.hypot(seg[:, 0], seg[:, 1]) == 0).any():
                raise GridError("consecutive polyline points must be distinct")
        if self.closed and len(pts) < 3:
            raise GridError("closed polyline needs at least 3 points")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Segment start/end arrays, including the closing segment."""
        pts = self.points
        if self.closed:
            return pts, np.roll(pts, -1, axis=0)
        return pts[:-1], pts[1:]

    def reversed(self) -> "Polyline":
        return Polyline(self.points[::-1].copy(), closed=self.closed)


@dataclass(frozen=True)
class GridMask:
    """Boolean occupancy per grid point, shape ``(height, width)``."""

    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise GridError("mask must be 2D")
        object.__setattr__(self, "mask", m)

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    def count(self) -> int:
        return int(self.mask.sum())


def bilinear_sample(field: ScalarField2D, p: Point2 | np.ndarray) -> float:
    """Bilinear interpolation of the four grid values surrounding ``p``."""
    x, y = (p.x, p.y) if isinstance(p, Point2) else (float(p[0]), float(p[1]))
    w, h = field.width, field.height
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise GridError(f"sample point ({x}, {y}) outside field bounds")
    x0 = min(int(np.floor(x)), w - 2)
    y0 = min(int(np.floor(y)), h - 2)
    fx, fy = x - x0, y - y0
    v = field.values
    return float(
        v[y0, x0] * (1 - fx) * (1 - fy)
        + v[y0, x0 + 1] * fx * (1 - fy)
        + v[y0 + 1, x0] * (1 - fx) * fy
        + v[y0 + 1, x0 + 1] * fx * fy
    )


def bilinear_sample_many(values: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Vectorized bilinear sampling; coordinates are clipped to the domain."""
    h, w = values.shape
    x = np.clip(xy[:, 0], 0.0, w - 1.0)
    y = np.clip(xy[:, 1], 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.intp), h - 2)
    fx, fy = x - x0, y - y0
    return (
        values[y0, x0] * (1 - fx) * (1 - fy)
        + values[y0, x0 + 1] * fx * (1 - fy)
        + values[y0 + 1, x0] * (1 - fx) * fy
        + values[y0 + 1, x0 + 1] * fx * fy
    )


def polyline_length(c: Polyline) -> float:
    """Sum of Euclidean segment lengths, closing segment included if closed."""
    if len(c) < 2:
        return 0.0
    a, b = c.segments()
    return float(np.hypot(*(b - a).T).sum())


def discrete_curvature(c: Polyline) -> np.ndarray:
    """Unsigned per-vertex curvature via the circumscribed-circle formula.

    Interior vertices use the Menger curvature of (prev, this, next);
    open-polyline endpoints copy their neighbor's value.  Collinear
    triples give 0.
    """
    pts = c.points
    n = len(pts)
    if n < 3:
        raise GridError("curvature needs at least 3 points")
    if c.closed:
        a, b, d = np.roll(pts, 1, axis=0), pts, np.roll(pts, -1, axis=0)
    else:
        a, b, d = pts[:-2], pts[1:-1], pts[2:]
    cross = (b[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (d[:, 0] - a[:, 0])
    lab = np.hypot(*(b - a).T)
    lbd = np.hypot(*(d - b).T)
    lad = np.hypot(*(d - a).T)
    denom = lab * lbd * lad
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(denom > 0, 2.0 * np.abs(cross) / np.where(denom > 0, denom, 1.0), 0.0)
    if c.closed:
        return kappa
    return np.concatenate([[kappa[0]], kappa, [kappa[-1]]])


def _segment_intersections(a0, a1, b0, b1, tol):
    """All intersection points between two segment batches (broadcast pair grid)."""
    # a0,a1: (n,2); b0,b1: (m,2) -> test all n*m pairs
    d1 = a1 - a0
    d2 = b1 - b0
    # cross products on the (n, m) pair grid
    denom = d1[:, None, 0] * d2[None, :, 1] - d1[:, None, 1] * d2[None, :, 0]
    diff = b0[None, :, :] - a0[:, None, :]
    t_num = diff[:, :, 0] * d2[None, :, 1] - diff[:, :, 1] * d2[None, :, 0]
    u_num = diff[:, :, 0] * d1[:, None, 1] - diff[:, :, 1] * d1[:, None, 0]
    pts = []
    len1 = np.hypot(d1[:, 0], d1[:, 1])
    len2 = np.hypot(d2[:, 0], d2[:, 1])
    scale = len1[:, None] * len2[None, :]
    nonpar = np.abs(denom) > tol * np.maximum(scale, 1.0)
    if nonpar.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(nonpar, t_num / np.where(nonpar, denom, 1.0), -1.0)
            u = np.where(nonpar, u_num / np.where(nonpar, denom, 1.0), -1.0)
        # tolerance in parameter space scaled to segment length keeps the
        # geometric tolerance at `tol` grid units
        eps_t = tol / np.maximum(len1[:, None], tol)
        eps_u = tol / np.maximum(len2[None, :], tol)
        hit = nonpar & (t >= -eps_t) & (t <= 1 + eps_t) & (u >= -eps_u) & (u <= 1 + eps_u)
        ii, jj = np.nonzero(hit)
        if len(ii):
            p = a0[ii] + t[ii, jj, None] * d1[ii]
            pts.append(p)
    # collinear overlapping pairs report the overlap's segment endpoints
    par = ~nonpar & (np.abs(t_num) <= tol * np.maximum(scale, 1.0))
    if par.any():
        ii, jj = np.nonzero(par)
        for i, j in zip(ii, jj):
            d = d1[i]
            ln = np.hypot(d[0], d[1])
            if ln == 0:
                continue
            u = d / ln
            s0, s1 = 0.0, ln
            q0 = float((b0[j] - a0[i]) @ u)
            q1 = float((b1[j] - a0[i]) @ u)
            lo, hi = max(s0, min(q0, q1)), min(s1, max(q0, q1))
            if lo <= hi + tol:
                pts.append(np.array([a0[i] + lo * u, a0[i] + hi * u]))
    if not pts:
        return np.empty((0, 2))
    return np.vstack(pts)


def polylines_intersect(a: Polyline, b: Polyline, tol: float = INTERSECT_TOL) -> list[Point2]:
    """All segment-segment intersection points of two polylines.

    Points within ``tol`` grid units of each other are reported once.
    Collinear overlaps contribute the overlap endpoints.  Touching within
    ``tol`` counts as intersecting (conservative, so a tangential contact
    is never silently missed).
    """
    if len(a) < 2 or len(b) < 2:
        return []
    a0, a1 = a.segments()
    b0, b1 = b.segments()
    # block the pair grid to bound memory on long polylines
    raw = []
    block = 512
    for i in range(0, len(a0), block):
        for j in range(0, len(b0), block):
            raw.append(
                _segment_intersections(
                    a0[i : i + block], a1[i : i + block], b0[j : j + block], b1[j : j + block], tol
                )
            )
    pts = np.vstack(raw)
    out: list[Point2] = []
    for p in pts:
        if all((p[0] - q.x) ** 2 + (p[1] - q.y) ** 2 > tol * tol for q in out):
            out.append(Point2(float(p[0]), float(p[1])))
    return out


def count_crossings(a: Polyline, b: Polyline, tol: float = INTERSECT_TOL) -> int:
    return len(polylines_intersect(a, b, tol))


def point_in_polygon(p: Point2, c: Polyline, boundary_tol: float = INTERSECT_TOL) -> bool:
    """Even-odd crossing test; points on the boundary count as inside."""
    if not c.closed:
        raise GridError("point_in_polygon needs a closed polyline")
    pts = c.points
    x, y = p.x, p.y
    a, b = c.segments()
    # boundary proximity check (inclusive convention)
    d = b - a
    ln2 = (d * d).sum(axis=1)
    t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / np.where(ln2 > 0, ln2, 1.0), 0, 1)
    proj = a + t[:, None] * d
    dist2 = (proj[:, 0] - x) ** 2 + (proj[:, 1] - y) ** 2
    if (dist2 <= boundary_tol * boundary_tol).any():
        return True
    ya, yb = a[:, 1], b[:, 1]
    # half-open rule avoids double counting at vertices
    cond = (ya <= y) != (yb <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = a[:, 0] + (y - ya) / np.where(cond, yb - ya, 1.0) * (b[:, 0] - a[:, 0])
    crossings = int((cond & (xs > x)).sum())
    return crossings % 2 == 1


def polyline_is_simple(c: Polyline) -> bool:
    """True if no two non-adjacent segments of the polyline intersect."""
    a0, a1 = c.segments()
    n = len(a0)
    if n < 3:
        return True
    d = a1 - a0
    for i in range(n - 1):
        js = np.arange(i + 1, n)
        # skip the shared-vertex neighbor (and the wrap pair for closed lines)
        js = js[js != i + 1]
        if c.closed and i == 0:
            js = js[js != n - 1]
        if len(js) == 0:
            continue
        denom = d[i, 0] * d[js, 1] - d[i, 1] * d[js, 0]
        diff = a0[js] - a0[i]
        t_num = diff[:, 0] * d[js, 1] - diff[:, 1] * d[js, 0]
        u_num = diff[:, 0] * d[i, 1] - diff[:, 1] * d[i, 0]
        nonpar = np.abs(denom) > 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(nonpar, t_num / np.where(nonpar, denom, 1.0), 2.0)
            u = np.where(nonpar, u_num / np.where(nonpar, denom, 1.0), 2.0)
        eps = 1e-9
        if (nonpar & (t > eps) & (t < 1 - eps) & (u > eps) & (u < 1 - eps)).any():
            return False
        # collinear overlap of positive length counts as non-simple
        par = ~nonpar & (np.abs(t_num) <= 1e-9)
        if par.any():
            ln = np.hypot(d[i, 0], d[i, 1])
            if ln > 0:
                u_hat = d[i] / ln
                for j in js[np.nonzero(par)[0]]:
                    q0 = float((a0[j] - a0[i]) @ u_hat)
                    q1 = float((a1[j] - a0[i]) @ u_hat)
                    lo, hi = max(0.0, min(q0, q1)), min(ln, max(q0, q1))
                    if hi - lo > 1e-9:
                        return False
    return True


def rasterize_polygon(c: Polyline, width: int, height: int) -> GridMask:
    """Set grid points whose centers lie inside or on the closed polygon.

    Scanline even-odd fill plus an explicit boundary stamp, matching the
    inclusive point_in_polygon convention.
    """
    if not c.closed:
        raise GridError("rasterize_polygon needs a closed polyline")
    if not polyline_is_simple(c):
        raise GridError("rasterize_polygon needs a simple polygon")
    mask = np.zeros((height, width), dtype=bool)
    a, b = c.segments()
    ya, yb = a[:, 1], b[:, 1]
    for row in range(height):
        y = float(row)
        cond = (ya <= y) != (yb <= y)
        if not cond.any():
            continue
        t = (y - ya[cond]) / (yb[cond] - ya[cond])
        xs = np.sort(a[cond, 0] + t * (b[cond, 0] - a[cond, 0]))
        for k in range(0, len(xs) - 1, 2):
            lo = int(np.ceil(xs[k] - INTERSECT_TOL))
            hi = int(np.floor(xs[k + 1] + INTERSECT_TOL))
            if hi >= lo:
                mask[row, max(lo, 0) : min(hi, width - 1) + 1] = True
    # stamp boundary cells whose centers sit on an edge within tolerance
    for (x0, y0), (x1, y1) in zip(a, b):
        steps = max(int(np.ceil(max(abs(x1 - x0), abs(y1 - y0)) * 2)), 1)
        t = np.linspace(0.0, 1.0, steps + 1)
        px = x0 + t * (x1 - x0)
        py = y0 + t * (y1 - y0)
        ix = np.round(px).astype(int)
        iy = np.round(py).astype(int)
        near = (np.abs(px - ix) < 1e-9) & (np.abs(py - iy) < 1e-9)
        ok = near & (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
        mask[iy[ok], ix[ok]] = True
    return GridMask(mask)
