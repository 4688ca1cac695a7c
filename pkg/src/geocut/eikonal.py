"""Isotropic Eikonal solver with point or curve sources.

Solves ||grad U|| = psi by causal front propagation.  The update stencil
is semi-Lagrangian over the 8-neighbor ring: candidate moves are hops
from accepted neighbors (cost = average of the two endpoint potentials
times the hop length) plus interpolated moves from the segments joining
adjacent ring neighbors.  Hop costs therefore match the 8-connected
graph relaxation exactly, which keeps the solution bounded above by the
discrete Dijkstra distance, while the interpolated moves recover grid-
direction-independent accuracy.

The priority queue is a bucket (Dial) queue: every move costs at least
the minimum finite potential, so accepting one bucket-width band at a
time preserves causality and lets each band be processed with vectorized
array updates instead of per-node heap operations.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .grid import GridError, GridMask, Point2, Polyline, ScalarField2D, bilinear_sample_many

_BIG = 1e100
_BIG_CUT = 1e50

# ring order: alternating axis / diagonal neighbors
_RING_DX = np.array([1, 1, 0, -1, -1, -1, 0, 1])
_RING_DY = np.array([0, 1, 1, 1, 0, -1, -1, -1])
_RING_DIST = np.hypot(_RING_DX, _RING_DY)

# interpolation samples along ring segments; t is the weight of the
# diagonal endpoint, so the move length is sqrt(1 + t^2)
_T = np.linspace(0.0, 1.0, 17)
_T_DIST = np.sqrt(1.0 + _T * _T)


class EikonalError(GridError):
    pass


@dataclass(frozen=True)
class SourceSet:
    """Zero-distance seed: a snapped point or a set of grid points."""

    points: np.ndarray  # (k, 2) int array of (x, y)

    @staticmethod
    def from_point(p: Point2, width: int, height: int) -> "SourceSet":
        ix, iy = int(round(p.x)), int(round(p.y))
        if not (0 <= ix < width and 0 <= iy < height):
            raise EikonalError("source point outside domain")
        return SourceSet(np.array([[ix, iy]], dtype=np.intp))

    @staticmethod
    def from_mask(mask: GridMask) -> "SourceSet":
        ys, xs = np.nonzero(mask.mask)
        if len(xs) == 0:
            raise EikonalError("empty source set")
        return SourceSet(np.column_stack([xs, ys]).astype(np.intp))

    @staticmethod
    def coerce(src, width: int, height: int) -> "SourceSet":
        if isinstance(src, SourceSet):
            return src
        if isinstance(src, Point2):
            return SourceSet.from_point(src, width, height)
        if isinstance(src, GridMask):
            return SourceSet.from_mask(src)
        pts = np.asarray(src)
        if pts.ndim == 1:
            pts = pts[None, :]
        return SourceSet(np.round(pts).astype(np.intp))


@dataclass(frozen=True)
class DistanceMap:
    U: ScalarField2D            # +inf on unreached points
    accepted: GridMask
    source: SourceSet
    band_ranges: list           # (min, max) accepted value per band, in order

    @property
    def width(self) -> int:
        return self.U.width

    @property
    def height(self) -> int:
        return self.U.height


def _batch_update(P, U, acc, psi_flat, w):
    """Best tentative value for each candidate index in P."""
    n = len(P)
    px = P % w
    py = P // w
    h = len(psi_flat) // w
    psi_p = psi_flat[P]
    best = np.full(n, np.inf)

    u_nb = np.empty((8, n))
    psi_nb = np.empty((8, n))
    for k in range(8):
        nx = px + _RING_DX[k]
        ny = py + _RING_DY[k]
        ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
        idx = np.where(ok, ny * w + nx, 0)
        uk = np.where(ok & acc[idx], U[idx], _BIG)
        pk = np.where(ok, psi_flat[idx], _BIG)
        u_nb[k] = np.where(np.isfinite(uk), uk, _BIG)
        psi_nb[k] = np.where(np.isfinite(pk), pk, _BIG)
        # direct hop from an accepted neighbor: averaged-potential cost
        best = np.minimum(best, uk + 0.5 * (pk + psi_p) * _RING_DIST[k])

    # interpolated moves along ring segments (axis neighbor k_ax, diagonal k_dg)
    for k in range(8):
        k2 = (k + 1) % 8
        k_dg, k_ax = (k, k2) if k % 2 == 1 else (k2, k)
        u_ax, u_dg = u_nb[k_ax], u_nb[k_dg]
        p_ax, p_dg = psi_nb[k_ax], psi_nb[k_dg]
        usable = (u_ax < _BIG_CUT) & (u_dg < _BIG_CUT)
        if not usable.any():
            continue
        ua, ud = u_ax[usable], u_dg[usable]
        pa, pd = p_ax[usable], p_dg[usable]
        pp = psi_p[usable]
        # (m, 17): interpolated upwind value plus averaged-potential move cost
        cost = (
            ua[:, None] * (1 - _T) + ud[:, None] * _T
            + 0.5 * (pa[:, None] * (1 - _T) + pd[:, None] * _T + pp[:, None]) * _T_DIST
        )
        sub = best[usable]
        np.minimum(sub, cost.min(axis=1), out=sub)
        best[usable] = sub

    return np.where(best < _BIG_CUT, best, np.inf)


def fast_march(
    psi: ScalarField2D,
    src,
    stop: float | None = None,
    stop_targets: GridMask | None = None,
    stop_margin: float = 4.0,
) -> DistanceMap:
    """Propagate geodesic distance from the source under potential psi.

    psi must be positive; +inf marks impassable points that the front
    never enters.  If ``stop`` is set, propagation halts once the
    smallest tentative value exceeds it (already-accepted values are
    identical to an unstopped run).  If ``stop_targets`` is set, the
    front runs until the first target point is accepted and then for an
    extra ``stop_margin`` of distance, so backtracking from the target
    has a fully accepted neighborhood to work in.
    """
    vals = psi.values
    h, w = vals.shape
    finite = np.isfinite(vals)
    if (vals[finite] <= 0).any():
        raise EikonalError("potential must be positive")
    if not finite.any():
        raise EikonalError("potential is impassable everywhere")
    source = SourceSet.coerce(src, w, h)
    sx, sy = source.points[:, 0], source.points[:, 1]
    if (sx < 0).any() or (sx >= w).any() or (sy < 0).any() or (sy >= h).any():
        raise EikonalError("source outside domain")
    if not finite[sy, sx].all():
        raise EikonalError("source on an impassable point")

    psi_flat = vals.ravel()
    U = np.full(h * w, np.inf)
    acc = np.zeros(h * w, dtype=bool)
    tent = np.full(h * w, np.inf)

    delta = float(vals[finite].min())
    src_idx = (sy * w + sx).astype(np.intp)
    U[src_idx] = 0.0
    acc[src_idx] = True

    targets_flat = None
    if stop_targets is not None:
        targets_flat = stop_targets.mask.ravel()

    buckets: dict[int, list[np.ndarray]] = {}
    keys: list[int] = []

    def push(idx, values, floor_key):
        # improvements found while settling a band may not drop below it
        b = np.maximum(np.floor(values / delta).astype(np.int64), floor_key)
        for key in np.unique(b):
            sel = idx[b == key]
            if key in buckets:
                buckets[key].append(sel)
            else:
                buckets[key] = [sel]
                heapq.heappush(keys, int(key))

    def relax_neighbors(batch, floor_key):
        cand = []
        for k in range(8):
            nx = batch % w + _RING_DX[k]
            ny = batch // w + _RING_DY[k]
            ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
            cand.append(ny[ok] * w + nx[ok])
        P = np.unique(np.concatenate(cand))
        P = P[np.isfinite(psi_flat[P]) & (U[P] > 0)]
        if len(P) == 0:
            return
        v = _batch_update(P, U, acc, psi_flat, w)
        better = v < tent[P] - 1e-12
        if better.any():
            Pb, vb = P[better], v[better]
            tent[Pb] = vb
            push(Pb, vb, floor_key)

    relax_neighbors(np.unique(src_idx), 0)
    band_ranges: list[tuple[float, float]] = []
    limit = stop

    while keys:
        key = heapq.heappop(keys)
        if key not in buckets:
            continue
        if limit is not None and key * delta > limit:
            break
        band_lo, band_hi = np.inf, -np.inf
        # settle the band to a fixed point: interpolated updates can improve
        # values of nodes accepted earlier in this same band
        while True:
            chunks = buckets.pop(key, None)
            if not chunks:
                break
            idx = np.unique(np.concatenate(chunks))
            ok = (tent[idx] < U[idx] - 1e-12) & (tent[idx] < (key + 1) * delta)
            idx = idx[ok]
            if len(idx) == 0:
                break
            vals_here = tent[idx]
            acc[idx] = True
            U[idx] = vals_here
            band_lo = min(band_lo, float(vals_here.min()))
            band_hi = max(band_hi, float(vals_here.max()))
            if targets_flat is not None and targets_flat[idx].any():
                hit = float(vals_here[targets_flat[idx]].min())
                limit = min(limit, hit + stop_margin) if limit is not None else hit + stop_margin
                targets_flat = None
            relax_neighbors(idx, key)
        if band_hi >= band_lo:
            band_ranges.append((band_lo, band_hi))

    return DistanceMap(
        U=ScalarField2D(U.reshape(h, w)),
        accepted=GridMask(acc.reshape(h, w)),
        source=source,
        band_ranges=band_ranges,
    )


def _sanitized(dm: DistanceMap) -> np.ndarray:
    u = dm.U.values
    finite = np.isfinite(u)
    top = float(u[finite].max()) if finite.any() else 0.0
    return np.where(finite, u, top * 1.5 + 10.0)


def backtrack_path(dm: DistanceMap, start: Point2, step: float = 0.5) -> Polyline:
    """Gradient descent of the distance map from ``start`` to the source.

    Two-stage (Heun) steps on the normalized gradient, with a fallback
    hop to the steepest accepted neighbor when the interpolated gradient
    stagnates.  The returned polyline is reversed so it runs from the
    source to ``start``.
    """
    h, w = dm.height, dm.width
    x = np.array([start.x, start.y], dtype=np.float64)
    ix, iy = int(round(x[0])), int(round(x[1]))
    if not (0 <= ix < w and 0 <= iy < h) or not dm.accepted.mask[iy, ix]:
        raise EikonalError("backtrack start not in the accepted region")

    src_pts = dm.source.points.astype(np.float64)
    u_s = _sanitized(dm)
    gy, gx = np.gradient(u_s)

    def grad_at(pt):
        q = pt[None, :]
        return np.array([bilinear_sample_many(gx, q)[0], bilinear_sample_many(gy, q)[0]])

    def u_at(pt):
        return bilinear_sample_many(u_s, pt[None, :])[0]

    def near_src(pt):
        d = np.hypot(src_pts[:, 0] - pt[0], src_pts[:, 1] - pt[1])
        k = int(np.argmin(d))
        return float(d[k]), src_pts[k]

    def neighbor_hop(pt):
        cx, cy = int(round(pt[0])), int(round(pt[1]))
        best, arg = dm.U.values[cy, cx], None
        for k in range(8):
            nx, ny = cx + int(_RING_DX[k]), cy + int(_RING_DY[k])
            if 0 <= nx < w and 0 <= ny < h and dm.accepted.mask[ny, nx]:
                if dm.U.values[ny, nx] < best:
                    best, arg = dm.U.values[ny, nx], (nx, ny)
        return None if arg is None else np.array(arg, dtype=np.float64)

    pts = [x.copy()]
    max_iter = int(20 * (w + h) / step) + 100
    for _ in range(max_iter):
        d0, nearest = near_src(x)
        if d0 <= step:
            if d0 > 1e-9:
                pts.append(nearest)
            break
        g1 = grad_at(x)
        n1 = float(np.hypot(*g1))
        moved = None
        if n1 >= 1e-9:
            mid = x - step * g1 / n1
            mid[0] = np.clip(mid[0], 0, w - 1)
            mid[1] = np.clip(mid[1], 0, h - 1)
            g2 = grad_at(mid)
            n2 = float(np.hypot(*g2))
            direction = g1 / n1 + (g2 / n2 if n2 >= 1e-9 else g1 / n1)
            nd = float(np.hypot(*direction))
            if nd >= 1e-9:
                cand = x - step * direction / nd
                cand[0] = np.clip(cand[0], 0, w - 1)
                cand[1] = np.clip(cand[1], 0, h - 1)
                if u_at(cand) < u_at(x) - 1e-12:
                    moved = cand
        if moved is None:
            hop = neighbor_hop(x)
            if hop is None:
                raise EikonalError("backtracking stagnated away from the source")
            moved = hop
        x = moved
        pts.append(x.copy())
    else:
        raise EikonalError("backtracking exceeded the iteration limit")

    # drop consecutive near-duplicates, reverse to run source -> start
    out = [pts[-1]]
    for p in reversed(pts[:-1]):
        if np.hypot(*(p - out[-1])) > 1e-9:
            out.append(p)
    return Polyline(np.array(out if len(out) > 1 else [pts[0]]))


def min_boundary_point(dm: DistanceMap) -> Point2:
    """Accepted domain-boundary point of least distance, row-major ties."""
    u = dm.U.values.copy()
    h, w = u.shape
    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    masked = np.where(border & dm.accepted.mask, u, np.inf)
    if not np.isfinite(masked).any():
        raise EikonalError("front never reached the domain boundary")
    flat = int(np.argmin(masked.ravel()))
    return Point2(float(flat % w), float(flat // w))
