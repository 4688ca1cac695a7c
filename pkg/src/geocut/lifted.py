"""Curvature-penalized geodesics on the orientation-lifted space.

States are (x, y, theta) with theta sampled on a periodic grid.  Motion
is forward-only: a physical step is admissible when its direction lies
within a small gate of the heading at either end of the move.  Physical
steps go to the 8 ring neighbors plus the 8 knight offsets (16
directions, so the worst heading is 13.3 degrees from an admissible
direction), optionally combined with a one-sample heading change; the
Reeds-Shepp forward metric also allows turning in place.

Move costs follow the metric directly: sqrt(|dx|^2 + beta^2 dtheta^2)
for Reeds-Shepp forward, |dx| + beta^2 dtheta^2 / |dx| for the elastica
metric (which makes turning in place impossible), both optionally scaled
by a base cost field sampled at the physical midpoint of the move.  The
move set is a finite directed graph, so the causal min-heap propagation
is a Dijkstra run over it with stored predecessors for backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .grid import GridError, Polyline, ScalarField2D, bilinear_sample_many

_GATE = np.deg2rad(13.5)

# 16 directions ordered by angle; knight offsets fill the 26.6 degree gaps
_DIRS16 = np.array(
    [
        (1, 0), (2, 1), (1, 1), (1, 2), (0, 1), (-1, 2), (-1, 1), (-2, 1),
        (-1, 0), (-2, -1), (-1, -1), (-1, -2), (0, -1), (1, -2), (1, -1), (2, -1),
    ],
    dtype=np.float64,
)
_DIR_ANGLES = np.arctan2(_DIRS16[:, 1], _DIRS16[:, 0])
_DIR_LEN = np.hypot(_DIRS16[:, 0], _DIRS16[:, 1])


def _angle_dist(a: float, b: float) -> float:
    return abs((a - b + np.pi) % (2 * np.pi) - np.pi)


@dataclass(frozen=True)
class LiftedGrid:
    width: int
    height: int
    n_theta: int = 64

    def __post_init__(self):
        if self.n_theta < 16 or self.n_theta % 2 != 0:
            raise GridError("n_theta must be even and at least 16")

    @property
    def theta_step(self) -> float:
        return 2 * np.pi / self.n_theta

    def state_index(self, ix: int, iy: int, im: int) -> int:
        return (im % self.n_theta) * self.height * self.width + iy * self.width + ix

    def index_state(self, idx: int) -> tuple[int, int, int]:
        hw = self.height * self.width
        im, rest = divmod(idx, hw)
        iy, ix = divmod(rest, self.width)
        return ix, iy, im


@dataclass(frozen=True)
class LiftedState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y) and np.isfinite(self.theta)):
            raise GridError("lifted state must be finite")
        object.__setattr__(self, "theta", float(self.theta) % (2 * np.pi))


@dataclass(frozen=True)
class MetricSpec:
    kind: str = "isotropic"      # isotropic | reeds-shepp-forward | elastica
    beta: float = 1.0
    base_cost: ScalarField2D | None = None

    def __post_init__(self):
        if self.kind not in ("isotropic", "reeds-shepp-forward", "elastica"):
            raise GridError(f"unknown metric kind {self.kind!r}")
        if self.kind != "isotropic" and self.beta <= 0:
            raise GridError("lifted metrics need beta > 0")


def tangent_angles(c: Polyline) -> np.ndarray:
    """Unwrapped per-vertex tangent headings from central differences."""
    pts = c.points
    if len(pts) < 2:
        raise GridError("tangents need at least 2 points")
    fwd = np.empty_like(pts)
    fwd[1:-1] = pts[2:] - pts[:-2]
    fwd[0] = pts[1] - pts[0]
    fwd[-1] = pts[-1] - pts[-2]
    return np.unwrap(np.arctan2(fwd[:, 1], fwd[:, 0]))


def lift_polyline(c: Polyline) -> list[LiftedState]:
    """Lift a planar curve to (x, y, heading) states."""
    angles = tangent_angles(c)
    return [LiftedState(float(x), float(y), float(a)) for (x, y), a in zip(c.points, angles)]


def _move_table(grid: LiftedGrid, spec: MetricSpec):
    """Per-theta-sample admissible moves: (dm, dx, dy, geometric cost)."""
    step = grid.theta_step
    beta = spec.beta
    moves: list[list[tuple[int, int, int, float]]] = []
    for m in range(grid.n_theta):
        th = m * step
        rows = []
        for dm in (-1, 0, 1):
            th2 = (m + dm) * step
            dtheta = abs(dm) * step
            for k in range(16):
                if min(_angle_dist(_DIR_ANGLES[k], th), _angle_dist(_DIR_ANGLES[k], th2)) > _GATE:
                    continue
                L = _DIR_LEN[k]
                if spec.kind == "elastica":
                    cost = L + beta * beta * dtheta * dtheta / L
                else:
                    cost = float(np.hypot(L, beta * dtheta))
                rows.append((dm, int(_DIRS16[k, 0]), int(_DIRS16[k, 1]), cost))
            if dm != 0 and spec.kind == "reeds-shepp-forward":
                rows.append((dm, 0, 0, beta * dtheta))  # turning in place
        moves.append(rows)
    return moves


@dataclass(frozen=True)
class LiftedDistanceMap:
    grid: LiftedGrid
    spec: MetricSpec
    dist: np.ndarray          # flat, one value per lifted state, +inf unreached
    predecessors: np.ndarray  # flat state index of the upwind predecessor

    def distance(self, s: LiftedState) -> float:
        ix, iy, im = self._snap(s)
        return float(self.dist[self.grid.state_index(ix, iy, im)])

    def _snap(self, s: LiftedState) -> tuple[int, int, int]:
        ix, iy = int(round(s.x)), int(round(s.y))
        im = int(round(s.theta / self.grid.theta_step)) % self.grid.n_theta
        if not (0 <= ix < self.grid.width and 0 <= iy < self.grid.height):
            raise GridError("state outside domain")
        return ix, iy, im


def lifted_fast_march(
    spec: MetricSpec,
    src: list[LiftedState],
    grid: LiftedGrid,
    stop: float | None = None,
    passable: np.ndarray | None = None,
) -> LiftedDistanceMap:
    """Forward-only causal propagation over the lifted move graph."""
    if spec.kind == "isotropic":
        raise GridError("lifted_fast_march needs a lifted metric kind")
    if not src:
        raise GridError("empty lifted source set")
    w, h, nt = grid.width, grid.height, grid.n_theta
    if passable is None:
        passable = np.ones((h, w), dtype=bool)
    base = spec.base_cost.values if spec.base_cost is not None else None

    moves = _move_table(grid, spec)
    rows, cols, costs = [], [], []
    iy, ix = np.nonzero(passable)
    flat_xy = iy * w + ix
    for m in range(nt):
        src_base = m * h * w + flat_xy
        for dm, dx, dy, c in moves[m]:
            nx, ny = ix + dx, iy + dy
            ok = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
            ok[ok] &= passable[ny[ok], nx[ok]]
            if dx or dy:
                # long moves must not tunnel through blocked midpoints
                mx = np.clip(np.round(ix + dx / 2).astype(int), 0, w - 1)
                my = np.clip(np.round(iy + dy / 2).astype(int), 0, h - 1)
                ok &= passable[my, mx]
            if not ok.any():
                continue
            tgt = ((m + dm) % nt) * h * w + ny[ok] * w + nx[ok]
            cost = np.full(int(ok.sum()), c)
            if base is not None:
                mid = np.column_stack([ix[ok] + dx / 2.0, iy[ok] + dy / 2.0])
                cost = cost * bilinear_sample_many(base, mid)
            rows.append(src_base[ok])
            cols.append(tgt)
            costs.append(cost)

    n = nt * h * w
    graph = csr_matrix(
        (np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    src_idx = []
    for s in src:
        ixs, iys = int(round(s.x)), int(round(s.y))
        ims = int(round(s.theta / grid.theta_step)) % nt
        if not (0 <= ixs < w and 0 <= iys < h):
            raise GridError("lifted source outside domain")
        if not passable[iys, ixs]:
            raise GridError("lifted source on an impassable point")
        src_idx.append(grid.state_index(ixs, iys, ims))
    src_idx = np.unique(src_idx)

    dist, pred = _csgraph_dijkstra(
        graph,
        directed=True,
        indices=src_idx,
        return_predecessors=True,
        min_only=True,
        limit=np.inf if stop is None else stop,
    )
    return LiftedDistanceMap(grid=grid, spec=spec, dist=dist, predecessors=pred)


def lifted_backtrack(dm: LiftedDistanceMap, start: LiftedState) -> tuple[Polyline, np.ndarray]:
    """Walk stored predecessor moves from ``start`` back to the source.

    Returns the physical projection (source to start) and the matching
    unwrapped per-vertex heading profile; turns in place are folded into
    the heading change at the vertex where they happen.
    """
    ix, iy, im = dm._snap(start)
    idx = dm.grid.state_index(ix, iy, im)
    if not np.isfinite(dm.dist[idx]):
        raise GridError("backtrack start was never reached")
    chain = [idx]
    guard = dm.grid.width * dm.grid.height * dm.grid.n_theta + 1
    while dm.predecessors[chain[-1]] >= 0:
        chain.append(int(dm.predecessors[chain[-1]]))
        if len(chain) > guard:
            raise GridError("predecessor chain does not terminate")
    chain.reverse()

    pts, thetas = [], []
    for s in chain:
        x, y, m = dm.grid.index_state(s)
        th = m * dm.grid.theta_step
        if pts and pts[-1] == (x, y):
            thetas[-1] = th  # turn in place: keep latest heading
        else:
            pts.append((x, y))
            thetas.append(th)
    angles = np.unwrap(np.array(thetas, dtype=np.float64))
    if len(pts) == 1:
        return Polyline(np.array([pts[0]], dtype=np.float64)), angles
    return Polyline(np.array(pts, dtype=np.float64)), angles


def curvature_cost_along(path: Polyline, angles: np.ndarray, beta: float) -> float:
    """Discrete curvature-penalized length: sum of sqrt(ds^2 + beta^2 dn^2).

    ``angles`` must be the unwrapped heading profile matching the path
    vertices.  A straight path costs exactly its Euclidean length.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if len(angles) != len(path):
        raise GridError("angle profile length must match the path")
    if len(path) < 2:
        return 0.0
    pts = path.points
    if path.closed:
        ds = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
        dn = np.empty(len(pts))
        dn[:-1] = np.diff(angles)
        # closing heading change takes the minimal wrap
        dn[-1] = (angles[0] - angles[-1] + np.pi) % (2 * np.pi) - np.pi
    else:
        ds = np.hypot(*np.diff(pts, axis=0).T)
        dn = np.diff(angles)
    return float(np.sqrt(ds * ds + beta * beta * dn * dn).sum())
