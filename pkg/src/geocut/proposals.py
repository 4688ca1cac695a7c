"""Boundary proposal extraction: the offline edge-detection step.

A proposal is a junction-free, one-grid-point-wide open arc traced from a
binary edge map.  The edge map comes from non-maximum suppression of the
normalized gradient magnitude followed by hysteresis linking; junction
points (more than two 8-neighbors) are removed so every remaining
component is a simple arc or a simple cycle.  Cycles are split once so
each proposal is open with two free endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .features import EdgeFeatures
from .grid import GridError, GridMask, Polyline, bilinear_sample_many

_STRUCT8 = np.ones((3, 3), dtype=bool)

# fixed neighbor visit order keeps arc tracing deterministic
_NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class ProposalConfig:
    low: float = 0.05            # hysteresis low threshold on g
    high: float = 0.15           # hysteresis high threshold on g
    min_fragment_length: int = 10

    def __post_init__(self):
        if not (0 <= self.low < self.high <= 1):
            raise ValueError("need 0 <= low < high <= 1")
        if self.min_fragment_length < 2:
            raise ValueError("min_fragment_length must be >= 2")


@dataclass(frozen=True)
class BoundaryProposal:
    id: int
    curve: Polyline
    occupancy: GridMask

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return self.curve.points[0], self.curve.points[-1]


def binarize_edges(feat: EdgeFeatures, cfg: ProposalConfig, prob_map: np.ndarray | None = None) -> GridMask:
    """One-pixel-wide binary edge trace via NMS plus hysteresis linking.

    ``prob_map`` optionally replaces the normalized gradient magnitude g
    (external edge detector hook); its own finite differences then supply
    the suppression direction.
    """
    if prob_map is not None:
        g = np.asarray(prob_map, dtype=np.float64)
        if g.shape != feat.g.values.shape:
            raise GridError("probability map dimensions differ from features")
        gy, gx = np.gradient(g)
    else:
        g = feat.g.values
        gx, gy = feat.grad_x, feat.grad_y
    h, w = g.shape
    norm = np.hypot(gx, gy)
    safe = np.where(norm > 0, norm, 1.0)
    ux, uy = gx / safe, gy / safe

    iy, ix = np.mgrid[0:h, 0:w]
    flat_xy = np.column_stack([ix.ravel(), iy.ravel()]).astype(np.float64)
    d = np.column_stack([ux.ravel(), uy.ravel()])
    ahead = bilinear_sample_many(g, flat_xy + d).reshape(h, w)
    behind = bilinear_sample_many(g, flat_xy - d).reshape(h, w)

    # >= ahead, > behind: a flat two-pixel ridge keeps exactly one side
    keep = (g >= ahead) & (g > behind) & (norm > 0)

    weak = keep & (g >= cfg.low)
    strong = keep & (g >= cfg.high)
    if not strong.any():
        return GridMask(np.zeros_like(keep))
    labels, n = ndimage.label(weak, structure=_STRUCT8)
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels > 0]
    lut = np.zeros(n + 1, dtype=bool)
    lut[strong_labels] = True
    return GridMask(lut[labels])


def remove_junctions(edges: GridMask) -> GridMask:
    """Clear every set point with more than two set 8-neighbors.

    Clearing only lowers neighbor counts, so a single pass is idempotent
    and the result contains only simple arcs and cycles.
    """
    m = edges.mask.astype(np.uint8)
    kernel = np.ones((3, 3), dtype=np.uint8)
    kernel[1, 1] = 0
    counts = ndimage.convolve(m, kernel, mode="constant", cval=0)
    return GridMask(edges.mask & (counts <= 2))


def _neighbors_in(mask: np.ndarray, y: int, x: int):
    h, w = mask.shape
    for dy, dx in _NEIGHBOR_OFFSETS:
        ny, nx = y + dy, x + dx
        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx]:
            yield ny, nx


def _trace_from(mask: np.ndarray, visited: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    path = [start]
    visited[start] = True
    cur = start
    while True:
        nxt = None
        for ny, nx in _neighbors_in(mask, *cur):
            if not visited[ny, nx]:
                nxt = (ny, nx)
                break
        if nxt is None:
            return path
        visited[nxt] = True
        path.append(nxt)
        cur = nxt


def extract_proposals(edges: GridMask, cfg: ProposalConfig) -> list[BoundaryProposal]:
    """Trace the junction-free mask into ordered open polylines.

    Arcs are walked endpoint to endpoint; isolated cycles are split at
    their row-major-first point, with that point dropped from both the
    polyline and the occupancy so the cycle leaves a physical gap the
    adaptive cut can pass through.  Fragments shorter than
    ``min_fragment_length`` are discarded.
    """
    mask = edges.mask
    m = mask.astype(np.uint8)
    kernel = np.ones((3, 3), dtype=np.uint8)
    kernel[1, 1] = 0
    counts = ndimage.convolve(m, kernel, mode="constant", cval=0)
    if (mask & (counts > 2)).any():
        raise GridError("extract_proposals needs a junction-free mask")

    visited = ~mask  # mark non-edge as visited
    traces: list[list[tuple[int, int]]] = []

    # open arcs first: start from endpoints (exactly one neighbor)
    endpoints = np.argwhere(mask & (counts == 1))
    for y, x in endpoints:
        if not visited[y, x]:
            traces.append(_trace_from(mask, visited, (int(y), int(x))))

    # remaining unvisited points belong to cycles: split at the first point
    remaining = np.argwhere(~visited)
    for y, x in remaining:
        if visited[y, x]:
            continue
        cycle = _trace_from(mask, visited, (int(y), int(x)))
        if len(cycle) > 1:
            cycle = cycle[1:]  # drop the split point entirely
        traces.append(cycle)

    proposals: list[BoundaryProposal] = []
    for trace in traces:
        if len(trace) < max(cfg.min_fragment_length, 2):
            continue
        pts = np.array([(x, y) for y, x in trace], dtype=np.float64)
        occ = np.zeros_like(mask)
        occ[tuple(np.array(trace).T)] = True
        proposals.append(
            BoundaryProposal(id=len(proposals), curve=Polyline(pts), occupancy=GridMask(occ))
        )
    return proposals


def detect_proposals(feat: EdgeFeatures, cfg: ProposalConfig | None = None,
                     prob_map: np.ndarray | None = None) -> list[BoundaryProposal]:
    """Full offline detection: binarize, remove junctions, trace arcs."""
    cfg = cfg or ProposalConfig()
    edges = binarize_edges(feat, cfg, prob_map=prob_map)
    return extract_proposals(remove_junctions(edges), cfg)
