"""Interactive segmentation from a single landmark click.

The adaptive cut is a geodesic from the landmark to the domain boundary
under the structural potential, which is impassable on proposals and
expensive near edges, so the cut crosses the target boundary once
through a gap between proposals.  Any simple closed contour crossing
that cut exactly once must enclose the landmark (crossing parity), so
candidate contours are cycles in the proposal graph closed by a single
cut-crossing connection path:

  * edges whose connection path meets the cut get masked to +inf;
  * every ordered pair whose stored path crosses the cut exactly once
    seeds one candidate: the masked-graph shortest chain between the
    pair's nodes, closed by the crossing path itself;
  * each candidate is assembled by truncating the chain's proposals
    between their incident anchors and concatenating them with the
    connection paths; non-simple or wrongly-crossing assemblies are
    discarded;
  * the survivor minimizing  mu1 * chain cost + mu2 / contour length
    wins.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .eikonal import EikonalError, backtrack_path, fast_march, min_boundary_point
from .features import EdgeFeatures, structural_potential
from .graph import GraphEdge, ProposalGraph
from .grid import (
    GridError,
    Point2,
    Polyline,
    count_crossings,
    point_in_polygon,
    polyline_is_simple,
    polyline_length,
)


class SegmentationError(RuntimeError):
    """Failure of one interactive stage, labeled with the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class AdaptiveCut:
    landmark: Point2
    boundary_point: Point2
    path: Polyline               # runs landmark -> boundary


@dataclass(frozen=True)
class SelectionConfig:
    mu1: float = 1.0
    mu2: float = 0.1

    def __post_init__(self):
        if self.mu1 <= 0 or self.mu2 <= 0:
            raise ValueError("selection weights must be positive")


@dataclass(frozen=True)
class CircularContour:
    contour: Polyline            # closed, simple
    node_ids: list[int]
    closure: tuple[int, int]
    chain_cost: float            # discrete energy of the open chain
    length: float                # Euclidean contour length
    pieces: list = field(default_factory=list, repr=False)

    def selection_energy(self, cfg: SelectionConfig) -> float:
        return cfg.mu1 * self.chain_cost + cfg.mu2 / self.length


def adaptive_cut(p: Point2, feat: EdgeFeatures, proposals: list) -> AdaptiveCut:
    """Structure-aware geodesic from the landmark to the domain boundary."""
    psi = structural_potential(feat, proposals)
    h, w = psi.values.shape
    ix, iy = int(round(p.x)), int(round(p.y))
    if not (0 < ix < w - 1 and 0 < iy < h - 1):
        raise SegmentationError("adaptive-cut", "landmark must be strictly inside the domain")
    if not np.isfinite(psi.values[iy, ix]):
        raise SegmentationError(
            "adaptive-cut", "landmark lies on a boundary proposal; nudge the click off the edge"
        )
    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    from .grid import GridMask  # local import to avoid cycle noise at module top

    try:
        dm = fast_march(psi, p, stop_targets=GridMask(border), stop_margin=4.0 * float(psi.values[np.isfinite(psi.values)].max()))
        b = min_boundary_point(dm)
        path = backtrack_path(dm, b)
    except EikonalError as e:
        raise SegmentationError("adaptive-cut", str(e)) from e
    if len(path) < 2:
        raise SegmentationError("adaptive-cut", "degenerate cut path")
    return AdaptiveCut(landmark=p, boundary_point=b, path=path)


def masked_weights(graph: ProposalGraph, cut: AdaptiveCut) -> dict[tuple[int, int], float]:
    """Base weights with +inf overlaid on every cut-touching edge."""
    out: dict[tuple[int, int], float] = {}
    for key, edge in graph.edges.items():
        hits = count_crossings(edge.path, cut.path)
        out[key] = edge.weight if hits == 0 else np.inf
    return out


def build_lambda(graph: ProposalGraph, cut: AdaptiveCut) -> list[tuple[int, int]]:
    """Ordered node pairs whose connection path crosses the cut exactly once.

    Paths crossing two or more times cannot close a contour that passes
    the cut once, so they are excluded.  Loop-closure bridges yield
    (i, i) pairs for one-node cycles.
    """
    pairs: list[tuple[int, int]] = []
    for key, edge in sorted(graph.edges.items()):
        if count_crossings(edge.path, cut.path) == 1:
            pairs.append(key)
    for i, edge in sorted(graph.loop_edges.items()):
        if count_crossings(edge.path, cut.path) == 1:
            pairs.append((i, i))
    return pairs


def dijkstra(
    weights: dict[tuple[int, int], float],
    n_nodes: int,
    source: int,
    target: int,
) -> tuple[list[int], float] | None:
    """Shortest chain in the masked directed graph; None when unreachable."""
    if source == target:
        return [source], 0.0
    adj: dict[int, list[tuple[int, float]]] = {}
    for (i, j), w in weights.items():
        if np.isfinite(w):
            adj.setdefault(i, []).append((j, w))
    dist = {source: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            chain = [u]
            while chain[-1] != source:
                chain.append(prev[chain[-1]])
            return chain[::-1], d
        for v, w in adj.get(u, ()):
            nd = d + w
            if nd < dist.get(v, np.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return None


def _nearest_vertex(curve: Polyline, p: Point2) -> int:
    d = np.hypot(curve.points[:, 0] - p.x, curve.points[:, 1] - p.y)
    return int(np.argmin(d))


def _truncate(curve: Polyline, a: Point2, b: Point2) -> np.ndarray:
    """Sub-arc of an open proposal between the vertices nearest to a and b."""
    ia, ib = _nearest_vertex(curve, a), _nearest_vertex(curve, b)
    if ia == ib:
        return curve.points[ia : ia + 1]
    if ia < ib:
        return curve.points[ia : ib + 1]
    return curve.points[ib : ia + 1][::-1]


def _concat(pieces: list[np.ndarray]) -> np.ndarray:
    out = [pieces[0][0]]
    for piece in pieces:
        for q in piece:
            if np.hypot(q[0] - out[-1][0], q[1] - out[-1][1]) > 1e-9:
                out.append(q)
    # drop a duplicated closing vertex; Polyline closes implicitly
    if len(out) > 1 and np.hypot(*(out[0] - out[-1])) <= 1e-9:
        out.pop()
    return np.array(out)


def assemble_contour(
    chain: list[int],
    graph: ProposalGraph,
    pair: tuple[int, int],
    cut: AdaptiveCut,
    chain_cost: float,
) -> CircularContour | None:
    """Concatenate truncated proposals and connection paths into a cycle.

    ``chain`` runs from pair[0] to pair[1]; the pair's own crossing path,
    traversed backwards, closes the cycle.  Returns None when the
    assembly self-intersects, misses the landmark, or does not cross the
    cut exactly once.
    """
    i, j = pair
    closure = graph.loop_edges[i] if i == j else graph.edges[pair]
    if chain[0] != i or chain[-1] != j:
        raise GridError("chain endpoints do not match the closing pair")

    hops: list[GraphEdge] = [graph.edges[(a, b)] for a, b in zip(chain[:-1], chain[1:])]
    pieces: list[np.ndarray] = []
    used: list[Polyline] = []
    for k, node in enumerate(chain):
        into = closure.x_anchor if k == 0 else hops[k - 1].y_anchor
        out_of = closure.y_anchor if k == len(chain) - 1 else hops[k].x_anchor
        pieces.append(_truncate(graph.proposals[node].curve, into, out_of))
        if k < len(hops):
            pieces.append(hops[k].path.points)
            used.append(hops[k].path)
    pieces.append(closure.path.points[::-1])
    used.append(closure.path)

    pts = _concat(pieces)
    if len(pts) < 3:
        return None
    try:
        contour = Polyline(pts, closed=True)
    except GridError:
        return None
    if not polyline_is_simple(contour):
        return None
    if count_crossings(contour, cut.path) != 1:
        return None
    if not point_in_polygon(cut.landmark, contour):
        return None
    return CircularContour(
        contour=contour,
        node_ids=list(chain),
        closure=pair,
        chain_cost=chain_cost,
        length=polyline_length(contour),
        pieces=used,
    )


def select_optimal(candidates: list[CircularContour], cfg: SelectionConfig) -> CircularContour:
    """Arg-min of mu1 * chain cost + mu2 / length; ties favor longer contours."""
    if not candidates:
        raise SegmentationError("selection", "no admissible circular path")
    return min(candidates, key=lambda c: (c.selection_energy(cfg), -c.length))


def segment(
    graph: ProposalGraph,
    feat: EdgeFeatures,
    p: Point2,
    cfg: SelectionConfig | None = None,
) -> tuple[CircularContour, AdaptiveCut]:
    """Landmark click to closed contour, per the interactive pipeline."""
    cfg = cfg or SelectionConfig()
    if not graph.proposals:
        raise SegmentationError("graph", "graph has no boundary proposals")
    cut = adaptive_cut(p, feat, graph.proposals)
    weights = masked_weights(graph, cut)
    pairs = build_lambda(graph, cut)
    if not pairs:
        raise SegmentationError("lambda", "the cut crosses no connection path")
    candidates: list[CircularContour] = []
    for pair in pairs:
        i, j = pair
        got = dijkstra(weights, graph.node_count(), i, j)
        if got is None:
            continue
        chain, cost = got
        contour = assemble_contour(chain, graph, pair, cut, cost)
        if contour is not None:
            candidates.append(contour)
    if not candidates:
        raise SegmentationError("assembly", "every candidate cycle was degenerate")
    return select_optimal(candidates, cfg), cut
