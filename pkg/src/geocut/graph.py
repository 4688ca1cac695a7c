"""Offline construction of the directed proposal graph.

Nodes are boundary proposals; a directed edge (i, j) stores the geodesic
connection path bridging proposal i to an adjacent proposal j, its
anchor points on both proposals, and its base energy.  Adjacency comes
from tubular neighborhoods: sub-level sets of the geodesic distance from
each proposal under the segmentation potential.

Per-proposal loop-closure bridges (the geodesic joining a proposal's own
two endpoints) are kept apart from the regular edge set: they never
participate in shortest-path chains, but let a single almost-closed
proposal form a one-node circular contour.

Base weights are cut-independent; the interactive step overlays +inf on
cut-crossing edges at query time.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .eikonal import EikonalError, backtrack_path, fast_march
from .features import EdgeFeatures, FeatureConfig, compute_edge_features, segmentation_potential
from .grid import GridError, GridMask, Point2, Polyline, ScalarField2D, polyline_length
from .lifted import (
    LiftedGrid,
    MetricSpec,
    curvature_cost_along,
    lift_polyline,
    lifted_backtrack,
    lifted_fast_march,
    tangent_angles,
)
from .proposals import BoundaryProposal, ProposalConfig, detect_proposals

FORMAT_TAG = "geocut-graph/1"


@dataclass(frozen=True)
class GraphConfig:
    zeta: float = 12.0           # tubular neighborhood width, geodesic units
    mu: float = 1.0              # Euclidean-length weight in the c1 energy
    beta: float = 1.0            # curvature weight in the c2 energy
    metric: MetricSpec = MetricSpec()
    energy: str = "c1"           # c1 | c2

    def __post_init__(self):
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.energy not in ("c1", "c2"):
            raise ValueError("energy kind must be c1 or c2")


@dataclass(frozen=True)
class GraphEdge:
    src: int
    dst: int
    path: Polyline               # runs from x_anchor (on S_src) to y_anchor (on S_dst)
    x_anchor: Point2
    y_anchor: Point2
    weight: float
    weighted_len: float          # metric length accumulated during the solve

    def __post_init__(self):
        if not (np.isfinite(self.weight) and self.weight > 0):
            raise GridError("stored edges need a positive finite weight")


@dataclass
class ProposalGraph:
    proposals: list[BoundaryProposal]
    edges: dict[tuple[int, int], GraphEdge]
    loop_edges: dict[int, GraphEdge]
    width: int
    height: int
    feature_config: FeatureConfig
    proposal_config: ProposalConfig
    config: GraphConfig

    def node_count(self) -> int:
        return len(self.proposals)

    def edge_count(self) -> int:
        return len(self.edges)


def _bbox(mask: np.ndarray, pad: int, w: int, h: int):
    ys, xs = np.nonzero(mask)
    return (
        max(int(xs.min()) - pad, 0),
        min(int(xs.max()) + pad, w - 1),
        max(int(ys.min()) - pad, 0),
        min(int(ys.max()) + pad, h - 1),
    )


def neighborhood(prop: BoundaryProposal, psi_seg: ScalarField2D, zeta: float) -> GridMask:
    """Sub-level set {U_i <= zeta} of the geodesic distance from the proposal.

    The solve is cropped to a box that provably contains the tube
    (geodesic radius zeta implies Euclidean radius at most zeta / min psi)
    and early-stopped at zeta.
    """
    vals = psi_seg.values
    h, w = vals.shape
    pad = int(np.ceil(zeta / float(vals.min()))) + 2
    x0, x1, y0, y1 = _bbox(prop.occupancy.mask, pad, w, h)
    crop = ScalarField2D(vals[y0 : y1 + 1, x0 : x1 + 1])
    src = GridMask(prop.occupancy.mask[y0 : y1 + 1, x0 : x1 + 1])
    dm = fast_march(crop, src, stop=zeta)
    out = np.zeros((h, w), dtype=bool)
    out[y0 : y1 + 1, x0 : x1 + 1] = dm.accepted.mask & (dm.U.values <= zeta)
    return GridMask(out)


def find_adjacent(props: list[BoundaryProposal], masks: dict[int, GridMask]) -> dict[int, list[int]]:
    """j is adjacent to i when S_j meets the tube of S_i (directional)."""
    adj: dict[int, list[int]] = {}
    for i, _ in enumerate(props):
        tube = masks[i].mask
        adj[i] = [j for j, q in enumerate(props) if j != i and (tube & q.occupancy.mask).any()]
    return adj


def _isotropic_connection(psi_crop, src_mask, tgt_mask, offset):
    dm = fast_march(ScalarField2D(psi_crop), GridMask(src_mask), stop_targets=GridMask(tgt_mask))
    u = np.where(tgt_mask & dm.accepted.mask, dm.U.values, np.inf)
    if not np.isfinite(u).any():
        return None
    flat = int(np.argmin(u.ravel()))
    yj, xj = divmod(flat, u.shape[1])
    path = backtrack_path(dm, Point2(float(xj), float(yj)))
    ox, oy = offset
    pts = path.points + np.array([ox, oy], dtype=np.float64)
    return Polyline(pts), float(u[yj, xj])


def _lifted_connection(metric, psi_crop, domain, src_curve, tgt_curve, offset):
    ox, oy = offset
    shifted_src = Polyline(src_curve.points - [ox, oy])
    shifted_tgt = Polyline(tgt_curve.points - [ox, oy])
    grid = LiftedGrid(psi_crop.shape[1], psi_crop.shape[0])
    spec = replace(metric, base_cost=ScalarField2D(psi_crop))
    sources = []
    for state in lift_polyline(shifted_src):
        sources.append(state)
        sources.append(replace(state, theta=state.theta + np.pi))
    dm = lifted_fast_march(spec, sources, grid, passable=domain)
    best, best_state = np.inf, None
    for state in lift_polyline(shifted_tgt):
        for cand in (state, replace(state, theta=state.theta + np.pi)):
            d = dm.distance(cand)
            if d < best:
                best, best_state = d, cand
    if best_state is None or not np.isfinite(best):
        return None
    path, _angles = lifted_backtrack(dm, best_state)
    pts = path.points + np.array([ox, oy], dtype=np.float64)
    return Polyline(pts), float(best)


def connection_path(
    props: list[BoundaryProposal],
    i: int,
    j: int,
    psi_seg: ScalarField2D,
    masks: dict[int, GridMask],
    metric: MetricSpec,
) -> tuple[Polyline, float] | None:
    """Geodesic bridge from S_i to S_j inside the union of their tubes.

    Returns the path (from a point of S_i to the closest point of S_j)
    and its metric length, or None when S_j is unreachable inside the
    restricted domain.
    """
    vals = psi_seg.values
    h, w = vals.shape
    domain = masks[i].mask | masks[j].mask
    x0, x1, y0, y1 = _bbox(domain, 2, w, h)
    sl = np.s_[y0 : y1 + 1, x0 : x1 + 1]
    dom_crop = domain[sl]
    psi_crop = np.where(dom_crop, vals[sl], np.inf)
    src_mask = props[i].occupancy.mask[sl]
    tgt_mask = props[j].occupancy.mask[sl] & dom_crop
    if not tgt_mask.any():
        return None
    if metric.kind == "isotropic":
        return _isotropic_connection(psi_crop, src_mask, tgt_mask, (x0, y0))
    return _lifted_connection(metric, np.where(dom_crop, vals[sl], vals.max()), dom_crop,
                              props[i].curve, props[j].curve, (x0, y0))


def loop_closure_path(
    prop: BoundaryProposal,
    psi_seg: ScalarField2D,
    mask: GridMask,
    zeta: float,
) -> tuple[Polyline, float] | None:
    """Geodesic joining a proposal's last endpoint to its first.

    The proposal's own interior is blocked so the bridge must leave the
    curve; the solve is limited to twice the tube width, which keeps
    closures local (a split near-loop) and rejects far-apart endpoints.
    """
    vals = psi_seg.values
    h, w = vals.shape
    x0, x1, y0, y1 = _bbox(mask.mask, 2, w, h)
    sl = np.s_[y0 : y1 + 1, x0 : x1 + 1]
    dom = mask.mask[sl]
    occ = prop.occupancy.mask[sl]
    first = np.round(prop.curve.points[0]).astype(int) - [x0, y0]
    last = np.round(prop.curve.points[-1]).astype(int) - [x0, y0]
    blocked = occ.copy()
    blocked[first[1], first[0]] = False
    blocked[last[1], last[0]] = False
    psi_crop = np.where(dom & ~blocked, vals[sl], np.inf)
    src_mask = np.zeros_like(dom)
    src_mask[last[1], last[0]] = True
    tgt_mask = np.zeros_like(dom)
    tgt_mask[first[1], first[0]] = True
    try:
        dm = fast_march(ScalarField2D(psi_crop), GridMask(src_mask),
                        stop=2 * zeta, stop_targets=GridMask(tgt_mask))
    except EikonalError:
        return None
    if not (dm.accepted.mask & tgt_mask).any():
        return None
    u_tgt = float(dm.U.values[first[1], first[0]])
    path = backtrack_path(dm, Point2(float(first[0]), float(first[1])))
    if len(path) < 2:
        return None
    return Polyline(path.points + [x0, y0]), u_tgt


def edge_weight(path: Polyline, weighted_len: float, cfg: GraphConfig) -> float:
    """c1 = mu * Length + metric length; c2 = curvature-penalized length."""
    if cfg.energy == "c1":
        return cfg.mu * polyline_length(path) + weighted_len
    return curvature_cost_along(path, tangent_angles(path), cfg.beta)


def build_graph(
    channels,
    feature_config: FeatureConfig | None = None,
    proposal_config: ProposalConfig | None = None,
    graph_config: GraphConfig | None = None,
    workers: int = 1,
    feat: EdgeFeatures | None = None,
    proposals: list[BoundaryProposal] | None = None,
) -> ProposalGraph:
    """Full offline pipeline: features, proposals, tubes, connection paths.

    Deterministic given configs; per-pair connection solves are
    independent and fan out over ``workers`` threads.
    """
    fcfg = feature_config or FeatureConfig()
    pcfg = proposal_config or ProposalConfig()
    gcfg = graph_config or GraphConfig()
    if feat is None:
        feat = compute_edge_features(channels, fcfg)
    h, w = feat.g.values.shape
    props = proposals if proposals is not None else detect_proposals(feat, pcfg)
    psi_seg = segmentation_potential(feat)

    if not props:
        return ProposalGraph([], {}, {}, w, h, fcfg, pcfg, gcfg)

    def tube(i):
        return i, neighborhood(props[i], psi_seg, gcfg.zeta)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            masks = dict(pool.map(tube, range(len(props))))
    else:
        masks = dict(map(tube, range(len(props))))

    adjacency = find_adjacent(props, masks)
    pairs = [(i, j) for i in sorted(adjacency) for j in adjacency[i]]

    def solve_pair(pair):
        i, j = pair
        got = connection_path(props, i, j, psi_seg, masks, gcfg.metric)
        if got is None:
            return pair, None
        path, wlen = got
        return pair, GraphEdge(
            src=i,
            dst=j,
            path=path,
            x_anchor=Point2(*path.points[0]),
            y_anchor=Point2(*path.points[-1]),
            weight=edge_weight(path, wlen, gcfg),
            weighted_len=wlen,
        )

    def solve_loop(i):
        got = loop_closure_path(props[i], psi_seg, masks[i], gcfg.zeta)
        if got is None:
            return i, None
        path, wlen = got
        return i, GraphEdge(
            src=i,
            dst=i,
            path=path,
            x_anchor=Point2(*path.points[0]),
            y_anchor=Point2(*path.points[-1]),
            weight=edge_weight(path, wlen, gcfg),
            weighted_len=wlen,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            edge_results = list(pool.map(solve_pair, pairs))
            loop_results = list(pool.map(solve_loop, range(len(props))))
    else:
        edge_results = [solve_pair(p) for p in pairs]
        loop_results = [solve_loop(i) for i in range(len(props))]

    edges = {pair: e for pair, e in edge_results if e is not None}
    loops = {i: e for i, e in loop_results if e is not None}
    return ProposalGraph(props, edges, loops, w, h, fcfg, pcfg, gcfg)


# ---------------------------------------------------------------------------
# cache serialization


def _round_pts(arr: np.ndarray) -> list:
    return [[round(float(x), 9), round(float(y), 9)] for x, y in arr]


def _edge_dict(e: GraphEdge) -> dict:
    return {
        "src": e.src,
        "dst": e.dst,
        "path": _round_pts(e.path.points),
        "x_anchor": [round(e.x_anchor.x, 9), round(e.x_anchor.y, 9)],
        "y_anchor": [round(e.y_anchor.x, 9), round(e.y_anchor.y, 9)],
        "weight": round(e.weight, 9),
        "weighted_len": round(e.weighted_len, 9),
    }


def _edge_from(d: dict) -> GraphEdge:
    return GraphEdge(
        src=int(d["src"]),
        dst=int(d["dst"]),
        path=Polyline(np.array(d["path"], dtype=np.float64)),
        x_anchor=Point2(*d["x_anchor"]),
        y_anchor=Point2(*d["y_anchor"]),
        weight=float(d["weight"]),
        weighted_len=float(d["weighted_len"]),
    )


def graph_to_dict(g: ProposalGraph) -> dict:
    return {
        "format": FORMAT_TAG,
        "width": g.width,
        "height": g.height,
        "feature_config": vars(g.feature_config),
        "proposal_config": vars(g.proposal_config),
        "graph_config": {
            "zeta": g.config.zeta,
            "mu": g.config.mu,
            "beta": g.config.beta,
            "metric": {"kind": g.config.metric.kind, "beta": g.config.metric.beta},
            "energy": g.config.energy,
        },
        "proposals": [{"id": p.id, "points": _round_pts(p.curve.points)} for p in g.proposals],
        "edges": [_edge_dict(e) for _, e in sorted(g.edges.items())],
        "loop_edges": [_edge_dict(e) for _, e in sorted(g.loop_edges.items())],
    }


def graph_from_dict(d: dict) -> ProposalGraph:
    if d.get("format") != FORMAT_TAG:
        raise GridError(f"unsupported graph cache format {d.get('format')!r}")
    w, h = int(d["width"]), int(d["height"])
    props = []
    for pd in d["proposals"]:
        pts = np.array(pd["points"], dtype=np.float64)
        occ = np.zeros((h, w), dtype=bool)
        ix = np.round(pts[:, 0]).astype(int)
        iy = np.round(pts[:, 1]).astype(int)
        occ[iy, ix] = True
        props.append(BoundaryProposal(id=int(pd["id"]), curve=Polyline(pts), occupancy=GridMask(occ)))
    gcd = d["graph_config"]
    cfg = GraphConfig(
        zeta=gcd["zeta"],
        mu=gcd["mu"],
        beta=gcd["beta"],
        metric=MetricSpec(kind=gcd["metric"]["kind"], beta=gcd["metric"]["beta"]),
        energy=gcd["energy"],
    )
    return ProposalGraph(
        proposals=props,
        edges={(e["src"], e["dst"]): _edge_from(e) for e in d["edges"]},
        loop_edges={e["src"]: _edge_from(e) for e in d["loop_edges"]},
        width=w,
        height=h,
        feature_config=FeatureConfig(**d["feature_config"]),
        proposal_config=ProposalConfig(**d["proposal_config"]),
        config=cfg,
    )


def save_graph(g: ProposalGraph, path: str) -> None:
    with open(path, "w") as f:
        json.dump(graph_to_dict(g), f, sort_keys=True, separators=(",", ":"))


def load_graph(path: str) -> ProposalGraph:
    with open(path) as f:
        return graph_from_dict(json.load(f))
