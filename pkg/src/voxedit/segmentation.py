"""Binary voxel labeling via seeded graph cuts, and the mask-blend merge.

Two attention grids vote per voxel through an element-wise softmax; the
top-ranked voxels on each side become hard seeds wired to the source (edit)
and sink (object) terminals, every pair of occupied 6-neighbors gets a
smoothness capacity that decays with color difference, and a max-flow /
min-cut solve yields the labeling.  The merge then selects, voxel by voxel,
edited features where the mask is 1 and original features elsewhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.special import expit

from .grids import DENSITY_THRESHOLD, AttentionGrid, FeatureGrid, default_bounds

# Stands in for an uncuttable terminal edge; strictly larger than any
# possible sum of pairwise capacities at supported grid sizes.
INFINITE_CAPACITY = 1e9


@dataclass
class VoxelMask:
    """Per-voxel binary labels, 1 = edit, 0 = keep; same layout as the grids."""

    resolution: int
    bits: np.ndarray | None = None
    bounds: np.ndarray = field(default_factory=default_bounds)

    def __post_init__(self):
        n = self.resolution
        if self.bits is None:
            self.bits = np.zeros((n, n, n), dtype=np.uint8)
        else:
            self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
            if self.bits.shape != (n, n, n):
                raise ValueError(f"bits shape {self.bits.shape} does not match resolution {n}")
            if not np.isin(self.bits, (0, 1)).all():
                raise ValueError("mask bits must be 0 or 1")
        self.bounds = np.asarray(self.bounds, dtype=np.float32).reshape(2, 3)


@dataclass
class SegConfig:
    sigma: float = 0.1
    smoothness_lambda: float = 5.0
    edit_seeds: int = 300
    obj_seeds: int = 200
    density_threshold: float = DENSITY_THRESHOLD
    unary: str = "seeds"  # "seeds": hard terminals only; "soft": add -log P terms
    unary_weight: float = 1.0
    infinite_capacity: float = INFINITE_CAPACITY

    def __post_init__(self):
        if self.unary not in ("seeds", "soft"):
            raise ValueError(f"unary must be 'seeds' or 'soft', got {self.unary!r}")


@dataclass
class SegGraph:
    """Max-flow instance over occupied voxels.

    ``nodes`` holds flat voxel ids; ``edges`` index into ``nodes`` and carry
    symmetric capacities.  ``source_seeds``/``sink_seeds`` are node indices
    hard-wired to the terminals; ``t_source``/``t_sink`` are optional soft
    terminal capacities per node.
    """

    resolution: int
    nodes: np.ndarray
    edges: np.ndarray
    capacities: np.ndarray
    source_seeds: np.ndarray
    sink_seeds: np.ndarray
    t_source: np.ndarray | None = None
    t_sink: np.ndarray | None = None
    infinite_capacity: float = INFINITE_CAPACITY


def label_probabilities(a_edit: AttentionGrid, a_obj: AttentionGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel softmax over the two raw attention channels.

    Returns (p_edit, p_obj) with p_edit + p_obj = 1; computed as paired
    sigmoids of the channel difference so large gaps cannot overflow.
    """
    if a_edit.resolution != a_obj.resolution:
        raise ValueError(
            f"attention grids disagree on resolution: {a_edit.resolution} vs {a_obj.resolution}"
        )
    diff = a_edit.attn_raw.astype(np.float64) - a_obj.attn_raw.astype(np.float64)
    return expit(diff), expit(-diff)


def _rank_desc(values: np.ndarray) -> np.ndarray:
    """rank[i] = position of node i when sorted by value descending (stable)."""
    order = np.argsort(-values, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(order.size)
    return ranks


def build_graph(
    grid: FeatureGrid, p_edit: np.ndarray, p_obj: np.ndarray, cfg: SegConfig | None = None
) -> SegGraph:
    """Assemble the seeded min-cut instance from an edited scene grid.

    Nodes are voxels with activated density above the threshold.  The top
    ``edit_seeds`` nodes by edit probability attach to the source and the
    top ``obj_seeds`` by object probability to the sink, both with
    effectively infinite capacity; a node ranked in both lists goes to the
    side where its rank is better (ties favor edit).  Each occupied
    6-neighbor pair (p, q) gets capacity
    ``lambda * exp(-|c_p - c_q|^2 / (2 sigma^2))`` on activated colors.
    """
    cfg = cfg or SegConfig()
    n = grid.resolution

    density = np.maximum(grid.features[..., 0].astype(np.float64), 0.0)
    occupied = density > cfg.density_threshold
    nodes = np.nonzero(occupied.reshape(-1))[0].astype(np.int64)
    m = nodes.size

    node_index = np.full(n * n * n, -1, dtype=np.int64)
    node_index[nodes] = np.arange(m)

    # Pairwise smoothness edges over the 6-neighborhood (3 positive axes).
    edge_list = []
    cap_list = []
    colors = expit(grid.features.reshape(-1, 4)[:, 1:4].astype(np.float64))
    inv_two_sigma_sq = 1.0 / (2.0 * cfg.sigma * cfg.sigma)
    occ3 = occupied
    for axis, stride in ((2, 1), (1, n), (0, n * n)):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(0, n - 1)
        sl_b[axis] = slice(1, n)
        pair_mask = occ3[tuple(sl_a)] & occ3[tuple(sl_b)]
        if not pair_mask.any():
            continue
        base = np.zeros((n, n, n), dtype=np.int64)
        base.reshape(-1)[:] = np.arange(n * n * n)
        va = base[tuple(sl_a)][pair_mask]
        vb = va + stride
        dc = colors[va] - colors[vb]
        w = np.exp(-np.sum(dc * dc, axis=-1) * inv_two_sigma_sq)
        edge_list.append(np.stack([node_index[va], node_index[vb]], axis=1))
        cap_list.append(cfg.smoothness_lambda * w)
    if edge_list:
        edges = np.concatenate(edge_list, axis=0)
        capacities = np.concatenate(cap_list, axis=0)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)
        capacities = np.zeros((0,), dtype=np.float64)

    # Seed selection by probability rank among occupied voxels.
    pe = np.asarray(p_edit, dtype=np.float64).reshape(-1)[nodes]
    po = np.asarray(p_obj, dtype=np.float64).reshape(-1)[nodes]
    n_edit = min(cfg.edit_seeds, m)
    n_obj = min(cfg.obj_seeds, m)
    if n_edit < cfg.edit_seeds or n_obj < cfg.obj_seeds:
        warnings.warn(
            f"requested {cfg.edit_seeds}+{cfg.obj_seeds} seeds but only {m} occupied voxels; "
            "taking all available",
            stacklevel=2,
        )
    rank_e = _rank_desc(pe)
    rank_o = _rank_desc(po)
    in_edit = rank_e < n_edit
    in_obj = rank_o < n_obj
    both = in_edit & in_obj
    # Conflicts go to the better-ranked side; exact rank ties go to edit.
    in_edit[both] = rank_e[both] <= rank_o[both]
    in_obj[both] = ~in_edit[both]

    t_source = t_sink = None
    if cfg.unary == "soft":
        p_clip = np.clip(pe, 1e-12, 1.0 - 1e-12)
        t_source = cfg.unary_weight * -np.log1p(-p_clip)  # -log P_obj
        t_sink = cfg.unary_weight * -np.log(p_clip)  # -log P_edit

    return SegGraph(
        resolution=n,
        nodes=nodes,
        edges=edges,
        capacities=capacities,
        source_seeds=np.nonzero(in_edit)[0],
        sink_seeds=np.nonzero(in_obj)[0],
        t_source=t_source,
        t_sink=t_sink,
        infinite_capacity=cfg.infinite_capacity,
    )


def min_cut(graph: SegGraph) -> VoxelMask:
    """Solve the max-flow instance and read the labeling off the cut.

    Source-side nodes are labeled 1 (edit); everything else, including
    voxels that never entered the graph, is 0.  An empty graph yields the
    all-zero mask.
    """
    n = graph.resolution
    mask = VoxelMask(resolution=n)
    m = graph.nodes.size
    if m == 0:
        return mask

    g = nx.DiGraph()
    source, sink = -1, -2
    g.add_node(source)
    g.add_node(sink)
    g.add_nodes_from(range(m))
    for (a, b), c in zip(graph.edges, graph.capacities):
        # Parallel edges accumulate, matching the energy in cut_cost.
        _add_capacity(g, int(a), int(b), float(c))
        _add_capacity(g, int(b), int(a), float(c))
    inf = graph.infinite_capacity
    for s in graph.source_seeds:
        g.add_edge(source, int(s), capacity=inf)
    for s in graph.sink_seeds:
        g.add_edge(int(s), sink, capacity=inf)
    if graph.t_source is not None:
        for i in range(m):
            c = float(graph.t_source[i])
            if c > 0.0:
                _add_capacity(g, source, i, c)
    if graph.t_sink is not None:
        for i in range(m):
            c = float(graph.t_sink[i])
            if c > 0.0:
                _add_capacity(g, i, sink, c)

    residual = nx.algorithms.flow.boykov_kolmogorov(g, source, sink)
    reachable = _residual_reachable(residual, source)

    labels = np.zeros(m, dtype=np.uint8)
    labels[[i for i in reachable if i >= 0]] = 1
    mask.bits.reshape(-1)[graph.nodes] = labels
    return mask


def _add_capacity(g: nx.DiGraph, a, b, c: float) -> None:
    if g.has_edge(a, b):
        g[a][b]["capacity"] += c
    else:
        g.add_edge(a, b, capacity=c)


def _residual_reachable(residual: nx.DiGraph, source) -> set:
    """BFS over residual capacity with a relative slack tolerance.

    Float augmentation can leave ~1 ulp of residual on edges that are
    saturated in exact arithmetic; a strict > 0 test would leak across the
    cut, so an edge only counts as passable with meaningful slack left.
    """
    seen = {source}
    stack = [source]
    while stack:
        u = stack.pop()
        for v, attrs in residual[u].items():
            if v in seen:
                continue
            cap = attrs.get("capacity", 0.0)
            slack = cap - attrs.get("flow", 0.0)
            if slack > 1e-9 * max(1.0, cap):
                seen.add(v)
                stack.append(v)
    return seen


def cut_cost(graph: SegGraph, labels_by_node: np.ndarray) -> float:
    """Energy of a labeling (1 = edit/source side) under the graph's capacities."""
    cost = 0.0
    a = graph.edges[:, 0]
    b = graph.edges[:, 1]
    differ = labels_by_node[a] != labels_by_node[b]
    cost += float(graph.capacities[differ].sum())
    cost += float(graph.infinite_capacity) * int(
        np.sum(labels_by_node[graph.source_seeds] == 0)
    )
    cost += float(graph.infinite_capacity) * int(np.sum(labels_by_node[graph.sink_seeds] == 1))
    if graph.t_source is not None:
        cost += float(graph.t_source[labels_by_node == 0].sum())
    if graph.t_sink is not None:
        cost += float(graph.t_sink[labels_by_node == 1].sum())
    return cost


def segment(
    grid: FeatureGrid,
    a_edit: AttentionGrid,
    a_obj: AttentionGrid,
    cfg: SegConfig | None = None,
) -> VoxelMask:
    """Full labeling pipeline: softmax, seeded graph build, min-cut."""
    p_edit, p_obj = label_probabilities(a_edit, a_obj)
    graph = build_graph(grid, p_edit, p_obj, cfg)
    return min_cut(graph)


def merge(grid_in: FeatureGrid, grid_edit: FeatureGrid, mask: VoxelMask) -> FeatureGrid:
    """Per-voxel blend: edited features where the mask is 1, input elsewhere.

    Selection is bit-exact on all four channels.
    """
    if not (grid_in.resolution == grid_edit.resolution == mask.resolution):
        raise ValueError(
            f"resolution mismatch: input {grid_in.resolution}, edited {grid_edit.resolution}, "
            f"mask {mask.resolution}"
        )
    sel = mask.bits.astype(bool)[..., None]
    feats = np.where(sel, grid_edit.features, grid_in.features)
    return FeatureGrid(grid_in.resolution, grid_in.bounds.copy(), feats)
