"""Sparse pixel graphs and graph convolution over them.

Nodes are the cells of an ``height x width`` grid in row-major order. Edges
live only inside each node's 8-neighbourhood, so a graph never costs more
than ``8 * N`` entries regardless of resolution.

Aggregation convention: ``z_i = sum_{(i, j) in edges} w_ij * x_j``, i.e. the
``src`` of an edge is the receiving node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

# (row, col) offsets of the 8-neighbourhood, in the canonical slot order
OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
_SLOT = {off: k for k, off in enumerate(OFFSETS)}

# cosine values within this distance below the threshold still pass; float
# round-off would otherwise drop exactly-aligned pairs at P = 1
_SIM_TOL = 1e-6

ACTIVATIONS = ("relu", "log_softmax", "identity")


@dataclass(frozen=True, eq=False)
class SparseGraph:
    height: int
    width: int
    src: torch.Tensor  # (E,) int64
    dst: torch.Tensor  # (E,) int64
    weight: torch.Tensor  # (E,) float

    @property
    def num_nodes(self) -> int:
        return self.height * self.width

    @property
    def num_edges(self) -> int:
        return int(self.src.numel())

    def to_dense(self) -> torch.Tensor:
        """Dense ``N x N`` adjacency; only sensible for small graphs."""
        n = self.num_nodes
        dense = self.weight.new_zeros(n * n)
        dense = dense.index_put((self.src * n + self.dst,), self.weight, accumulate=True)
        return dense.view(n, n)

    def edge_dict(self) -> dict[tuple[int, int], float]:
        return {(int(s), int(d)): float(w)
                for s, d, w in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist())}

    def validate(self) -> None:
        """Raise ``ValueError`` if any graph invariant is violated."""
        n = self.num_nodes
        if not (self.src.shape == self.dst.shape == self.weight.shape):
            raise ValueError("src, dst and weight must have the same length")
        if self.num_edges == 0:
            return
        if int(self.src.min()) < 0 or int(self.src.max()) >= n or int(self.dst.min()) < 0 \
                or int(self.dst.max()) >= n:
            raise ValueError("edge endpoint outside the grid")
        dr = (self.dst // self.width - self.src // self.width).abs()
        dc = (self.dst % self.width - self.src % self.width).abs()
        self_loop = self.src == self.dst
        if bool(((torch.maximum(dr, dc) != 1) & ~self_loop).any()):
            raise ValueError("edge outside the 8-neighbourhood")
        w = self.weight.detach()
        if not bool(torch.isfinite(w).all()) or bool((w < 0).any()):
            raise ValueError("edge weights must be finite and non-negative")
        keys = self.src * n + self.dst
        if torch.unique(keys).numel() != keys.numel():
            raise ValueError("duplicate edges")


def neighbor_support(height: int, width: int, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Every ordered 8-neighbour pair of the grid.

    Pairs are ordered offset-major (``OFFSETS`` order), then row-major over the
    source node. This order indexes the learnable edge weights.
    """
    rows = torch.arange(height, device=device).view(-1, 1).expand(height, width)
    cols = torch.arange(width, device=device).view(1, -1).expand(height, width)
    srcs, dsts = [], []
    for dr, dc in OFFSETS:
        r2, c2 = rows + dr, cols + dc
        ok = (r2 >= 0) & (r2 < height) & (c2 >= 0) & (c2 < width)
        srcs.append((rows * width + cols)[ok])
        dsts.append((r2 * width + c2)[ok])
    return torch.cat(srcs), torch.cat(dsts)


def support_size(height: int, width: int) -> int:
    """Number of ordered 8-neighbour pairs on a ``height x width`` grid."""
    total = 0
    for dr, dc in OFFSETS:
        total += max(height - abs(dr), 0) * max(width - abs(dc), 0)
    return total


def neighbor_cosine(features: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Cosine similarity of every support pair, in ``neighbor_support`` order.

    Zero rows are similar (1) to other zero rows and dissimilar (0) to
    anything else.
    """
    grid = features.view(height, width, -1)
    norm = grid.norm(dim=-1)
    zero = norm == 0
    safe = torch.where(zero, torch.ones_like(norm), norm)
    unit = grid / safe.unsqueeze(-1)
    out = []
    for dr, dc in OFFSETS:
        a = slice(max(0, -dr), height - max(0, dr)), slice(max(0, -dc), width - max(0, dc))
        b = slice(max(0, dr), height + min(0, dr)), slice(max(0, dc), width + min(0, dc))
        cos = (unit[a] * unit[b]).sum(-1)
        za, zb = zero[a], zero[b]
        cos = torch.where(za & zb, torch.ones_like(cos), cos)
        cos = torch.where(za ^ zb, torch.zeros_like(cos), cos)
        out.append(cos.reshape(-1))
    return torch.cat(out).clamp(-1.0, 1.0)


def build_adjacency(features: torch.Tensor, grid: tuple[int, int], P: float,
                    init_weights: torch.Tensor | None = None) -> SparseGraph:
    """Similarity-thresholded 8-neighbour graph over ``features`` (N x C).

    An edge ``(i, j)`` is kept when ``cos(x_i, x_j) >= P``. Its weight is the
    cosine value, or the matching entry of ``init_weights`` (one value per
    support pair, see :func:`neighbor_support`) when given.
    """
    height, width = grid
    if features.dim() != 2 or features.shape[0] != height * width:
        raise ValueError(f"features have {features.shape[0] if features.dim() else 0} rows, "
                         f"grid {height}x{width} needs {height * width}")
    if not 0.0 <= P <= 1.0:
        raise ValueError(f"similarity threshold P must lie in [0, 1], got {P}")
    src, dst = neighbor_support(height, width, device=features.device)
    cos = neighbor_cosine(features, height, width)
    keep = cos.detach() >= P - _SIM_TOL
    if init_weights is not None:
        if init_weights.numel() != src.numel():
            raise ValueError(f"init_weights has {init_weights.numel()} entries, "
                             f"support has {src.numel()}")
        weight = init_weights.reshape(-1)[keep]
    else:
        weight = cos[keep]
    return SparseGraph(height, width, src[keep], dst[keep], weight)


def add_self_loops(graph: SparseGraph) -> SparseGraph:
    """Return ``A + I``; existing self-loops are replaced by weight 1."""
    off = graph.src != graph.dst
    loops = torch.arange(graph.num_nodes, device=graph.src.device)
    return SparseGraph(
        graph.height, graph.width,
        torch.cat([graph.src[off], loops]),
        torch.cat([graph.dst[off], loops]),
        torch.cat([graph.weight[off], graph.weight.new_ones(graph.num_nodes)]),
    )


def gcn_forward(graph: SparseGraph, features: torch.Tensor, weights: torch.Tensor,
                activation: str = "identity", row_normalize: bool = False,
                log_softmax_dim: str = "channels") -> torch.Tensor:
    """``sigma(A X W)`` by sparse aggregation.

    ``graph`` should already carry self-loops. ``log_softmax_dim`` selects the
    axis normalised by the log-softmax activation: ``"channels"`` normalises
    each node's output row; ``"nodes"`` normalises each channel across the
    graph and adds ``log N`` so a uniform output maps to 0 at any resolution.
    """
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
    if features.shape[-1] != weights.shape[0]:
        raise ValueError(f"features have {features.shape[-1]} channels, "
                         f"weights expect {weights.shape[0]}")
    if features.shape[0] != graph.num_nodes:
        raise ValueError(f"features have {features.shape[0]} rows, graph has {graph.num_nodes} nodes")
    if activation == "log_softmax" and weights.shape[1] == 0:
        raise ValueError("log_softmax needs at least one output channel")

    h = features @ weights
    w = graph.weight.to(h.dtype)
    if row_normalize:
        deg = w.new_zeros(graph.num_nodes).index_add(0, graph.src, w)
        w = w / deg.clamp_min(torch.finfo(w.dtype).tiny)[graph.src]
    z = h.new_zeros(h.shape).index_add(0, graph.src, w.unsqueeze(-1) * h[graph.dst])
    if not bool(torch.isfinite(z).all()):
        raise FloatingPointError("non-finite value in graph aggregation")

    if activation == "relu":
        return F.relu(z)
    if activation == "log_softmax":
        if log_softmax_dim == "channels":
            return F.log_softmax(z, dim=-1)
        if log_softmax_dim == "nodes":
            return F.log_softmax(z, dim=0) + math.log(z.shape[0])
        raise ValueError(f"log_softmax_dim must be 'channels' or 'nodes', got {log_softmax_dim!r}")
    return z


def _slots(graph: SparseGraph) -> tuple[torch.Tensor, torch.Tensor]:
    """Flat ``node * 8 + offset`` slot of every non-loop edge, plus its mask."""
    w = graph.width
    dr = graph.dst // w - graph.src // w
    dc = graph.dst % w - graph.src % w
    lookup = torch.full((9,), -1, dtype=torch.long, device=graph.src.device)
    for (r, c), k in _SLOT.items():
        lookup[(r + 1) * 3 + (c + 1)] = k
    k = lookup[(dr + 1) * 3 + (dc + 1)]
    off = k >= 0
    return graph.src * 8 + k, off


def _slot_table(graph: SparseGraph) -> tuple[torch.Tensor, torch.Tensor]:
    """Edge weights scattered into an ``N x 8`` table plus a presence mask."""
    slot, off = _slots(graph)
    n = graph.num_nodes
    table = graph.weight.new_zeros(n * 8).index_put((slot[off],), graph.weight[off])
    present = torch.zeros(n * 8, dtype=torch.bool, device=graph.src.device)
    present[slot[off]] = True
    return table, present


def upsample_adjacency(graph: SparseGraph) -> SparseGraph:
    """Expand a graph to the ``2x`` grid.

    Each coarse node becomes a 2x2 block. Fine neighbours inside one block are
    joined with weight 1; fine neighbours in different blocks inherit the
    weight of the coarse edge between the blocks, if there is one.
    """
    h, w = graph.height, graph.width
    fh, fw = 2 * h, 2 * w
    table, present = _slot_table(graph)
    src, dst = neighbor_support(fh, fw, device=graph.src.device)
    sr, sc = src // fw, src % fw
    dr, dc = dst // fw, dst % fw
    bs = (sr // 2) * w + sc // 2
    br, bc = dr // 2 - sr // 2, dc // 2 - sc // 2
    same = (br == 0) & (bc == 0)
    lookup = torch.zeros(9, dtype=torch.long, device=src.device)
    for (r, c), k in _SLOT.items():
        lookup[(r + 1) * 3 + (c + 1)] = k
    slot = bs * 8 + lookup[(br + 1) * 3 + (bc + 1)]
    keep = same | (present[slot] & ~same)
    weight = torch.where(same, table.new_ones(()), table[slot])
    return SparseGraph(fh, fw, src[keep], dst[keep], weight[keep])


def merge_adjacency(inherited: SparseGraph, rebuilt: SparseGraph) -> SparseGraph:
    """Topology of ``rebuilt`` with weights taken from ``inherited`` where it has the edge."""
    if (inherited.height, inherited.width) != (rebuilt.height, rebuilt.width):
        raise ValueError("graphs live on different grids")
    table, present = _slot_table(inherited)
    slot, off = _slots(rebuilt)
    slot = slot.clamp_min(0)
    use = off & present[slot]
    weight = torch.where(use, table[slot], rebuilt.weight)
    return SparseGraph(rebuilt.height, rebuilt.width, rebuilt.src, rebuilt.dst, weight)
