import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from graphdepth.graph import (SparseGraph, add_self_loops, build_adjacency, gcn_forward,
                              merge_adjacency, neighbor_support, support_size, upsample_adjacency)


def dense_adjacency(features: np.ndarray, h: int, w: int, P: float) -> np.ndarray:
    """Reference: cosine over every pair of 8-neighbours, thresholded at P."""
    n = h * w
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ri, ci, rj, cj = i // w, i % w, j // w, j % w
            if i == j or max(abs(ri - rj), abs(ci - cj)) != 1:
                continue
            a, b = features[i], features[j]
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            if na == 0 or nb == 0:
                cos = 1.0 if na == nb else 0.0
            else:
                cos = float(a @ b / (na * nb))
            if cos >= P - 1e-6:
                A[i, j] = cos
    return A


def dense_gcn(A, X, W, activation):
    Z = (A + np.eye(len(A))) @ X @ W
    if activation == "relu":
        return np.maximum(Z, 0)
    if activation == "log_softmax":
        m = Z.max(1, keepdims=True)
        return Z - m - np.log(np.exp(Z - m).sum(1, keepdims=True))
    return Z


def _graph(edges, h, w):
    src, dst, wt = zip(*edges) if edges else ((), (), ())
    return SparseGraph(h, w, torch.tensor(src, dtype=torch.long), torch.tensor(dst, dtype=torch.long),
                       torch.tensor(wt, dtype=torch.float64))


def test_two_by_two_all_equal_keeps_every_neighbour():
    g = build_adjacency(torch.ones(4, 3), (2, 2), 0.0)
    assert g.num_edges == 12
    g.validate()


def test_orthogonal_node_is_isolated():
    x = torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    g = build_adjacency(x, (2, 2), 0.7)
    assert not bool(((g.src == 0) | (g.dst == 0)).any())
    assert g.num_edges == 6


def test_three_by_three_degrees():
    x = torch.ones(9, 2) / math.sqrt(2)
    g = build_adjacency(x, (3, 3), 0.7)
    out = torch.bincount(g.src, minlength=9)
    assert out[4] == 8
    assert [int(out[c]) for c in (0, 2, 6, 8)] == [3, 3, 3, 3]


def test_feature_grid_mismatch():
    with pytest.raises(ValueError, match="grid"):
        build_adjacency(torch.ones(5, 2), (2, 2), 0.5)


def test_zero_feature_convention():
    x = torch.tensor([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    edges = build_adjacency(x, (2, 2), 0.5).edge_dict()
    assert edges[(0, 1)] == 1.0
    assert (0, 2) not in edges and (1, 3) not in edges
    assert edges[(2, 3)] == pytest.approx(1.0)


def test_self_loops_on_empty_graph():
    g = add_self_loops(_graph([], 2, 2))
    assert g.num_edges == 4
    assert sorted(g.edge_dict().items()) == [((i, i), 1.0) for i in range(4)]


def test_self_loops_keep_edges_and_are_idempotent():
    g = add_self_loops(_graph([(0, 1, 0.3)], 1, 2))
    assert g.edge_dict() == {(0, 1): 0.3, (0, 0): 1.0, (1, 1): 1.0}
    assert add_self_loops(g).edge_dict() == g.edge_dict()


def test_identity_graph_passes_features_through():
    g = add_self_loops(_graph([], 2, 2))
    x = torch.rand(4, 3, dtype=torch.float64)
    out = gcn_forward(g, x, torch.eye(3, dtype=torch.float64), "relu")
    assert torch.equal(out, x)


def test_two_node_hand_case():
    g = add_self_loops(_graph([(0, 1, 1.0), (1, 0, 1.0)], 1, 2))
    x = torch.tensor([[1.0], [3.0]], dtype=torch.float64)
    out = gcn_forward(g, x, torch.ones(1, 1, dtype=torch.float64))
    assert out.tolist() == [[4.0], [4.0]]


def test_log_softmax_rows_normalised(rng):
    x = torch.from_numpy(rng.normal(size=(9, 4)))
    g = add_self_loops(build_adjacency(x, (3, 3), 0.2))
    out = gcn_forward(g, x, torch.from_numpy(rng.normal(size=(4, 5))), "log_softmax")
    assert torch.allclose(out.exp().sum(1), torch.ones(9, dtype=torch.float64), atol=1e-6)


def test_node_log_softmax_is_zero_for_uniform_output():
    g = add_self_loops(_graph([], 4, 4))
    out = gcn_forward(g, torch.ones(16, 1), torch.ones(1, 1), "log_softmax",
                      log_softmax_dim="nodes")
    assert torch.allclose(out, torch.zeros(16, 1), atol=1e-6)


def test_gcn_rejects_bad_inputs():
    g = add_self_loops(_graph([], 2, 2))
    with pytest.raises(ValueError, match="activation"):
        gcn_forward(g, torch.ones(4, 2), torch.ones(2, 1), "tanh")
    with pytest.raises(ValueError, match="output channel"):
        gcn_forward(g, torch.ones(4, 2), torch.ones(2, 0), "log_softmax")
    with pytest.raises(ValueError, match="channels"):
        gcn_forward(g, torch.ones(4, 3), torch.ones(2, 1))
    with pytest.raises(FloatingPointError):
        gcn_forward(g, torch.full((4, 2), float("inf")), torch.ones(2, 1))


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 8), w=st.integers(1, 8), c=st.integers(1, 4), P=st.floats(0, 1),
       act=st.sampled_from(["identity", "relu", "log_softmax"]), seed=st.integers(0, 2**31 - 1))
def test_matches_dense_oracle(h, w, c, P, act, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(h * w, c))
    W = r.normal(size=(c, 3))
    g = add_self_loops(build_adjacency(torch.from_numpy(x), (h, w), P))
    g.validate()
    out = gcn_forward(g, torch.from_numpy(x), torch.from_numpy(W), act).numpy()
    ref = dense_gcn(dense_adjacency(x, h, w, P), x, W, act)
    np.testing.assert_allclose(out, ref, atol=1e-6, rtol=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(-5, 5))
def test_linear_in_features(seed, alpha):
    r = np.random.default_rng(seed)
    x = torch.from_numpy(r.normal(size=(12, 3)))
    W = torch.from_numpy(r.normal(size=(3, 2)))
    g = add_self_loops(build_adjacency(x, (3, 4), 0.3))
    torch.testing.assert_close(gcn_forward(g, alpha * x, W), alpha * gcn_forward(g, x, W),
                               atol=1e-12, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), p1=st.floats(0, 1), p2=st.floats(0, 1))
def test_threshold_monotonic(seed, p1, p2):
    p1, p2 = sorted((p1, p2))
    x = torch.from_numpy(np.random.default_rng(seed).normal(size=(20, 3)))
    loose = set(build_adjacency(x, (4, 5), p1).edge_dict())
    tight = set(build_adjacency(x, (4, 5), p2).edge_dict())
    assert tight <= loose


def test_threshold_one_keeps_only_aligned_pairs():
    x = torch.tensor([[1.0, 0.0], [2.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
    edges = set(build_adjacency(x, (2, 2), 1.0).edge_dict())
    assert edges == {(0, 1), (1, 0)}


def test_init_weights_select_by_support_position():
    src, dst = neighbor_support(2, 3)
    init = torch.arange(src.numel(), dtype=torch.float64) / 100
    g = build_adjacency(torch.ones(6, 1, dtype=torch.float64), (2, 3), 0.0, init)
    got = g.edge_dict()
    for k, (s, d) in enumerate(zip(src.tolist(), dst.tolist())):
        assert got[(s, d)] == pytest.approx(k / 100)
    with pytest.raises(ValueError, match="init_weights"):
        build_adjacency(torch.ones(6, 1), (2, 3), 0.0, torch.ones(3))


def test_support_size_counts_pairs():
    for h, w in [(1, 1), (1, 5), (2, 2), (3, 7)]:
        assert support_size(h, w) == neighbor_support(h, w)[0].numel()
    assert support_size(2, 2) == 12


def test_gradient_wrt_weights():
    r = np.random.default_rng(0)
    x = torch.from_numpy(r.normal(size=(9, 3)))
    g = add_self_loops(build_adjacency(x, (3, 3), 0.0))
    W = torch.from_numpy(r.normal(size=(3, 2))).requires_grad_()
    assert torch.autograd.gradcheck(lambda w: gcn_forward(g, x, w, "log_softmax"), (W,),
                                    eps=1e-6, atol=1e-8, rtol=1e-4)


def test_gradient_wrt_edge_weights():
    r = np.random.default_rng(1)
    x = torch.from_numpy(r.normal(size=(9, 3)))
    W = torch.from_numpy(r.normal(size=(3, 2)))
    base = build_adjacency(x, (3, 3), 0.0)

    def run(wt):
        g = add_self_loops(SparseGraph(3, 3, base.src, base.dst, wt))
        return gcn_forward(g, x, W, "identity", row_normalize=True)

    wt = torch.from_numpy(r.uniform(0.2, 1.0, base.num_edges)).requires_grad_()
    assert torch.autograd.gradcheck(run, (wt,), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_upsample_single_block():
    g = upsample_adjacency(_graph([], 1, 1))
    assert (g.height, g.width) == (2, 2)
    assert g.num_edges == 12
    assert set(g.edge_dict().values()) == {1.0}


def test_upsample_cross_block_weight():
    g = upsample_adjacency(_graph([(0, 1, 0.5), (1, 0, 0.5)], 1, 2))
    g.validate()
    assert g.num_nodes == 8
    for (s, d), wt in g.edge_dict().items():
        cross = (s % 4) // 2 != (d % 4) // 2
        assert wt == (0.5 if cross else 1.0)
    # fine columns 1 and 2 touch across the block boundary: straight and diagonal pairs
    cross_pairs = {(s, d) for (s, d) in g.edge_dict() if (s % 4) // 2 != (d % 4) // 2}
    assert cross_pairs == {(1, 2), (1, 6), (5, 2), (5, 6), (2, 1), (2, 5), (6, 1), (6, 5)}


def test_upsample_without_coarse_edge_keeps_blocks_apart():
    g = upsample_adjacency(_graph([], 1, 2))
    assert all((s % 4) // 2 == (d % 4) // 2 for s, d in g.edge_dict())


def test_merge_takes_inherited_weights():
    rebuilt = _graph([(0, 1, 0.9), (1, 0, 0.8)], 1, 2)
    inherited = _graph([(0, 1, 0.2)], 1, 2)
    assert merge_adjacency(inherited, rebuilt).edge_dict() == {(0, 1): 0.2, (1, 0): 0.8}
    with pytest.raises(ValueError):
        merge_adjacency(_graph([], 2, 2), rebuilt)


def test_validate_catches_broken_graphs():
    with pytest.raises(ValueError, match="8-neighbourhood"):
        _graph([(0, 2, 1.0)], 1, 3).validate()
    with pytest.raises(ValueError, match="duplicate"):
        _graph([(0, 1, 1.0), (0, 1, 0.5)], 1, 2).validate()
    with pytest.raises(ValueError, match="non-negative"):
        _graph([(0, 1, -1.0)], 1, 2).validate()


def test_finest_level_graph_is_sparse():
    h, w = 160, 512
    x = torch.rand(h * w, 4)
    g = build_adjacency(x, (h, w), 0.7)
    assert g.num_nodes == 81920
    assert g.num_edges <= 8 * g.num_nodes
    g = add_self_loops(g)
    out = gcn_forward(g, x, torch.rand(4, 1), "relu")
    assert out.shape == (81920, 1)
