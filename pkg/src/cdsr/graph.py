"""Weight-free graph propagation over item transition graphs.

Each layer is ``G_{l+1} = Norm(A) @ G_l`` with no learned transform and no
nonlinearity; the smoothed table is the mean over layers 0..L plus a
residual copy of the input embeddings.
"""

from __future__ import annotations

import numpy as np
import torch


def row_normalize(adj):
    """Scale every nonzero row to sum to one; all-zero rows stay zero.

    Accepts a dense numpy array or a dense/sparse torch tensor and returns
    the same kind.
    """
    if isinstance(adj, np.ndarray):
        deg = adj.sum(axis=1, keepdims=True)
        out = np.zeros_like(adj, dtype=np.float64)
        nz = deg[:, 0] > 0
        out[nz] = adj[nz] / deg[nz]
        return out
    if adj.is_sparse:
        adj = adj.coalesce()
        idx, val = adj.indices(), adj.values()
        deg = torch.zeros(adj.shape[0], dtype=val.dtype).index_add_(0, idx[0], val)
        return torch.sparse_coo_tensor(idx, val / deg[idx[0]], adj.shape, check_invariants=True).coalesce()
    deg = adj.sum(dim=1, keepdim=True)
    return torch.where(deg > 0, adj / deg.clamp_min(1e-30), torch.zeros_like(adj))


def normalized_adjacency(edges: np.ndarray, n: int, dtype=torch.float32) -> torch.Tensor:
    """Row-normalized sparse adjacency built straight from a unique edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        idx = torch.zeros(2, 0, dtype=torch.long)
        return torch.sparse_coo_tensor(idx, torch.zeros(0, dtype=dtype), (n, n), check_invariants=True)
    deg = np.bincount(edges[:, 0], minlength=n).astype(np.float64)
    values = torch.as_tensor(1.0 / deg[edges[:, 0]], dtype=dtype)
    idx = torch.as_tensor(edges.T.copy())
    return torch.sparse_coo_tensor(idx, values, (n, n), check_invariants=True).coalesce()


def propagate(a_norm: torch.Tensor, emb: torch.Tensor, n_layers: int) -> list[torch.Tensor]:
    """Return ``[G_0 = emb, G_1, ..., G_L]``."""
    if n_layers < 0:
        raise ValueError("n_layers must be >= 0")
    if a_norm.shape[1] != emb.shape[0]:
        raise ValueError(f"adjacency {tuple(a_norm.shape)} incompatible with embeddings {tuple(emb.shape)}")
    layers = [emb]
    for _ in range(n_layers):
        prev = layers[-1]
        layers.append(torch.sparse.mm(a_norm, prev) if a_norm.is_sparse else a_norm @ prev)
    return layers


def aggregate_layers(layers: list[torch.Tensor], emb: torch.Tensor) -> torch.Tensor:
    if not layers:
        raise ValueError("need at least one layer")
    return torch.stack(layers).mean(dim=0) + emb


def smooth_embeddings(a_norm: torch.Tensor, emb: torch.Tensor, n_layers: int) -> torch.Tensor:
    # L=0 disables the graph module outright: no residual doubling.
    if n_layers == 0:
        return emb
    return aggregate_layers(propagate(a_norm, emb, n_layers), emb)
