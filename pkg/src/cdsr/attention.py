"""Causal self-attention sequence encoder (two single-head blocks).

Block layout follows the SASRec arrangement: the query stream is layer-
normalized before attention, the attention output is added back onto it,
then a normalized point-wise feed-forward sublayer with its own residual.
A final layer norm closes the stack. Pad positions stay attendable; only
the causal mask is applied.
"""

from __future__ import annotations

import torch
from torch import nn

ACTIVATIONS = {"relu": nn.ReLU, "gelu": nn.GELU}


def causal_mask(length: int, device=None) -> torch.Tensor:
    # True marks a disallowed (future) key.
    return torch.triu(torch.ones(length, length, dtype=torch.bool, device=device), diagonal=1)


def embed_sequence(view: torch.Tensor, table: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
    """Row t is ``table[view[t]] + positions[t]``.

    ``view`` is (batch, length) or (length,); the pad row of ``table`` must be
    zero so pad slots carry only their position embedding.
    """
    length = view.shape[-1]
    if length > positions.shape[0]:
        raise ValueError(f"sequence length {length} exceeds position table size {positions.shape[0]}")
    if view.numel() and (view.min() < 0 or view.max() >= table.shape[0]):
        raise IndexError(f"item index out of range for table with {table.shape[0]} rows")
    return table[view] + positions[:length]


class PointWiseFeedForward(nn.Module):
    def __init__(self, dim: int, dropout: float, activation: str = "relu"):
        super().__init__()
        self.inner = nn.Linear(dim, dim)
        self.outer = nn.Linear(dim, dim)
        self.act = ACTIVATIONS[activation]()
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return x + self.dropout(self.outer(self.dropout(self.act(self.inner(x)))))


class AttentionEncoder(nn.Module):
    def __init__(self, dim: int, n_blocks: int = 2, dropout: float = 0.3, activation: str = "relu"):
        super().__init__()
        self.attn_norms = nn.ModuleList(nn.LayerNorm(dim, eps=1e-8) for _ in range(n_blocks))
        self.attns = nn.ModuleList(
            nn.MultiheadAttention(dim, num_heads=1, dropout=0.0, batch_first=True) for _ in range(n_blocks)
        )
        self.ffn_norms = nn.ModuleList(nn.LayerNorm(dim, eps=1e-8) for _ in range(n_blocks))
        self.ffns = nn.ModuleList(PointWiseFeedForward(dim, dropout, activation) for _ in range(n_blocks))
        self.last_norm = nn.LayerNorm(dim, eps=1e-8)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Encode already-embedded inputs of shape (batch, length, dim)."""
        mask = causal_mask(x.shape[1], x.device)
        x = self.dropout(x)
        for attn_norm, attn, ffn_norm, ffn in zip(self.attn_norms, self.attns, self.ffn_norms, self.ffns):
            q = attn_norm(x)
            out, _ = attn(q, x, x, attn_mask=mask, need_weights=False)
            x = q + self.dropout(out)
            x = ffn(ffn_norm(x))
        return self.last_norm(x)
