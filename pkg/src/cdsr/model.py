"""The cross-domain sequential recommender: embedding tables, graph
smoothing, three attention stacks, shared prediction heads and the two
bilinear discriminators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import objectives as obj
from .attention import AttentionEncoder, embed_sequence
from .corpus import TransitionGraph
from .graph import normalized_adjacency, smooth_embeddings

ENCODERS = ("X", "Y", "merged")
SCORING_MODES = ("both", "single", "cross")


@dataclass
class Batch:
    merged: torch.Tensor  # (B, T) merged indices, right-padded with n_x + n_y
    lengths: torch.Tensor  # (B,)

    def __len__(self):
        return self.merged.shape[0]


def make_batch(sequences: Sequence[Sequence[int]], pad: int, device=None) -> Batch:
    if not sequences:
        raise ValueError("empty batch")
    length = max(len(s) for s in sequences)
    merged = torch.full((len(sequences), length), pad, dtype=torch.long)
    for row, s in enumerate(sequences):
        merged[row, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    lengths = torch.as_tensor([len(s) for s in sequences], dtype=torch.long)
    return Batch(merged.to(device), lengths.to(device))


def _table(rows: int, dim: int) -> nn.Parameter:
    w = torch.randn(rows + 1, dim) / dim**0.5
    w[-1] = 0.0  # pad row
    return nn.Parameter(w)


class CrossDomainRecommender(nn.Module):
    def __init__(
        self,
        n_x: int,
        n_y: int,
        max_len: int,
        dim: int = 256,
        n_layers: int = 1,
        dropout: float = 0.3,
        n_blocks: int = 2,
        activation: str = "relu",
        graph: TransitionGraph | None = None,
    ):
        super().__init__()
        self.n_x, self.n_y, self.max_len, self.dim, self.n_layers = n_x, n_y, max_len, dim, n_layers
        self.emb_x = _table(n_x, dim)
        self.emb_y = _table(n_y, dim)
        self.emb = _table(n_x + n_y, dim)
        self.positions = nn.Parameter(torch.randn(max_len, dim) / dim**0.5)
        self.encoders = nn.ModuleDict({k: AttentionEncoder(dim, n_blocks, dropout, activation) for k in ENCODERS})
        self.w_x = nn.Parameter(torch.randn(dim, n_x) / dim**0.5)
        self.w_y = nn.Parameter(torch.randn(dim, n_y) / dim**0.5)
        self.disc_x = nn.Parameter(torch.randn(dim, dim) / dim)
        self.disc_y = nn.Parameter(torch.randn(dim, dim) / dim)
        if graph is None:
            empty = np.zeros((0, 2), dtype=np.int64)
            graph = TransitionGraph(n_x, n_y, empty, empty, empty)
        self.register_buffer("adj_x", normalized_adjacency(graph.edges_x, n_x), persistent=False)
        self.register_buffer("adj_y", normalized_adjacency(graph.edges_y, n_y), persistent=False)
        self.register_buffer("adj", normalized_adjacency(graph.edges, n_x + n_y), persistent=False)

    @property
    def pad(self) -> int:
        return self.n_x + self.n_y

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {
            "emb_x": [self.emb_x],
            "emb_y": [self.emb_y],
            "emb": [self.emb],
            "positions": [self.positions],
            "w_x": [self.w_x],
            "w_y": [self.w_y],
            "disc_x": [self.disc_x],
            "disc_y": [self.disc_y],
        }
        for k in ENCODERS:
            groups[f"encoder_{k}"] = list(self.encoders[k].parameters())
        return groups

    def item_tables(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Graph-smoothed tables for the X view, Y view and merged sequence,
        each with a structurally zero pad row appended."""
        out = []
        for adj, emb in ((self.adj_x, self.emb_x), (self.adj_y, self.emb_y), (self.adj, self.emb)):
            g = smooth_embeddings(adj, emb[:-1], self.n_layers)
            out.append(torch.cat([g, g.new_zeros(1, self.dim)]))
        return tuple(out)

    def views(self, merged: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Domain-local X and Y views aligned to the merged timeline."""
        is_x = merged < self.n_x
        is_y = (merged >= self.n_x) & (merged < self.pad)
        x_view = torch.where(is_x, merged, torch.full_like(merged, self.n_x))
        y_view = torch.where(is_y, merged - self.n_x, torch.full_like(merged, self.n_y))
        return x_view, y_view

    def encode(self, which: str, view: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
        return self.encoders[which](embed_sequence(view, table, self.positions))

    def forward(self, merged: torch.Tensor, tables=None) -> dict[str, torch.Tensor]:
        g_x, g_y, g = tables if tables is not None else self.item_tables()
        x_view, y_view = self.views(merged)
        return {
            "H_x": self.encode("X", x_view, g_x),
            "H_y": self.encode("Y", y_view, g_y),
            "H": self.encode("merged", merged, g),
        }

    def losses(
        self,
        batch: Batch,
        generator: torch.Generator | None = None,
        single: bool = True,
        infomax: bool = True,
    ) -> dict[str, torch.Tensor]:
        """The five loss sums for one batch.

        Disabled terms come back as zero tensors. Corrupted sequences are
        encoded in the same pass as the real merged sequences.
        """
        merged, lengths = batch.merged, batch.lengths
        tables = self.item_tables()
        g_x, g_y, g = tables
        x_view, y_view = self.views(merged)
        B = merged.shape[0]
        merged_inputs = [merged]
        if infomax:
            corrupt_x = obj.corrupt(merged, "X", self.n_x, self.n_y, generator)
            corrupt_y = obj.corrupt(merged, "Y", self.n_x, self.n_y, generator)
            merged_inputs += [corrupt_x, corrupt_y]
        H_all = self.encode("merged", torch.cat(merged_inputs), g)
        H = H_all[:B]
        targets = obj.target_masks(merged, lengths, self.n_x)
        zero = H.sum() * 0.0
        out = {"cross": obj.cross_domain_loss(H, self.w_x, self.w_y, targets)}
        if single or infomax:
            H_x = self.encode("X", x_view, g_x)
            H_y = self.encode("Y", y_view, g_y)
        if single:
            out["single_x"] = obj.single_domain_loss(H_x, H, self.w_x, targets["next_x"], targets["mask_x"])
            out["single_y"] = obj.single_domain_loss(H_y, H, self.w_y, targets["next_y"], targets["mask_y"])
        else:
            out["single_x"] = out["single_y"] = zero
        if infomax:
            is_x = merged < self.n_x
            is_y = (merged >= self.n_x) & (merged < self.pad)
            H_cx, H_cy = H_all[B : 2 * B], H_all[2 * B :]
            o_single_x = obj.single_prototype(H_x, lengths)
            o_single_y = obj.single_prototype(H_y, lengths)
            o_cross_x = obj.cross_prototype(H, is_x)
            o_cross_y = obj.cross_prototype(H, is_y)
            # Y slots of corrupt_x are fake, so its X-position prototype is the negative for domain Y,
            # and symmetrically for corrupt_y.
            neg_cross_x = obj.cross_prototype(H_cx, is_x)
            neg_cross_y = obj.cross_prototype(H_cy, is_y)
            out["disc_x"] = obj.infomax_loss(o_single_x, o_cross_y, neg_cross_y, self.disc_x)
            out["disc_y"] = obj.infomax_loss(o_single_y, o_cross_x, neg_cross_x, self.disc_y)
        else:
            out["disc_x"] = out["disc_y"] = zero
        return out

    @torch.no_grad()
    def last_logits(self, batch: Batch, domain: str, mode: str = "both", tables=None) -> torch.Tensor:
        """Full-vocabulary logits of ``domain`` at each sequence's last position."""
        if mode not in SCORING_MODES:
            raise ValueError(f"scoring mode must be one of {SCORING_MODES}")
        if tables is None:
            tables = self.item_tables()
        g_x, g_y, g = tables
        rows = torch.arange(len(batch), device=batch.merged.device)
        last = batch.lengths - 1
        h = self.encode("merged", batch.merged, g)[rows, last] if mode != "single" else None
        h_view = None
        if mode != "cross":
            x_view, y_view = self.views(batch.merged)
            if domain == "X":
                h_view = self.encode("X", x_view, g_x)[rows, last]
            else:
                h_view = self.encode("Y", y_view, g_y)[rows, last]
        return obj.prediction_logits(h_view, h, self.w_x if domain == "X" else self.w_y)
