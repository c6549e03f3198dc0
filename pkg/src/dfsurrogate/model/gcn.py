"""Graph convolution over the port graph, shared across time steps."""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeMismatch


class GCNLayer(nn.Module):
    """relu(A_norm @ H @ W); no bias term."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_in, d_out))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, h, adj):
        return torch.relu(adj @ (h @ self.weight))


class GCNEncoder(nn.Module):
    def __init__(self, d_f: int, d_h: int, num_layers: int = 2):
        super().__init__()
        dims = [d_f] + [d_h] * num_layers
        self.layers = nn.ModuleList(GCNLayer(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x, adj):
        """(B, T, |V|, d_f) -> (B, T, |V|, d_h); each time step convolved independently."""
        if x.dim() != 4 or x.shape[2] != adj.shape[0] or adj.shape[0] != adj.shape[1]:
            raise ShapeMismatch(f"features {tuple(x.shape)} vs adjacency {tuple(adj.shape)}")
        if x.shape[-1] != self.layers[0].weight.shape[0]:
            raise ShapeMismatch(f"expected d_f={self.layers[0].weight.shape[0]}, got {x.shape[-1]}")
        h = x
        for layer in self.layers:
            h = layer(h, adj)
        return h
