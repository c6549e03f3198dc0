"""Temporal transformers over sequences of GCN embeddings.

Both variants map H of shape (B, T_inGNN, |V|, d_h) to Z of shape
(B, |V|, d_z). The decoder sees the most recent embedding shifted right
behind a zero start token and predicts the next one in a single step.
"""

from __future__ import annotations

import torch
from torch import nn

from ..errors import ShapeMismatch
from .attention import DecoderBlock, EncoderBlock, sinusoidal_encoding


class TemporalEncoder(nn.Module):
    """Interface for the temporal branch: forward(H) -> Z."""

    d_z: int

    def forward(self, h: torch.Tensor) -> torch.Tensor:  # pragma: no cover - interface
        raise NotImplementedError


class _Seq2One(nn.Module):
    def __init__(self, d_z, n_heads, enc_layers, dec_layers, d_ff, max_len, dropout):
        super().__init__()
        self.encoder = nn.ModuleList(EncoderBlock(d_z, n_heads, d_ff, dropout) for _ in range(enc_layers))
        self.decoder = nn.ModuleList(DecoderBlock(d_z, n_heads, d_ff, dropout) for _ in range(dec_layers))
        self.register_buffer("pe", sinusoidal_encoding(max_len + 1, d_z).float(), persistent=False)

    def forward(self, tokens):
        """tokens: (N, T, d_z) -> (N, d_z) prediction of the next token's state."""
        N, T, d = tokens.shape
        pe = self.pe.to(tokens.dtype)
        memory = tokens + pe[:T]
        for block in self.encoder:
            memory = block(memory)
        start = torch.zeros(N, 1, d, dtype=tokens.dtype, device=tokens.device)
        target = torch.cat([start, tokens[:, -1:]], dim=1) + pe[:2]
        for block in self.decoder:
            target = block(target, memory)
        return target[:, -1]


class FlattenedTemporalTransformer(TemporalEncoder):
    """Each time step is one token of width |V| * d_h, embedded to d_z."""

    def __init__(self, num_nodes, d_h, d_z, n_heads, enc_layers=2, dec_layers=2,
                 d_ff=None, max_len=64, dropout=0.0):
        super().__init__()
        self.num_nodes, self.d_h, self.d_z = num_nodes, d_h, d_z
        self.input_proj = nn.Linear(num_nodes * d_h, d_z)
        self.core = _Seq2One(d_z, n_heads, enc_layers, dec_layers, d_ff or 4 * d_z, max_len, dropout)
        self.output_proj = nn.Linear(d_z, num_nodes * d_z)

    def forward(self, h):
        if h.dim() != 4 or h.shape[2:] != (self.num_nodes, self.d_h):
            raise ShapeMismatch(f"expected (B, T, {self.num_nodes}, {self.d_h}), got {tuple(h.shape)}")
        B, T = h.shape[:2]
        tokens = self.input_proj(h.reshape(B, T, self.num_nodes * self.d_h))
        out = self.core(tokens)
        return self.output_proj(out).view(B, self.num_nodes, self.d_z)


class PerNodeTemporalTransformer(TemporalEncoder):
    """Memory-saving variant: one shared transformer applied to every node's series."""

    def __init__(self, num_nodes, d_h, d_z, n_heads, enc_layers=2, dec_layers=2,
                 d_ff=None, max_len=64, dropout=0.0):
        super().__init__()
        self.num_nodes, self.d_h, self.d_z = num_nodes, d_h, d_z
        self.input_proj = nn.Linear(d_h, d_z)
        self.core = _Seq2One(d_z, n_heads, enc_layers, dec_layers, d_ff or 4 * d_z, max_len, dropout)
        self.output_proj = nn.Linear(d_z, d_z)

    def forward(self, h):
        if h.dim() != 4 or h.shape[2:] != (self.num_nodes, self.d_h):
            raise ShapeMismatch(f"expected (B, T, {self.num_nodes}, {self.d_h}), got {tuple(h.shape)}")
        B, T, V, _ = h.shape
        tokens = self.input_proj(h.permute(0, 2, 1, 3).reshape(B * V, T, self.d_h))
        return self.output_proj(self.core(tokens)).view(B, V, self.d_z)
