"""SMART network components and thin functional wrappers around them."""

from __future__ import annotations

import numpy as np
import torch

from .gcn import GCNEncoder, GCNLayer
from .llm import (
    HashTokenizer,
    LLMBranch,
    TinyDecoderBackbone,
    build_prompt,
    load_backbone,
    num_patches,
    patchify,
)
from .smart import BranchOutputs, ModelConfig, SmartModel, fuse_and_predict
from .temporal import FlattenedTemporalTransformer, PerNodeTemporalTransformer, TemporalEncoder


def gcn_encode(x: torch.Tensor, adjacency_norm, weights) -> torch.Tensor:
    """Apply relu(A_norm H W_l) for each weight matrix; x is (T, |V|, d_f) or batched."""
    adj = torch.tensor(np.array(adjacency_norm), dtype=x.dtype)
    enc = GCNEncoder(1, 1, len(weights))
    for layer, w in zip(enc.layers, weights):
        w = torch.tensor(np.array(w), dtype=x.dtype)
        layer.weight = torch.nn.Parameter(w, requires_grad=False)
    squeeze = x.dim() == 3
    h = enc(x[None] if squeeze else x, adj)
    return h[0] if squeeze else h


__all__ = [
    "BranchOutputs", "FlattenedTemporalTransformer", "GCNEncoder", "GCNLayer", "HashTokenizer",
    "LLMBranch", "ModelConfig", "PerNodeTemporalTransformer", "SmartModel", "TemporalEncoder",
    "TinyDecoderBackbone", "build_prompt", "fuse_and_predict", "gcn_encode", "load_backbone",
    "num_patches", "patchify",
]
