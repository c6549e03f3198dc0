"""The full SMART network: GCN + temporal transformer + frozen-LLM branch + fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import torch
from torch import nn

from ..errors import ConfigInvalid, MaskMismatch
from .gcn import GCNEncoder
from .llm import FrozenBackbone, LLMBranch, load_backbone
from .temporal import FlattenedTemporalTransformer, PerNodeTemporalTransformer

if TYPE_CHECKING:
    from ..batch import Batch

ABLATIONS = ("full", "gnn_only", "llm_only")


@dataclass
class ModelConfig:
    d_f: int = 8
    d_h: int = 128
    d_z: int = 128
    gcn_layers: int = 2
    attention_heads: int = 8
    encoder_layers: int = 2
    decoder_layers: int = 2
    patch_length: int = 2
    patch_stride: int = 1
    d_llm: int = 768
    llm_layers: int = 32
    llm_backbone: str = "tiny"
    T_inGNN: int = 2
    T_inLLM: int = 8
    # not fixed by the architecture description
    d_ff: int | None = None
    d_patch: int = 32
    n_prototypes: int = 100
    reprogram_heads: int = 8
    llm_heads: int = 4
    vocab_size: int = 1024
    backbone_seed: int = 0
    temporal_mode: str = "flattened"
    ablation: str = "full"
    dropout: float = 0.0

    def validate(self) -> None:
        counts = ("d_f", "d_h", "d_z", "gcn_layers", "attention_heads", "encoder_layers",
                  "decoder_layers", "patch_length", "patch_stride", "d_llm", "llm_layers",
                  "T_inGNN", "T_inLLM", "d_patch", "n_prototypes", "reprogram_heads", "llm_heads")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be positive")
        if self.d_z % self.attention_heads:
            raise ConfigInvalid("d_z must be divisible by attention_heads")
        if self.patch_length > self.T_inLLM:
            raise ConfigInvalid("patch_length cannot exceed T_inLLM")
        if self.temporal_mode not in ("flattened", "per_node"):
            raise ConfigInvalid(f"unknown temporal_mode {self.temporal_mode!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigInvalid(f"ablation must be one of {ABLATIONS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small widths that train in seconds on a laptop CPU."""
        base = dict(d_h=8, d_z=16, attention_heads=4, d_llm=64, llm_layers=4, d_ff=32,
                    d_patch=16, n_prototypes=32, reprogram_heads=4, llm_heads=4, vocab_size=512)
        base.update(overrides)
        return cls(**base)


class BranchOutputs(NamedTuple):
    H: torch.Tensor  # (B, T_inGNN, |V|, d_h)
    Z: torch.Tensor  # (B, |V|, d_z)
    E: torch.Tensor | None  # (B, |V_a|, n_patches, d_llm)
    F: torch.Tensor  # (B, |V_a|, d_z)


def fuse_and_predict(head: nn.Linear, Z: torch.Tensor, F: torch.Tensor, active) -> torch.Tensor:
    """Gather active rows of Z, concatenate with F row-wise, map to one scalar per node.

    ``active`` is a boolean mask over |V| (active order = ascending id) or an
    index tensor giving the order explicitly.
    """
    active = torch.as_tensor(active, device=Z.device)
    idx = active.nonzero().squeeze(-1) if active.dtype == torch.bool else active.long()
    if active.dtype == torch.bool and active.shape[0] != Z.shape[1]:
        raise MaskMismatch(f"mask over {active.shape[0]} nodes, Z has {Z.shape[1]}")
    if idx.shape[0] != F.shape[1]:
        raise MaskMismatch(f"{idx.shape[0]} active nodes but F has {F.shape[1]} rows")
    za = Z[:, idx]
    return head(torch.cat([za, F], dim=-1)).squeeze(-1)


class SmartModel(nn.Module):
    def __init__(self, config: ModelConfig, adjacency: np.ndarray, active_ids,
                 backbone: FrozenBackbone | None = None):
        super().__init__()
        config.validate()
        self.config = config
        V = adjacency.shape[0]
        self.register_buffer("adj", torch.tensor(np.array(adjacency), dtype=torch.float32))
        self.register_buffer("active_ids", torch.as_tensor(np.asarray(active_ids), dtype=torch.long))
        self.gcn = GCNEncoder(config.d_f, config.d_h, config.gcn_layers)
        temporal_cls = (FlattenedTemporalTransformer if config.temporal_mode == "flattened"
                        else PerNodeTemporalTransformer)
        self.temporal = temporal_cls(V, config.d_h, config.d_z, config.attention_heads,
                                     config.encoder_layers, config.decoder_layers, config.d_ff,
                                     max_len=max(config.T_inGNN, 2), dropout=config.dropout)
        if backbone is None:
            backbone = load_backbone(config.llm_backbone, config.d_llm, config.llm_layers,
                                     config.llm_heads, config.vocab_size, config.backbone_seed)
        self.llm = LLMBranch(backbone, config.T_inLLM, config.patch_length, config.patch_stride,
                             config.d_z, config.d_patch, config.n_prototypes, config.reprogram_heads)
        self.head = nn.Linear(2 * config.d_z, 1)

    @property
    def backbone(self) -> FrozenBackbone:
        return self.llm.backbone

    @property
    def tokenizer(self):
        return self.backbone.tokenizer

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "gcn": list(self.gcn.parameters()),
            "temporal": list(self.temporal.parameters()),
            "llm_adapter": list(self.llm.adapter_parameters()),
            "head": list(self.head.parameters()),
            "backbone": list(self.backbone.parameters()),
        }

    def trainable_parameters(self) -> list[nn.Parameter]:
        groups = self.parameter_groups()
        return [p for name, ps in groups.items() if name != "backbone" for p in ps]

    def branches(self, batch: "Batch") -> BranchOutputs:
        cfg = self.config
        B = batch.x.shape[0]
        Va = self.active_ids.shape[0]
        dtype = batch.x.dtype
        H = self.gcn(batch.x[:, -cfg.T_inGNN:], self.adj.to(dtype))
        if cfg.ablation == "llm_only":
            Z = torch.zeros(B, self.adj.shape[0], cfg.d_z, dtype=dtype, device=batch.x.device)
        else:
            Z = self.temporal(H)
        if cfg.ablation == "gnn_only":
            E = None
            F = torch.zeros(B, Va, cfg.d_z, dtype=dtype, device=batch.x.device)
        else:
            F, E = self.llm(batch.y, batch.prompt_ids, batch.prompt_mask)
        return BranchOutputs(H, Z, E, F)

    def forward(self, batch: "Batch") -> torch.Tensor:
        out = self.branches(batch)
        return fuse_and_predict(self.head, out.Z, out.F, self.active_ids)
