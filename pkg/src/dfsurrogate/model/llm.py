"""Frozen language-model forecasting branch.

Each active node's iteration-time history is handled channel-independently:
patches are embedded linearly, reprogrammed into the backbone's embedding
space by cross-attention against learned text prototypes, prefixed with a
prompt describing the window, and run through the frozen backbone. The
hidden states at the patch positions are flattened and projected to d_z.
"""

from __future__ import annotations

import logging
import math
import re
import zlib
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..errors import BackboneUnavailable, SeriesTooShort, ShapeMismatch
from .attention import MultiHeadAttention

log = logging.getLogger(__name__)

PAD_ID = 0


def num_patches(length: int, patch_length: int, stride: int) -> int:
    if patch_length < 1 or stride < 1:
        raise ValueError("patch length and stride must be positive")
    if length < patch_length:
        raise SeriesTooShort(f"series of length {length} is shorter than patch length {patch_length}")
    return (length - patch_length) // stride + 1


def patchify(series: torch.Tensor, patch_length: int, stride: int) -> torch.Tensor:
    """(..., T) -> (..., n_patches, patch_length); a ragged tail is dropped."""
    num_patches(series.shape[-1], patch_length, stride)
    return series.unfold(-1, patch_length, stride)


def _fmt(value: float) -> str:
    return f"{value:g}"


def build_prompt(workload_name: str, window: int, series: Sequence[float]) -> str:
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        raise ValueError("prompt statistics need a non-empty series")
    return (
        f"The dataset contains application iteration times for the {workload_name} workload.\n"
        f"Task description: Forecast the next step given the previous {window} steps information.\n"
        f"Input statistics: min value {_fmt(values.min())}, max value {_fmt(values.max())}, "
        f"median value {_fmt(float(np.median(values)))}"
    )


class HashTokenizer:
    """Words and punctuation hashed into a fixed vocabulary; digits one per token."""

    _pattern = re.compile(r"\d|[A-Za-z]+|[^\sA-Za-z\d]")

    def __init__(self, vocab_size: int = 1024):
        if vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        self.vocab_size = vocab_size

    def tokenize(self, text: str) -> list[str]:
        return self._pattern.findall(text)

    def encode(self, text: str) -> list[int]:
        return [1 + zlib.crc32(tok.encode()) % (self.vocab_size - 1) for tok in self.tokenize(text)]


class FrozenBackbone(nn.Module):
    """A decoder-only transformer whose weights never train.

    Subclasses provide ``d_model``, ``vocab_size``, ``tokenizer``,
    ``word_embeddings`` and ``hidden_states(inputs_embeds, attention_mask)``.
    """

    backbone_id = "abstract"
    pretrained = False

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        return super().train(False)

    def train(self, mode: bool = True):
        # dropout inside a frozen backbone stays off
        return super().train(False)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return nn.functional.embedding(ids, self.word_embeddings)

    def forward(self, inputs_embeds, attention_mask):
        return self.hidden_states(inputs_embeds, attention_mask)


def _positions(mask: torch.Tensor) -> torch.Tensor:
    # left padding: real tokens start at position 0
    return (mask.long().cumsum(-1) - 1).clamp(min=0)


class _Block(nn.Module):
    def __init__(self, d, heads):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))

    def forward(self, x, mask):
        h = self.ln1(x)
        x = x + self.attn(h, h, h, mask)
        return x + self.mlp(self.ln2(x))


class TinyDecoderBackbone(FrozenBackbone):
    """Small randomly initialised GPT-style stack, deterministic in ``seed``."""

    backbone_id = "tiny"

    def __init__(self, vocab_size=1024, d_model=64, n_layers=4, n_heads=4, max_len=1024, seed=0):
        super().__init__()
        self.d_model, self.vocab_size, self.seed = d_model, vocab_size, seed
        self.tokenizer = HashTokenizer(vocab_size)
        self.wte = nn.Embedding(vocab_size, d_model)
        self.wpe = nn.Embedding(max_len, d_model)
        self.blocks = nn.ModuleList(_Block(d_model, n_heads) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(d_model)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                elif "ln" in name:
                    p.fill_(1.0)
                else:
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
        self.freeze()

    @property
    def word_embeddings(self):
        return self.wte.weight

    def hidden_states(self, inputs_embeds, attention_mask):
        L = inputs_embeds.shape[1]
        x = inputs_embeds + self.wpe(_positions(attention_mask))
        causal = torch.ones(L, L, dtype=torch.bool, device=x.device).tril()
        mask = causal[None] & attention_mask[:, None, :].bool()
        for block in self.blocks:
            x = block(x, mask)
        return self.ln_f(x)


class GPT2Backbone(FrozenBackbone):
    """Hugging Face GPT-2, pretrained (``gpt2``) or randomly initialised."""

    def __init__(self, model_id="gpt2", pretrained=True, n_layers=None, d_model=768,
                 n_heads=12, vocab_size=50257, seed=0):
        super().__init__()
        try:
            from transformers import GPT2Config, GPT2Model
        except ImportError as exc:  # pragma: no cover - transformers is installed here
            raise BackboneUnavailable("transformers is not installed") from exc
        self.pretrained = pretrained
        self.backbone_id = model_id if pretrained else f"{model_id}-random"
        if pretrained:
            try:
                from transformers import GPT2Tokenizer

                config = GPT2Config.from_pretrained(model_id)
                if n_layers is not None:
                    # layers beyond the checkpoint's depth start from random init
                    config.n_layer = n_layers
                self.model = GPT2Model.from_pretrained(model_id, config=config)
                self.tokenizer = GPT2Tokenizer.from_pretrained(model_id)
            except Exception as exc:
                raise BackboneUnavailable(f"cannot load {model_id!r}: {exc}") from exc
        else:
            config = GPT2Config(
                n_embd=d_model, n_layer=n_layers or 12, n_head=n_heads, vocab_size=vocab_size,
                resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0,
            )
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self.model = GPT2Model(config)
            self.tokenizer = HashTokenizer(vocab_size)
        self.d_model = self.model.config.n_embd
        self.vocab_size = self.model.config.vocab_size
        self.freeze()

    @property
    def word_embeddings(self):
        return self.model.wte.weight

    def hidden_states(self, inputs_embeds, attention_mask):
        out = self.model(
            inputs_embeds=inputs_embeds,
            attention_mask=attention_mask.long(),
            position_ids=_positions(attention_mask),
        )
        return out.last_hidden_state


def load_backbone(name: str, d_llm: int, llm_layers: int, n_heads: int = 4,
                  vocab_size: int = 1024, seed: int = 0) -> FrozenBackbone:
    """Resolve a backbone id; an unavailable pretrained model falls back to ``tiny``."""
    if name == "tiny":
        return TinyDecoderBackbone(vocab_size, d_llm, llm_layers, n_heads, seed=seed)
    if name.startswith("gpt2"):
        random_init = name.endswith("-random")
        model_id = name[: -len("-random")] if random_init else name
        try:
            return GPT2Backbone(model_id, pretrained=not random_init, n_layers=llm_layers,
                                d_model=d_llm, n_heads=n_heads, seed=seed)
        except BackboneUnavailable as exc:
            log.warning("%s; falling back to the tiny random backbone", exc)
            return TinyDecoderBackbone(vocab_size, d_llm, min(llm_layers, 4), n_heads, seed=seed)
    raise BackboneUnavailable(f"unknown backbone {name!r}")


class ReprogrammingLayer(nn.Module):
    """Cross-attention from patch embeddings onto text prototypes."""

    def __init__(self, d_patch: int, n_heads: int, d_llm: int, d_keys: int | None = None):
        super().__init__()
        d_keys = d_keys or max(1, d_patch // n_heads)
        self.n_heads, self.d_keys = n_heads, d_keys
        self.query_projection = nn.Linear(d_patch, d_keys * n_heads)
        self.key_projection = nn.Linear(d_llm, d_keys * n_heads)
        self.value_projection = nn.Linear(d_llm, d_keys * n_heads)
        self.out_projection = nn.Linear(d_keys * n_heads, d_llm)
        self.last_weights = None

    def forward(self, patches, prototypes):
        B, L, _ = patches.shape
        S = prototypes.shape[0]
        H, E = self.n_heads, self.d_keys
        q = self.query_projection(patches).view(B, L, H, E).transpose(1, 2)
        k = self.key_projection(prototypes).view(S, H, E).transpose(0, 1)
        v = self.value_projection(prototypes).view(S, H, E).transpose(0, 1)
        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(E), dim=-1)
        self.last_weights = weights.detach()
        out = (weights @ v).transpose(1, 2).reshape(B, L, H * E)
        return self.out_projection(out)


class LLMBranch(nn.Module):
    def __init__(self, backbone: FrozenBackbone, window: int, patch_length: int, stride: int,
                 d_z: int, d_patch: int = 32, n_prototypes: int = 100, n_heads: int = 8):
        super().__init__()
        self.backbone = backbone
        self.window, self.patch_length, self.stride = window, patch_length, stride
        self.n_patches = num_patches(window, patch_length, stride)
        d_llm = backbone.d_model
        self.patch_embedding = nn.Linear(patch_length, d_patch)
        self.mapping = nn.Linear(backbone.vocab_size, n_prototypes)
        self.reprogramming = ReprogrammingLayer(d_patch, n_heads, d_llm)
        self.projection = nn.Linear(self.n_patches * d_llm, d_z)

    def adapter_parameters(self):
        for name, p in self.named_parameters():
            if not name.startswith("backbone."):
                yield p

    def prototypes(self) -> torch.Tensor:
        return self.mapping(self.backbone.word_embeddings.T).T

    def forward(self, y, prompt_ids, prompt_mask):
        """y: (B, T, |V_a|) -> F (B, |V_a|, d_z), E (B, |V_a|, n_patches, d_llm)."""
        B, T, Va = y.shape
        if T < self.window:
            raise ShapeMismatch(f"history of {T} steps, branch needs {self.window}")
        series = y[:, -self.window :].permute(0, 2, 1).reshape(B * Va, self.window)
        patches = self.patch_embedding(patchify(series, self.patch_length, self.stride))
        tokens = self.reprogramming(patches, self.prototypes().to(patches.dtype))
        if prompt_ids.shape[0] != B * Va:
            raise ShapeMismatch(f"{prompt_ids.shape[0]} prompts for {B * Va} series")
        prefix = self.backbone.embed_tokens(prompt_ids).to(tokens.dtype)
        embeds = torch.cat([prefix, tokens], dim=1)
        mask = torch.cat(
            [prompt_mask.bool(), torch.ones(B * Va, self.n_patches, dtype=torch.bool, device=y.device)],
            dim=1,
        )
        hidden = self.backbone(embeds, mask)[:, -self.n_patches :]
        E = hidden.reshape(B, Va, self.n_patches, -1)
        F = self.projection(hidden.reshape(B * Va, -1)).view(B, Va, -1)
        return F, E
