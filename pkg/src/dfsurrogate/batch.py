"""Normalisation statistics and tensor batches built from window samples."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from .ingest import WindowSample
from .model.llm import PAD_ID, build_prompt


@dataclass
class Normalizer:
    """Z-score statistics fitted on the offline training split only."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, samples: Sequence[WindowSample]) -> "Normalizer":
        if not samples:
            raise ValueError("cannot fit normalisation on zero samples")
        # first sample's histories plus every later step: each iteration counted once
        first = samples[0]
        ys = np.concatenate([first.y_hist.reshape(-1)] + [s.target for s in samples])
        xs = np.concatenate([first.x_hist] + [s.x_hist[-1:] for s in samples[1:]])
        xs = xs.reshape(-1, xs.shape[-1])
        f_std = xs.std(axis=0)
        y_std = float(ys.std())
        return cls(
            xs.mean(axis=0),
            np.where(f_std > 0, f_std, 1.0),
            float(ys.mean()),
            y_std if y_std > 0 else 1.0,
        )

    def x(self, values):
        return (values - self.feature_mean) / self.feature_std

    def y(self, values):
        return (values - self.y_mean) / self.y_std

    def y_inverse(self, values):
        return values * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_mean"] = self.feature_mean.tolist()
        d["feature_std"] = self.feature_std.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["feature_mean"]), np.asarray(d["feature_std"]),
                   float(d["y_mean"]), float(d["y_std"]))


@dataclass
class Batch:
    x: torch.Tensor  # (B, L_x, |V|, d_f) normalised
    y: torch.Tensor  # (B, L_y, |V_a|) normalised
    prompt_ids: torch.Tensor  # (B * |V_a|, L_p), left padded
    prompt_mask: torch.Tensor  # (B * |V_a|, L_p)
    target: torch.Tensor  # (B, |V_a|) normalised

    def __len__(self) -> int:
        return self.x.shape[0]

    def to(self, dtype) -> "Batch":
        return Batch(self.x.to(dtype), self.y.to(dtype), self.prompt_ids, self.prompt_mask,
                     self.target.to(dtype))

    def subset(self, idx) -> "Batch":
        idx = torch.as_tensor(idx, dtype=torch.long)
        Va = self.y.shape[-1]
        ids, mask = self.prompt_ids, self.prompt_mask
        if ids.shape[0]:
            rows = (idx[:, None] * Va + torch.arange(Va)).reshape(-1)
            ids, mask = ids[rows], mask[rows]
        return Batch(self.x[idx], self.y[idx], ids, mask, self.target[idx])


class Collator:
    """Turns WindowSamples into Batches; prompts are tokenised once and cached."""

    def __init__(self, normalizer: Normalizer, tokenizer=None, workload_name: str = "",
                 prompt_window: int | None = None, dtype=torch.float32):
        self.normalizer = normalizer
        self.tokenizer = tokenizer
        self.workload_name = workload_name
        self.prompt_window = prompt_window
        self.dtype = dtype
        self._cache: dict[tuple, list[int]] = {}

    def _prompt_ids(self, series: np.ndarray) -> list[int]:
        key = tuple(series.tolist())
        ids = self._cache.get(key)
        if ids is None:
            text = build_prompt(self.workload_name, len(series), series)
            ids = self._cache[key] = list(self.tokenizer.encode(text))
        return ids

    def __call__(self, samples: Sequence[WindowSample]) -> Batch:
        nz = self.normalizer
        x = np.stack([nz.x(s.x_hist) for s in samples])
        y = np.stack([nz.y(s.y_hist) for s in samples])
        target = np.stack([nz.y(s.target) for s in samples])
        prompts = []
        if self.tokenizer is not None:
            w = self.prompt_window or samples[0].y_hist.shape[0]
            for s in samples:
                for j in range(s.y_hist.shape[1]):
                    prompts.append(self._prompt_ids(s.y_hist[-w:, j]))
        width = max((len(p) for p in prompts), default=0)
        ids = torch.full((len(prompts), width), PAD_ID, dtype=torch.long)
        mask = torch.zeros((len(prompts), width), dtype=torch.bool)
        for i, p in enumerate(prompts):
            if p:
                ids[i, width - len(p):] = torch.tensor(p)
                mask[i, width - len(p):] = True
        return Batch(
            torch.as_tensor(x, dtype=self.dtype),
            torch.as_tensor(y, dtype=self.dtype),
            ids,
            mask,
            torch.as_tensor(target, dtype=self.dtype),
        )
