"""Reference predictors: LAST, MEAN(W), LSTM and a DCRNN-style model."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigInvalid, ShapeMismatch, WindowTooLong
from .ingest import WindowSample

KINDS = ("last", "mean", "lstm", "dcrnn")


@dataclass
class BaselineConfig:
    kind: str = "last"
    W: int | None = None  # MEAN window and LSTM/DCRNN history; None -> T_inGNN
    hidden: int = 64
    layers: int = 1
    K: int = 2

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigInvalid(f"baseline kind must be one of {KINDS}, got {self.kind!r}")
        if self.W is not None and self.W < 1:
            raise ConfigInvalid("W must be >= 1")
        if self.hidden < 1 or self.layers < 1:
            raise ConfigInvalid("hidden and layers must be positive")
        if self.K < 0:
            raise ConfigInvalid("K must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def predict_last(sample: WindowSample) -> np.ndarray:
    return sample.y_hist[-1].astype(np.float64)


def predict_mean(sample: WindowSample, W: int) -> np.ndarray:
    if W < 1:
        raise ValueError("W must be >= 1")
    if W > sample.y_hist.shape[0]:
        raise WindowTooLong(f"W={W} exceeds the {sample.y_hist.shape[0]}-step history")
    return sample.y_hist[-W:].astype(np.float64).mean(axis=0)


class LSTMModel(nn.Module):
    """Per-node recurrent model over the iteration-time history; weights shared across nodes."""

    def __init__(self, window: int, hidden: int = 64, layers: int = 1):
        super().__init__()
        self.window = window
        self.lstm = nn.LSTM(1, hidden, layers, batch_first=True)
        self.head = nn.Linear(hidden, 1)

    def forward(self, batch) -> torch.Tensor:
        y = batch.y
        if y.dim() != 3 or y.shape[1] < self.window:
            raise ShapeMismatch(f"need (B, >={self.window}, |V_a|) history, got {tuple(y.shape)}")
        B, _, Va = y.shape
        seq = y[:, -self.window :].permute(0, 2, 1).reshape(B * Va, self.window, 1)
        out, _ = self.lstm(seq)
        return self.head(out[:, -1]).view(B, Va)


def random_walk_supports(adjacency: np.ndarray, K: int) -> list[np.ndarray]:
    """[(D_O^-1 A)^k for k=1..K] + [(D_I^-1 A^T)^k for k=1..K], dense."""
    a = np.asarray(adjacency, dtype=np.float64)
    supports = []
    for m in (a, a.T):
        deg = m.sum(axis=1)
        p = np.divide(m, deg[:, None], out=np.zeros_like(m), where=deg[:, None] > 0)
        power = np.eye(len(a))
        for _ in range(K):
            power = p @ power
            supports.append(power.copy())
    return supports


class DiffusionConv(nn.Module):
    """sum_k (P_f^k X W_fk + P_b^k X W_bk), including the k=0 identity term."""

    def __init__(self, supports: torch.Tensor, d_in: int, d_out: int, bias_init: float = 0.0):
        super().__init__()
        self.register_buffer("supports", supports)  # (2K, N, N)
        n_mats = supports.shape[0] + 1
        self.weight = nn.Parameter(torch.empty(n_mats, d_in, d_out))
        nn.init.xavier_uniform_(self.weight.view(n_mats * d_in, d_out))
        self.bias = nn.Parameter(torch.full((d_out,), bias_init))

    def forward(self, x):
        """x: (B, N, d_in) -> (B, N, d_out)."""
        out = x @ self.weight[0]
        for i in range(self.supports.shape[0]):
            out = out + (self.supports[i].to(x.dtype) @ x) @ self.weight[i + 1]
        return out + self.bias


class DCGRUCell(nn.Module):
    """GRU cell whose gate and candidate maps are diffusion convolutions."""

    def __init__(self, supports: torch.Tensor, d_in: int, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.gates = DiffusionConv(supports, d_in + hidden, 2 * hidden, bias_init=1.0)
        self.candidate = DiffusionConv(supports, d_in + hidden, hidden)

    def forward(self, x, h):
        r, u = torch.sigmoid(self.gates(torch.cat([x, h], dim=-1))).chunk(2, dim=-1)
        c = torch.tanh(self.candidate(torch.cat([x, r * h], dim=-1)))
        return u * h + (1 - u) * c


class DCRNNModel(nn.Module):
    """Encoder-only DCRNN: node features plus the y channel at active nodes, linear head."""

    def __init__(self, adjacency: np.ndarray, active_ids, d_f: int, window: int,
                 hidden: int = 64, layers: int = 1, K: int = 2):
        super().__init__()
        sup = random_walk_supports(adjacency, K)
        n = np.asarray(adjacency).shape[0]
        supports = torch.tensor(np.stack(sup) if sup else np.zeros((0, n, n)), dtype=torch.float32)
        self.window = window
        self.register_buffer("active_ids", torch.tensor(np.array(active_ids), dtype=torch.long))
        dims = [d_f + 1] + [hidden] * layers
        self.cells = nn.ModuleList(DCGRUCell(supports, a, hidden) for a in dims[:-1])
        self.head = nn.Linear(hidden, 1)

    def forward(self, batch) -> torch.Tensor:
        x, y = batch.x, batch.y
        if x.shape[1] < self.window or y.shape[1] < self.window:
            raise ShapeMismatch(f"histories shorter than window {self.window}")
        B, _, N, _ = x.shape
        if self.active_ids.shape[0] != y.shape[2]:
            raise ShapeMismatch("y-history width does not match the active-node count")
        y_full = torch.zeros(B, self.window, N, 1, dtype=x.dtype, device=x.device)
        y_full[:, :, self.active_ids, 0] = y[:, -self.window :]
        inputs = torch.cat([x[:, -self.window :], y_full], dim=-1)
        hs = [torch.zeros(B, N, c.hidden, dtype=x.dtype, device=x.device) for c in self.cells]
        for t in range(self.window):
            inp = inputs[:, t]
            for i, cell in enumerate(self.cells):
                hs[i] = cell(inp, hs[i])
                inp = hs[i]
        return self.head(hs[-1][:, self.active_ids]).squeeze(-1)
