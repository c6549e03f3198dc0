"""Offline training, online tuning during inference, and metrics."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .baselines import BaselineConfig, DCRNNModel, LSTMModel, predict_last, predict_mean
from .batch import Batch, Collator, Normalizer
from .errors import ConfigInvalid, Diverged, ZeroTruth
from .ingest import TemporalGraphSequence, WindowSample
from .model.smart import ModelConfig, SmartModel

INF = math.inf


def parse_ft(value) -> float:
    """F_t from config: positive int, or None / "inf" / inf for no tuning."""
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity", "none")):
        return INF
    value = float(value)
    if value == INF:
        return INF
    if value < 1 or value != int(value):
        raise ConfigInvalid(f"F_t must be a positive integer or infinity, got {value!r}")
    return int(value)


@dataclass
class TrainConfig:
    split_fraction: float = 0.30
    F_t: float | int | None = None  # None means infinity
    epochs: int = 60
    batch_size: int = 16
    lr: float = 1e-3
    online_lr: float = 1e-4
    online_epochs: int = 1
    weight_decay: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.split_fraction < 1:
            raise ConfigInvalid("split_fraction must lie in (0, 1)")
        parse_ft(self.F_t)
        if self.epochs < 0 or self.batch_size < 1 or self.online_epochs < 0:
            raise ConfigInvalid("epochs/online_epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or self.online_lr <= 0:
            raise ConfigInvalid("learning rates must be positive")

    @property
    def tuning_frequency(self) -> float:
        return parse_ft(self.F_t)

    def to_dict(self) -> dict:
        return asdict(self)


def split_samples(samples: Sequence[WindowSample], fraction: float):
    """Chronological prefix split; at least one sample on each side."""
    n = len(samples)
    if n < 2:
        raise ValueError("need at least two samples to split")
    k = min(max(int(math.floor(fraction * n)), 1), n - 1)
    return list(samples[:k]), list(samples[k:])


def mape(truths, preds) -> float:
    y = np.asarray(truths, dtype=np.float64).ravel()
    p = np.asarray(preds, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValueError("truths and predictions differ in length")
    if y.size == 0:
        raise ValueError("mape of an empty set")
    if np.any(y <= 0):
        raise ZeroTruth("MAPE needs strictly positive truths")
    return float(np.mean(np.abs(y - p) / y) * 100.0)


def rmse(truths, preds) -> float:
    y = np.asarray(truths, dtype=np.float64).ravel()
    p = np.asarray(preds, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValueError("truths and predictions differ in length")
    return float(np.sqrt(np.mean((y - p) ** 2)))


# forecasters -----------------------------------------------------------------


class Forecaster:
    """Common interface: fit on a training prefix, predict ns, optionally tune."""

    name = "forecaster"
    trainable = False
    normalizer: Normalizer | None = None

    def fit(self, samples, cfg: TrainConfig) -> list[float]:
        if self.normalizer is None:
            self.normalizer = Normalizer.fit(samples)
        return []

    def predict(self, samples) -> np.ndarray:
        raise NotImplementedError

    def tune(self, samples, cfg: TrainConfig) -> list[float]:
        return []


class LastForecaster(Forecaster):
    name = "LAST"

    def predict(self, samples):
        return np.stack([predict_last(s) for s in samples])


class MeanForecaster(Forecaster):
    name = "MEAN"

    def __init__(self, W: int):
        self.W = W

    def predict(self, samples):
        return np.stack([predict_mean(s, self.W) for s in samples])


class NeuralForecaster(Forecaster):
    """Wraps an nn.Module mapping a Batch to normalised predictions (B, |V_a|)."""

    trainable = True

    def __init__(self, module: nn.Module, name: str, workload: str = "", prompt_window=None,
                 tokenizer=None, chunk: int = 64):
        self.module = module
        self.name = name
        self.workload = workload
        self.prompt_window = prompt_window
        self.tokenizer = tokenizer
        self.chunk = chunk
        self.normalizer = None
        self._collator = None
        self._optim = None

    def collator(self) -> Collator:
        if self._collator is None:
            if self.normalizer is None:
                raise RuntimeError("forecaster has no normalisation statistics yet")
            self._collator = Collator(self.normalizer, self.tokenizer, self.workload, self.prompt_window)
        return self._collator

    def set_normalizer(self, normalizer: Normalizer) -> None:
        self.normalizer = normalizer
        self._collator = None

    def parameters(self) -> list[nn.Parameter]:
        if isinstance(self.module, SmartModel):
            return self.module.trainable_parameters()
        return [p for p in self.module.parameters() if p.requires_grad]

    def _steps(self, batch: Batch, epochs: int, lr: float, batch_size: int, weight_decay: float,
               gen: torch.Generator) -> list[float]:
        params = self.parameters()
        opt = torch.optim.Adam(params, lr=lr, weight_decay=weight_decay)
        losses = []
        self.module.train()
        for _ in range(epochs):
            order = torch.randperm(len(batch), generator=gen)
            total = 0.0
            for start in range(0, len(batch), batch_size):
                mb = batch.subset(order[start : start + batch_size])
                opt.zero_grad()
                loss = nn.functional.mse_loss(self.module(mb), mb.target)
                if not torch.isfinite(loss):
                    raise Diverged(f"non-finite training loss {loss.item()}")
                loss.backward()
                opt.step()
                total += loss.item() * len(mb)
            losses.append(total / len(batch))
        self.module.eval()
        return losses

    def fit(self, samples, cfg: TrainConfig) -> list[float]:
        self.set_normalizer(Normalizer.fit(samples))
        gen = torch.Generator().manual_seed(cfg.seed)
        return self._steps(self.collator()(samples), cfg.epochs, cfg.lr, cfg.batch_size,
                           cfg.weight_decay, gen)

    def tune(self, samples, cfg: TrainConfig) -> list[float]:
        gen = torch.Generator().manual_seed(cfg.seed + 1 + samples[0].t)
        return self._steps(self.collator()(samples), cfg.online_epochs, cfg.online_lr,
                           cfg.batch_size, cfg.weight_decay, gen)

    def predict_normalized(self, samples) -> np.ndarray:
        out = []
        self.module.eval()
        with torch.no_grad():
            for start in range(0, len(samples), self.chunk):
                out.append(self.module(self.collator()(samples[start : start + self.chunk])).double().numpy())
        return np.concatenate(out)

    def predict(self, samples) -> np.ndarray:
        return self.normalizer.y_inverse(self.predict_normalized(samples))

    def loss(self, samples) -> float:
        b = self.collator()(samples)
        self.module.eval()
        with torch.no_grad():
            return float(nn.functional.mse_loss(self.module(b), b.target))


def build_forecaster(kind: str, sequence: TemporalGraphSequence, *, model_cfg: ModelConfig | None = None,
                     baseline_cfg: BaselineConfig | None = None, seed: int = 0,
                     backbone=None) -> Forecaster:
    """kind: smart | last | mean | lstm | dcrnn. Weight init is seeded and leaves global RNG alone."""
    model_cfg = model_cfg or ModelConfig(d_f=sequence.X.shape[-1])
    bcfg = baseline_cfg or BaselineConfig(kind=kind if kind != "smart" else "last")
    W = bcfg.W or model_cfg.T_inGNN
    if kind == "last":
        return LastForecaster()
    if kind == "mean":
        return MeanForecaster(W)
    adj = sequence.topology.adjacency_norm
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        if kind == "smart":
            module = SmartModel(model_cfg, adj, sequence.active_ids, backbone)
            name = {"full": "SMART", "gnn_only": "SMART-GNN", "llm_only": "SMART-LLM"}[model_cfg.ablation]
            return NeuralForecaster(module, name, sequence.target_app, model_cfg.T_inLLM, module.tokenizer)
        if kind == "lstm":
            return NeuralForecaster(LSTMModel(W, bcfg.hidden, bcfg.layers), "LSTM")
        if kind == "dcrnn":
            a = sequence.topology.adjacency().toarray()
            module = DCRNNModel(a, sequence.active_ids, sequence.X.shape[-1], W, bcfg.hidden, bcfg.layers, bcfg.K)
            return NeuralForecaster(module, "DCRNN")
    raise ConfigInvalid(f"unknown model kind {kind!r}")


def train_offline(forecaster: Forecaster, samples, cfg: TrainConfig) -> list[float]:
    """Fit normalisation and weights on the training prefix; returns per-epoch loss."""
    cfg.validate()
    return forecaster.fit(list(samples), cfg)


# inference -------------------------------------------------------------------


@dataclass
class TuningEvent:
    test_index: int  # position in the test stream; a multiple of F_t
    before_target: int  # first target iteration predicted after this update
    trained_targets: list[int]
    loss: float


@dataclass
class RunReport:
    model: str
    target_iterations: np.ndarray  # (n,)
    node_ids: np.ndarray  # (|V_a|,)
    truths: np.ndarray  # (n, |V_a|) ns
    predictions: np.ndarray  # (n, |V_a|) ns
    normalizer: Normalizer
    F_t: float
    seed: int
    events: list[TuningEvent] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    @property
    def mape(self) -> float:
        return mape(self.truths, self.predictions)

    @property
    def rmse_ns(self) -> float:
        return rmse(self.truths, self.predictions)

    @property
    def rmse_normalized(self) -> float:
        return rmse(self.normalizer.y(self.truths), self.normalizer.y(self.predictions))

    def metrics(self) -> dict:
        return {
            "model": self.model,
            "mape": self.mape,
            "rmse_normalized": self.rmse_normalized,
            "rmse_ns": self.rmse_ns,
            "n_predictions": int(self.truths.size),
            "F_t": "inf" if self.F_t == INF else int(self.F_t),
            "seed": self.seed,
            "events": [asdict(e) for e in self.events],
            "timing": self.timing,
        }

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(self.metrics(), indent=2) + "\n")
        with open(out / "predictions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "node", "y_true_ns", "y_pred_ns"])
            for i, it in enumerate(self.target_iterations):
                for j, node in enumerate(self.node_ids):
                    w.writerow([int(it), int(node), repr(float(self.truths[i, j])),
                                repr(float(self.predictions[i, j]))])


def _timed_predict(forecaster, samples, times: list[float]) -> np.ndarray:
    t0 = time.perf_counter()
    out = forecaster.predict(samples)
    times.append((time.perf_counter() - t0) / len(samples))
    return out


def infer_with_tuning(forecaster: Forecaster, samples, cfg: TrainConfig, node_ids=None) -> RunReport:
    """Predict the test stream in order, updating weights every F_t samples.

    At test index e (a positive multiple of F_t) the model is tuned on the
    already-revealed samples [e - F_t, e) before sample e is predicted.
    """
    samples = list(samples)
    F_t = cfg.tuning_frequency
    times: list[float] = []
    events: list[TuningEvent] = []
    if F_t == INF or not forecaster.trainable:
        preds = _timed_predict(forecaster, samples, times)
    else:
        chunks = []
        for start in range(0, len(samples), F_t):
            if start > 0:
                revealed = samples[start - F_t : start]
                losses = forecaster.tune(revealed, cfg)
                events.append(TuningEvent(start, samples[start].target_iteration,
                                          [s.target_iteration for s in revealed],
                                          losses[-1] if losses else float("nan")))
            chunks.append(_timed_predict(forecaster, samples[start : start + F_t], times))
        preds = np.concatenate(chunks)
    n_va = samples[0].target.shape[0]
    return RunReport(
        model=forecaster.name,
        target_iterations=np.array([s.target_iteration for s in samples]),
        node_ids=np.asarray(node_ids if node_ids is not None else np.arange(n_va)),
        truths=np.stack([s.target for s in samples]).astype(np.float64),
        predictions=np.asarray(preds, dtype=np.float64),
        normalizer=forecaster.normalizer,
        F_t=F_t,
        seed=cfg.seed,
        events=events,
        timing={"mean_s_per_prediction": float(np.mean(times))},
    )


@dataclass
class BenchmarkResult:
    model: str
    mean_s: float
    std_s: float
    repetitions: int


def benchmark_inference(forecaster: Forecaster, samples, repetitions: int, warmup: int = 2) -> BenchmarkResult:
    """Wall-clock seconds per single-sample prediction."""
    if repetitions < 1:
        raise ValueError("benchmark needs at least one repetition")
    samples = list(samples)
    if not samples:
        raise ValueError("benchmark needs at least one sample")
    for i in range(warmup):
        forecaster.predict(samples[i % len(samples) : i % len(samples) + 1])
    times = []
    for i in range(repetitions):
        s = samples[i % len(samples)]
        t0 = time.perf_counter()
        forecaster.predict([s])
        times.append(time.perf_counter() - t0)
    return BenchmarkResult(forecaster.name, float(np.mean(times)), float(np.std(times)), repetitions)
