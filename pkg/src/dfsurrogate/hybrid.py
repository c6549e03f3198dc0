"""Hybrid controller that alternates between the oracle simulator and the surrogate.

Stages: collect oracle iterations, train the surrogate, validate it against
live oracle output, and hand off once the rolling MAPE is low enough. While
the surrogate runs, ground truth is withheld and its predictions stand in
for the iteration-time history. Every ``revalidate_every`` surrogate
iterations the oracle is re-engaged for one validation window; if the MAPE
there exceeds ``fallback_threshold`` control stays with the oracle until the
switch gate passes again.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigInvalid, OracleExhausted
from .ingest import WindowSample
from .train_eval import Forecaster, TrainConfig, mape, parse_ft, train_offline

ORACLE = "oracle"
SURROGATE = "surrogate"

# seconds per simulated iteration of the flit-level simulator: (dataset, app) -> (contiguous, random)
SIM_TIME_PER_ITERATION = {
    ("D1", "MILC"): (79.36, 132.34),
    ("D1", "LAMMPS"): (56.47, 243.48),
    ("D2", "MILC"): (65.46, 112.42),
    ("D2", "LAMMPS"): (47.06, 216.58),
    ("D2", "NN"): (8.09, 14.98),
}

# seconds per prediction measured at full scale on a GPU node
REFERENCE_INFERENCE_TIME = {
    "SMART": 0.5150,
    "SMART-LLM": 0.4158,
    "SMART-GNN": 0.0633,
    "MEAN": 0.00001,
    "LAST": 0.00001,
    "LSTM": 0.0398,
    "DCRNN": 0.0459,
}


def sim_cost(dataset: str, app: str, placement: str) -> float:
    contiguous, random = SIM_TIME_PER_ITERATION[(dataset, app)]
    if placement not in ("contiguous", "random"):
        raise ConfigInvalid(f"placement must be contiguous or random, got {placement!r}")
    return contiguous if placement == "contiguous" else random


@dataclass
class ControllerPolicy:
    warmup_iterations: int = 32
    validation_window: int = 8
    switch_threshold: float = 5.0
    fallback_threshold: float = 10.0
    F_t: float | int | None = 8
    revalidate_every: int = 32

    def validate(self) -> None:
        if self.warmup_iterations < 1 or self.validation_window < 1 or self.revalidate_every < 1:
            raise ConfigInvalid("warmup, validation window and revalidation cadence must be positive")
        if self.switch_threshold < 0:
            raise ConfigInvalid("switch_threshold must be >= 0")
        if self.fallback_threshold < self.switch_threshold:
            raise ConfigInvalid("fallback_threshold must be >= switch_threshold")
        parse_ft(self.F_t)

    def gate(self, rolling: float | None, threshold: float) -> bool:
        if math.isinf(threshold):
            return True
        return threshold > 0 and rolling is not None and rolling <= threshold


@dataclass
class ControllerReport:
    policy: ControllerPolicy
    sim_cost: float
    log: list[dict] = field(default_factory=list)

    @property
    def modes(self) -> list[str]:
        return [e["mode"] for e in self.log]

    @property
    def surrogate_iterations(self) -> int:
        return sum(m == SURROGATE for m in self.modes)

    @property
    def time_saved(self) -> float:
        return saved_from_log(self.log, self.sim_cost)

    def totals(self) -> dict:
        n_sur = self.surrogate_iterations
        return {
            "iterations": len(self.log),
            "oracle_iterations": len(self.log) - n_sur,
            "surrogate_iterations": n_sur,
            "switches": sum(1 for a, b in zip(self.modes, self.modes[1:]) if a == ORACLE and b == SURROGATE),
            "sim_cost_s": self.sim_cost,
            "time_saved_s": self.time_saved,
        }

    def to_dict(self) -> dict:
        return {"policy": asdict(self.policy), "totals": self.totals(), "iterations": self.log}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def saved_from_log(log: list[dict], sim_cost_s: float) -> float:
    """Σ (sim_cost − inference_cost) over surrogate iterations, exactly rounded."""
    terms = []
    for e in log:
        if e["mode"] == SURROGATE:
            terms.extend((sim_cost_s, -e["inference_s"]))
    return math.fsum(terms)


def run_controller(stream: Iterable[WindowSample], forecaster: Forecaster, policy: ControllerPolicy,
                   sim_cost_s: float, train_cfg: TrainConfig | None = None,
                   inference_cost: float | None = None) -> ControllerReport:
    """Drive the four-stage loop over an oracle stream of samples in iteration order.

    ``inference_cost`` fixes the per-prediction cost used in the savings
    account; by default the measured wall-clock time is used.
    """
    policy.validate()
    train_cfg = train_cfg or TrainConfig()
    F_t = parse_ft(policy.F_t)
    report = ControllerReport(policy, sim_cost_s)
    it = iter(stream)

    collected: list[WindowSample] = []
    for _ in range(policy.warmup_iterations):
        try:
            s = next(it)
        except StopIteration:
            raise OracleExhausted(
                f"stream ended after {len(collected)} of {policy.warmup_iterations} warm-up iterations"
            ) from None
        collected.append(s)
        report.log.append({"iteration": s.target_iteration, "mode": ORACLE, "stage": "collect",
                           "prediction": None, "truth": s.target.tolist(), "rolling_mape": None,
                           "inference_s": 0.0})
    train_offline(forecaster, collected, train_cfg)

    window: deque[tuple[np.ndarray, np.ndarray]] = deque(maxlen=policy.validation_window)
    pending: list[WindowSample] = []  # revealed oracle samples not yet used for tuning
    surrogate_y: dict[int, np.ndarray] = {}  # iteration -> predicted y standing in for truth
    mode, stage = ORACLE, "validate"
    threshold = policy.switch_threshold
    since_switch = 0
    if math.isinf(policy.switch_threshold):
        mode, stage = SURROGATE, "surrogate"

    for s in it:
        s = _substitute_history(s, surrogate_y)
        t0 = time.perf_counter()
        pred = forecaster.predict([s])[0]
        cost = time.perf_counter() - t0 if inference_cost is None else inference_cost
        entry = {"iteration": s.target_iteration, "mode": mode, "stage": stage,
                 "prediction": pred.tolist(), "truth": None, "rolling_mape": None, "inference_s": cost}
        report.log.append(entry)

        if mode == SURROGATE:
            surrogate_y[s.target_iteration] = pred
            since_switch += 1
            if since_switch >= policy.revalidate_every and not math.isinf(policy.switch_threshold):
                mode, stage, threshold = ORACLE, "revalidate", policy.fallback_threshold
                window.clear()
            continue

        entry["truth"] = s.target.tolist()
        window.append((s.target, pred))
        rolling = mape(np.stack([w[0] for w in window]), np.stack([w[1] for w in window]))
        entry["rolling_mape"] = rolling
        pending.append(s)
        if F_t != math.inf and len(pending) >= F_t:
            forecaster.tune(pending[-F_t:], train_cfg)
            pending.clear()

        full = len(window) == policy.validation_window
        if full and policy.gate(rolling, threshold):
            mode, stage, since_switch = SURROGATE, "surrogate", 0
        elif full and stage == "revalidate":
            # failed the looser gate: fall back and require the switch gate again
            stage, threshold = "validate", policy.switch_threshold
    return report


def _substitute_history(sample: WindowSample, surrogate_y: dict[int, np.ndarray]) -> WindowSample:
    if not surrogate_y:
        return sample
    L = sample.y_hist.shape[0]
    first = sample.t - L + 1
    rows = [i for i in range(L) if first + i in surrogate_y]
    if not rows:
        return sample
    y = sample.y_hist.astype(np.float64).copy()
    for i in rows:
        y[i] = surrogate_y[first + i]
    return replace(sample, y_hist=y)
