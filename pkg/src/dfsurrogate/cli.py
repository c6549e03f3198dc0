"""Command-line entry points: synth, ingest-check, train, eval, benchmark, hybrid, report.

Every command except ``synth`` takes one JSON experiment config; scalar
fields can be overridden with ``--set section.key=value``. The environment
variable SMART_SEED overrides the config seed. Exit codes: 0 ok, 1 runtime
failure, 2 invalid config.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .baselines import BaselineConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ConfigInvalid, SurrogateError
from .hybrid import ControllerPolicy, run_controller, sim_cost
from .ingest import DEFAULT_STATS, TemporalGraphSequence, build_sequence, load_dataset, window_stream
from .model.smart import ModelConfig
from .synth import SynthSpec, default_spec, generate
from .train_eval import (
    TrainConfig,
    benchmark_inference,
    build_forecaster,
    infer_with_tuning,
    split_samples,
    train_offline,
)

log = logging.getLogger("dfsurrogate")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
DEFAULT_BASELINES = [{"kind": "last"}, {"kind": "mean"}, {"kind": "lstm"}, {"kind": "dcrnn"}]
ABLATION_NAMES = {"full": "SMART", "gnn_only": "SMART-GNN", "llm_only": "SMART-LLM"}


@dataclass
class ExperimentConfig:
    data: dict
    target_app: str
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    baselines: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_BASELINES))
    ablations: list = field(default_factory=lambda: ["full"])
    hybrid: dict = field(default_factory=dict)
    benchmark: dict = field(default_factory=dict)
    stats: list = field(default_factory=lambda: list(DEFAULT_STATS))
    output_dir: str = "runs/default"
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
        if "data" not in doc or "target_app" not in doc:
            raise ConfigInvalid("config needs 'data' and 'target_app'")
        cfg = cls(**doc)
        if len([k for k in ("synth", "manifest") if k in cfg.data]) != 1:
            raise ConfigInvalid("data must name exactly one of 'synth' or 'manifest'")
        for ab in cfg.ablations:
            if ab not in ABLATION_NAMES:
                raise ConfigInvalid(f"unknown ablation {ab!r}")
        return cfg

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def train_config(self) -> TrainConfig:
        tc = TrainConfig(**{**self.train, "seed": self.seed})
        tc.validate()
        return tc

    def model_config(self, d_f: int, ablation: str = "full") -> ModelConfig:
        doc = {**self.model, "d_f": d_f, "ablation": ablation}
        preset = doc.pop("preset", None)
        mc = ModelConfig.desk(**doc) if preset == "desk" else ModelConfig.from_dict(doc)
        mc.validate()
        return mc


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, assignments: list[str]) -> dict:
    doc = copy.deepcopy(doc)
    for item in assignments or []:
        if "=" not in item:
            raise ConfigInvalid(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"cannot set {key}: {p} is not a section")
        node[parts[-1]] = _parse_value(value)
    return doc


def load_config(path: str, overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    doc = apply_overrides(doc, overrides)
    if "SMART_SEED" in os.environ:
        try:
            doc["seed"] = int(os.environ["SMART_SEED"])
        except ValueError as exc:
            raise ConfigInvalid("SMART_SEED must be an integer") from exc
    return ExperimentConfig.from_dict(doc)


# data -----------------------------------------------------------------------


def synth_spec_from(doc: dict, drift_onset: int | None = None) -> SynthSpec:
    """Partial spec dicts are merged over the desk default."""
    base = default_spec().to_dict()
    base.update(doc)
    drift = base.get("drift")
    if isinstance(drift, dict) and drift.get("onset") == "split":
        if drift_onset is None:
            raise ConfigInvalid("drift onset 'split' is only resolvable inside an experiment")
        base["drift"] = {**drift, "onset": drift_onset}
    spec = SynthSpec.from_dict(base)
    spec.validate()
    return spec


def split_onset(cfg: ExperimentConfig, mc: ModelConfig, duration: int) -> int:
    """First target iteration of the test split, for drift placed at the boundary."""
    L = max(mc.T_inLLM, mc.T_inGNN)
    n = duration - L
    k = min(max(int(math.floor(cfg.train_config().split_fraction * n)), 1), n - 1)
    # sample k has t = L + k and targets iteration L + k + 1 (1-based); drift onset is 0-based
    return L + k


def load_sequence(cfg: ExperimentConfig) -> TemporalGraphSequence:
    if "manifest" in cfg.data:
        return load_dataset(cfg.data["manifest"]).sequence(cfg.target_app, cfg.stats)
    doc = cfg.data["synth"]
    onset = None
    if isinstance(doc.get("drift"), dict) and doc["drift"].get("onset") == "split":
        # window lengths do not depend on d_f
        mc = cfg.model_config(d_f=1)
        onset = split_onset(cfg, mc, int(doc.get("duration", default_spec().duration)))
    trace = generate(synth_spec_from(doc, onset))
    return build_sequence(trace.topology, trace.snapshots, trace.iterations, trace.placement,
                          cfg.target_app, cfg.stats)


def windows(cfg: ExperimentConfig, seq: TemporalGraphSequence):
    mc = cfg.model_config(seq.X.shape[-1])
    samples = window_stream(seq, max(mc.T_inLLM, mc.T_inGNN), mc.T_inGNN)
    train, test = split_samples(samples, cfg.train_config().split_fraction)
    return mc, samples, train, test


def model_specs(cfg: ExperimentConfig, d_f: int):
    """(directory name, kind, ModelConfig, BaselineConfig) for every configured model."""
    out = []
    for ab in cfg.ablations:
        out.append((ABLATION_NAMES[ab], "smart", cfg.model_config(d_f, ab), None))
    mc = cfg.model_config(d_f)
    for b in cfg.baselines:
        bc = BaselineConfig(**b)
        bc.validate()
        out.append((bc.kind.upper(), bc.kind, mc, bc))
    return out


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


# commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    doc = json.loads(Path(args.spec).read_text())
    if "data" in doc:
        doc = doc["data"].get("synth", {})
    doc = apply_overrides(doc, args.set)
    spec = synth_spec_from(doc)
    path = generate(spec).write(args.out)
    print(path)
    return EXIT_OK


def cmd_ingest_check(args) -> int:
    cfg = load_config(args.config, args.set)
    seq = load_sequence(cfg)
    summary = {
        "iterations": seq.num_iterations,
        "nodes": int(seq.X.shape[1]),
        "active_nodes": len(seq.active_ids),
        "d_f": int(seq.X.shape[2]),
        "features": list(seq.feature_names),
        "y_mean_ns": float(seq.y.mean()),
        "y_std_ns": float(seq.y.std()),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    seq = load_sequence(cfg)
    _, _, train, _ = windows(cfg, seq)
    tc = cfg.train_config()
    summary = {}
    for name, kind, mc, bc in model_specs(cfg, seq.X.shape[-1]):
        f = build_forecaster(kind, seq, model_cfg=mc, baseline_cfg=bc, seed=cfg.seed)
        losses = train_offline(f, train, tc)
        save_checkpoint(f, cfg.out / "checkpoints" / name, kind=kind, model_cfg=mc,
                        baseline_cfg=bc, seed=cfg.seed)
        summary[name] = {"final_loss": losses[-1] if losses else None, "epochs": len(losses)}
        log.info("trained %s", name)
    _write_json(cfg.out / "train_summary.json", summary)
    return EXIT_OK


def _trained(cfg: ExperimentConfig, seq):
    for name, *_ in model_specs(cfg, seq.X.shape[-1]):
        ckpt = cfg.out / "checkpoints" / name
        if not (ckpt / "config.json").exists():
            raise FileNotFoundError(f"no checkpoint for {name} at {ckpt}; run `train` first")
        yield name, load_checkpoint(ckpt, seq)


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.set)
    seq = load_sequence(cfg)
    _, _, _, test = windows(cfg, seq)
    tc = cfg.train_config()
    for name, f in _trained(cfg, seq):
        report = infer_with_tuning(f, test, tc, node_ids=seq.active_ids)
        report.save(cfg.out / "eval" / name)
        print(f"{name:10s} MAPE {report.mape:8.4f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config, args.set)
    seq = load_sequence(cfg)
    _, _, _, test = windows(cfg, seq)
    reps = int(cfg.benchmark.get("repetitions", 20))
    warm = int(cfg.benchmark.get("warmup", 2))
    path = cfg.out / "benchmark.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "mean_s_per_prediction", "std_s", "repetitions"])
        for name, f in _trained(cfg, seq):
            r = benchmark_inference(f, test, reps, warm)
            w.writerow([name, f"{r.mean_s:.6g}", f"{r.std_s:.6g}", r.repetitions])
            print(f"{name:10s} {r.mean_s:.6g} s/prediction")
    return EXIT_OK


def cmd_hybrid(args) -> int:
    cfg = load_config(args.config, args.set)
    seq = load_sequence(cfg)
    mc, samples, _, _ = windows(cfg, seq)
    h = dict(cfg.hybrid)
    cost = h.pop("sim_cost", 56.47)
    if isinstance(cost, dict):
        cost = sim_cost(cost["dataset"], cost["app"], cost["placement"])
    inference_cost = h.pop("inference_cost", None)
    kind = h.pop("model", "smart")
    policy = ControllerPolicy(**h)
    policy.validate()
    bc = BaselineConfig(kind=kind) if kind != "smart" else None
    f = build_forecaster(kind, seq, model_cfg=mc, baseline_cfg=bc, seed=cfg.seed)
    report = run_controller(samples, f, policy, float(cost), cfg.train_config(), inference_cost)
    cfg.out.mkdir(parents=True, exist_ok=True)
    report.save(cfg.out / "hybrid.json")
    print(json.dumps(report.totals(), indent=2))
    return EXIT_OK


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = load_config(args.config, args.set)
    eval_dir = cfg.out / "eval"
    names = sorted(p.name for p in eval_dir.iterdir() if (p / "metrics.json").exists()) if eval_dir.exists() else []
    if not names:
        raise FileNotFoundError(f"no evaluation results under {eval_dir}; run `eval` first")
    with open(cfg.out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "mape", "rmse_normalized", "rmse_ns", "F_t"])
        for name in names:
            m = json.loads((eval_dir / name / "metrics.json").read_text())
            w.writerow([name, f"{m['mape']:.6f}", f"{m['rmse_normalized']:.6f}", f"{m['rmse_ns']:.3f}", m["F_t"]])
    plots = cfg.out / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    for name in names:
        with open(eval_dir / name / "predictions.csv") as fh:
            rows = list(csv.DictReader(fh))
        its = sorted({int(r["iter"]) for r in rows})
        pos = {it: i for i, it in enumerate(its)}
        true = np.zeros(len(its))
        pred = np.zeros(len(its))
        count = np.zeros(len(its))
        for r in rows:
            i = pos[int(r["iter"])]
            true[i] += float(r["y_true_ns"])
            pred[i] += float(r["y_pred_ns"])
            count[i] += 1
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(its, true / count / 1e6, label="true", lw=1.2)
        ax.plot(its, pred / count / 1e6, label=name, lw=1.0)
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean iteration time (ms)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(plots / f"{name}.png", dpi=100, metadata={"Software": None})
        plt.close(fig)
    print(cfg.out / "comparison.csv")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest-check": cmd_ingest_check,
    "train": cmd_train,
    "eval": cmd_eval,
    "benchmark": cmd_benchmark,
    "hybrid": cmd_hybrid,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfsurrogate", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", help="generate a synthetic trace")
    p.add_argument("spec", help="synthetic spec JSON (or an experiment config with data.synth)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    for name in COMMANDS:
        if name == "synth":
            continue
        p = sub.add_parser(name)
        p.add_argument("config", help="experiment config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)  # bit-reproducible results across runs
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SurrogateError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
