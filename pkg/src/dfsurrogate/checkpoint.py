"""Checkpoint directories: config.json plus one weight file per parameter group."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .baselines import BaselineConfig
from .batch import Normalizer
from .ingest import TemporalGraphSequence
from .model.smart import ModelConfig, SmartModel
from .train_eval import Forecaster, NeuralForecaster, build_forecaster

SMART_GROUPS = (
    ("backbone", "llm.backbone."),
    ("llm_adapter", "llm."),
    ("gcn", "gcn."),
    ("temporal", "temporal."),
    ("head", "head."),
)


def _group_of(key: str, groups) -> str:
    for name, prefix in groups:
        if key.startswith(prefix):
            return name
    return "buffers"


def save_checkpoint(forecaster: Forecaster, out_dir: str | Path, *, kind: str,
                    model_cfg: ModelConfig | None = None, baseline_cfg: BaselineConfig | None = None,
                    seed: int = 0) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "kind": kind,
        "name": forecaster.name,
        "seed": seed,
        "model_config": model_cfg.to_dict() if model_cfg else None,
        "baseline_config": baseline_cfg.to_dict() if baseline_cfg else None,
        "normalizer": forecaster.normalizer.to_dict() if forecaster.normalizer else None,
        "groups": [],
    }
    if isinstance(forecaster, NeuralForecaster):
        module = forecaster.module
        groups = SMART_GROUPS if isinstance(module, SmartModel) else (("model", ""),)
        state = module.state_dict()
        by_group: dict[str, dict] = {}
        for key, value in state.items():
            by_group.setdefault(_group_of(key, groups), {})[key] = value
        if isinstance(module, SmartModel):
            bb = module.backbone
            doc["backbone"] = {"id": bb.backbone_id, "pretrained": bool(bb.pretrained)}
            if bb.pretrained:
                # referenced by id; weights come from the model hub on load
                by_group.pop("backbone", None)
        by_group.pop("buffers", None)
        for name, tensors in sorted(by_group.items()):
            torch.save(tensors, out / f"{name}.pt")
            doc["groups"].append(name)
    (out / "config.json").write_text(json.dumps(doc, indent=2) + "\n")
    return out


def load_checkpoint(path: str | Path, sequence: TemporalGraphSequence) -> Forecaster:
    """Rebuild a forecaster for ``sequence``'s topology and active nodes."""
    root = Path(path)
    doc = json.loads((root / "config.json").read_text())
    model_cfg = ModelConfig.from_dict(doc["model_config"]) if doc["model_config"] else None
    baseline_cfg = BaselineConfig(**doc["baseline_config"]) if doc["baseline_config"] else None
    f = build_forecaster(doc["kind"], sequence, model_cfg=model_cfg, baseline_cfg=baseline_cfg,
                         seed=doc["seed"])
    if doc["normalizer"] is not None:
        norm = Normalizer.from_dict(doc["normalizer"])
        if isinstance(f, NeuralForecaster):
            f.set_normalizer(norm)
        else:
            f.normalizer = norm
    if isinstance(f, NeuralForecaster):
        state = {}
        for name in doc["groups"]:
            state.update(torch.load(root / f"{name}.pt", weights_only=True))
        missing, unexpected = f.module.load_state_dict(state, strict=False)
        buffers = dict(f.module.named_buffers())
        pretrained = doc.get("backbone", {}).get("pretrained", False)
        bad = [k for k in missing
               if k not in buffers and not (pretrained and k.startswith("llm.backbone."))]
        if bad or unexpected:
            raise ValueError(f"checkpoint mismatch: missing {bad}, unexpected {list(unexpected)}")
        f.module.eval()
    return f

