"""Acceptance gate: one test per criterion, reported as PASS/FAIL lines in the summary."""

import copy
import json
import math
import time

import numpy as np
import pytest
import torch

from dfsurrogate.baselines import DCRNNModel, LSTMModel, predict_last, predict_mean
from dfsurrogate.cli import main
from dfsurrogate.hybrid import ControllerPolicy, run_controller, saved_from_log, sim_cost
from dfsurrogate.ingest import BoundsResolver, WindowSample, build_sequence, window_stream
from dfsurrogate.model import ModelConfig, SmartModel, gcn_encode, num_patches, patchify
from dfsurrogate.synth import default_spec, generate
from dfsurrogate.topology import DragonflyConfig, build_topology
from dfsurrogate.train_eval import (
    TrainConfig,
    benchmark_inference,
    build_forecaster,
    infer_with_tuning,
    mape,
    split_samples,
    train_offline,
)

from helpers import MS, iterations, placement
from oracles import bfs_hops, brute_force_edges, dense_normalized, gradient_rel_error

DESK_EPOCHS = 40


@pytest.mark.acceptance(1, "topology edges equal the brute-force enumerator on 20 random configs")
def test_criterion_01_topology_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    checked = 0
    while checked < 20:
        G, R, t, h = (int(rng.integers(1, 7)), int(rng.integers(1, 5)), int(rng.integers(1, 4)),
                      int(rng.integers(0, 5)))
        if R * h < G - 1:
            continue
        topo = build_topology(DragonflyConfig(G, R, t, h))
        n, edges = brute_force_edges(G, R, t, h)
        assert topo.num_nodes == n and set(topo.edges) == edges and len(topo.edges) == len(edges)
        checked += 1
    assert time.perf_counter() - t0 < 10


@pytest.mark.acceptance(2, "gcn_encode equals the dense ReLU(A_norm X W) computation")
def test_criterion_02_gcn_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 11))
        edges = {tuple(sorted(map(int, rng.choice(n, 2, replace=False)))) for _ in range(rng.integers(0, 3 * n))} if n > 1 else set()
        adj = dense_normalized(n, edges)
        X = rng.normal(size=(2, n, 4))
        W = rng.normal(size=(4, 5))
        out = gcn_encode(torch.tensor(X), adj, [W]).numpy()
        worst = max(worst, np.max(np.abs(out - np.maximum(adj @ X @ W, 0))))
    assert worst < 1e-6


@pytest.mark.acceptance(3, "analytic gradients match central finite differences (rel err < 1e-4)")
def test_criterion_03_gradients():
    torch.manual_seed(0)
    topo = build_topology(DragonflyConfig(3, 2, 1, 1))
    cfg = ModelConfig(d_f=3, d_h=2, d_z=4, attention_heads=2, encoder_layers=1, decoder_layers=1,
                      d_ff=4, d_llm=8, llm_layers=1, llm_heads=2, vocab_size=16, d_patch=4,
                      n_prototypes=4, reprogram_heads=2, T_inGNN=2, T_inLLM=4)
    model = SmartModel(cfg, topo.adjacency_norm, [0, 6, 12]).double()
    from test_model import make_batch

    batch = make_batch(model)
    loss = lambda: torch.nn.functional.mse_loss(model(batch), batch.target)
    core = model.temporal.core
    groups = {
        "gcn": [l.weight for l in model.gcn.layers],
        "transformer projections": [model.temporal.input_proj.weight, core.encoder[0].attn.k_proj.weight,
                                    core.decoder[0].self_attn.v_proj.weight, model.temporal.output_proj.weight],
        "patch embedding": [model.llm.patch_embedding.weight],
        "reprogramming attention": [model.llm.reprogramming.query_projection.weight,
                                    model.llm.reprogramming.key_projection.weight,
                                    model.llm.reprogramming.out_projection.weight],
        "fusion head": [model.head.weight],
    }
    for name, params in groups.items():
        assert gradient_rel_error(model, loss, params) < 1e-4, name

    from test_baselines import small_graph, y_batch

    lstm = LSTMModel(3, hidden=6).double()
    b = y_batch(2, 4, 3)
    assert gradient_rel_error(lstm, lambda: torch.nn.functional.mse_loss(lstm(b), b.target),
                              list(lstm.parameters())) < 1e-4
    dcrnn = DCRNNModel(small_graph(), [0, 4], d_f=2, window=2, hidden=4).double()
    b = y_batch(2, 3, 2, N=5)
    assert gradient_rel_error(dcrnn, lambda: torch.nn.functional.mse_loss(dcrnn(b), b.target),
                              list(dcrnn.parameters())) < 1e-4


@pytest.mark.acceptance(4, "patch counts follow floor((T-P)/S)+1")
def test_criterion_04_patching():
    assert num_patches(8, 2, 1) == 7
    assert patchify(torch.zeros(8), 2, 1).shape[0] == 7
    assert num_patches(5, 5, 3) == 1
    rng = np.random.default_rng(4)
    for _ in range(100):
        P = int(rng.integers(1, 10))
        S = int(rng.integers(1, 10))
        T = int(rng.integers(P, 80))
        assert patchify(torch.zeros(T), P, S).shape == ((T - P) // S + 1, P)


@pytest.mark.acceptance(5, "three-case aggregation bounds with deterministic nearest-active tie-break")
def test_criterion_05_aggregation_bounds():
    topo = build_topology(DragonflyConfig(2, 2, 2, 1))
    early = [(2 * i * MS, (2 * i + 1) * MS) for i in range(4)]
    late = [(20 * MS, 21 * MS)]
    one = BoundsResolver(topo, iterations({("A", 1): early + [(10 * MS, 12 * MS)] + late}),
                         placement({("A", 1): 0}), "A")
    assert one.case(2) == 1 and one.bounds(2, 5) == (10 * MS, 12 * MS)
    assert one.case(6) == 3 and bfs_hops(topo.num_nodes, topo.edges, 0)[6] == 2
    assert one.bounds(6, 5) == (10 * MS, 12 * MS)
    its = iterations({("A", 2): early + [(10 * MS, 12 * MS)] + late,
                      ("A", 1): early + [(11 * MS, 14 * MS)] + late})
    two = BoundsResolver(topo, its, placement({("A", 2): 0, ("A", 1): 1}), "A")
    assert two.case(3) == 2 and two.bounds(3, 5) == (10 * MS, 14 * MS)
    # routers 1-3 are equidistant from nodes 0 and 1: the lower id wins, every time
    for _ in range(3):
        again = BoundsResolver(topo, its, placement({("A", 2): 0, ("A", 1): 1}), "A")
        assert all(again.bounds(v, 5) == (10 * MS, 12 * MS) for v in range(4, 16))


@pytest.mark.acceptance(6, "MAPE example exact; MEAN(W=1) identical to LAST on 1,000 samples")
def test_criterion_06_metrics():
    assert abs(mape([100, 200], [110, 180]) - 10.0) <= 1e-9
    rng = np.random.default_rng(6)
    for _ in range(1000):
        L, Va = int(rng.integers(1, 10)), int(rng.integers(1, 5))
        y = rng.lognormal(14, 1, size=(L, Va))
        s = WindowSample(L, y, np.zeros((1, 1, 1)), y[-1])
        assert np.array_equal(predict_mean(s, 1), predict_last(s))


# shared desk-scale experiment ------------------------------------------------------


@pytest.fixture(scope="module")
def desk():
    trace = generate(default_spec(seed=0))
    seq = build_sequence(trace.topology, trace.snapshots, trace.iterations, trace.placement, "MILC")
    samples = window_stream(seq, 8, 2)
    train, test = split_samples(samples, 0.3)
    return seq, train, test


def run_smart(desk, ablation="full", seed=0):
    seq, train, test = desk
    cfg = ModelConfig.desk(d_f=seq.X.shape[-1], ablation=ablation)
    f = build_forecaster("smart", seq, model_cfg=cfg, seed=seed)
    init_backbone = {k: v.clone() for k, v in f.module.backbone.state_dict().items()}
    train_offline(f, train, TrainConfig(epochs=DESK_EPOCHS, seed=seed))
    return f, init_backbone


@pytest.fixture(scope="module")
def smart_full(desk):
    return run_smart(desk)


@pytest.mark.acceptance(7, "backbone parameters byte-identical after a full training run")
def test_criterion_07_frozen_backbone(smart_full):
    f, init = smart_full
    after = f.module.backbone.state_dict()
    assert init.keys() == after.keys()
    for k in init:
        assert init[k].numpy().tobytes() == after[k].numpy().tobytes()


@pytest.mark.acceptance(8, "online tuning never leaks; F_t=inf equals frozen batch inference")
def test_criterion_08_no_leak(desk, smart_full):
    _, _, test = desk
    f = copy.deepcopy(smart_full[0])
    report = infer_with_tuning(f, test, TrainConfig(F_t=8))
    assert report.events
    for e in report.events:
        assert e.test_index % 8 == 0
        assert max(e.trained_targets) <= e.before_target - 1
        # no prediction made before this event used weights from it
        assert all(it < e.before_target for it in report.target_iterations[: e.test_index])
    frozen = copy.deepcopy(smart_full[0])
    batch = frozen.predict(test)
    inf = infer_with_tuning(frozen, test, TrainConfig(F_t=None))
    assert inf.events == [] and np.array_equal(inf.predictions, batch)


@pytest.mark.acceptance(9, "desk SMART beats LAST and MEAN; with drift MAPE(F_t=8) <= MAPE(inf)")
def test_criterion_09_relative_quality(desk, smart_full, tmp_path):
    t0 = time.perf_counter()
    seq, train, test = desk
    cfg = TrainConfig()
    smart = infer_with_tuning(smart_full[0], test, cfg).mape
    last = infer_with_tuning(build_forecaster("last", seq), test, cfg).mape
    mean = infer_with_tuning(build_forecaster("mean", seq), test, cfg).mape  # W = T_inGNN
    print(f"\nSMART {smart:.3f}  LAST {last:.3f}  MEAN {mean:.3f}")
    assert smart < last and smart < mean

    exp = {
        "data": {"synth": {"seed": 0, "drift": {"onset": "split", "magnitude": 0.5}}},
        "target_app": "MILC",
        "model": {"preset": "desk"},
        "train": {"epochs": DESK_EPOCHS},
        "baselines": [],
        "output_dir": str(tmp_path / "drift"),
        "seed": 0,
    }
    path = tmp_path / "drift.json"
    path.write_text(json.dumps(exp))
    assert main(["train", str(path)]) == 0
    assert main(["eval", str(path)]) == 0
    frozen = json.loads((tmp_path / "drift" / "eval" / "SMART" / "metrics.json").read_text())
    assert main(["eval", str(path), "--set", "train.F_t=8"]) == 0
    tuned = json.loads((tmp_path / "drift" / "eval" / "SMART" / "metrics.json").read_text())
    print(f"drift: F_t=inf {frozen['mape']:.3f}  F_t=8 {tuned['mape']:.3f}")
    assert frozen["F_t"] == "inf" and tuned["F_t"] == 8
    assert tuned["mape"] <= frozen["mape"]
    assert time.perf_counter() - t0 < 15 * 60


@pytest.mark.acceptance(10, "full SMART MAPE <= min(GNN-only, LLM-only) + 0.1")
def test_criterion_10_ablation(desk, smart_full):
    _, _, test = desk
    cfg = TrainConfig()
    full = infer_with_tuning(smart_full[0], test, cfg).mape
    gnn = infer_with_tuning(run_smart(desk, "gnn_only")[0], test, cfg).mape
    llm = infer_with_tuning(run_smart(desk, "llm_only")[0], test, cfg).mape
    print(f"\nfull {full:.3f}  GNN-only {gnn:.3f}  LLM-only {llm:.3f}")
    assert full <= min(gnn, llm) + 0.1


@pytest.mark.acceptance(11, "inference time bounds; hybrid time-saved recomputes from the log")
def test_criterion_11_timing(desk, smart_full):
    seq, train, test = desk
    smart = benchmark_inference(smart_full[0], test, 20)
    last = benchmark_inference(build_forecaster("last", seq), test, 200)
    print(f"\nSMART {smart.mean_s:.4g} s/prediction, LAST {last.mean_s:.3g} s/prediction")
    assert math.isfinite(smart.mean_s) and smart.mean_s < 2.0
    assert last.mean_s < 1e-3

    cost = sim_cost("D1", "LAMMPS", "contiguous")
    assert cost - 0.515 == pytest.approx(55.955)
    policy = ControllerPolicy(warmup_iterations=32, validation_window=8, switch_threshold=8.0,
                              fallback_threshold=12.0, F_t=8, revalidate_every=32)
    f = copy.deepcopy(smart_full[0])
    report = run_controller(train + test, f, policy, cost, TrainConfig(epochs=0))
    doc = json.loads(json.dumps(report.to_dict()))
    assert saved_from_log(doc["iterations"], cost) == doc["totals"]["time_saved_s"]
    n = doc["totals"]["surrogate_iterations"]
    spent = [e["inference_s"] for e in doc["iterations"] if e["mode"] == "surrogate"]
    assert doc["totals"]["time_saved_s"] == pytest.approx(n * cost - sum(spent), rel=1e-12)


@pytest.mark.acceptance(12, "same seed: cmd_train + cmd_eval metrics.json identical except timing")
def test_criterion_12_determinism(tmp_path):
    outputs = []
    for run in ("a", "b"):
        exp = {
            "data": {"synth": {"seed": 5, "duration": 80}},
            "target_app": "LAMMPS",
            "model": {"preset": "desk"},
            "train": {"epochs": 4, "F_t": 8},
            "baselines": [{"kind": "last"}, {"kind": "mean"}, {"kind": "lstm", "hidden": 8},
                          {"kind": "dcrnn", "hidden": 8}],
            "output_dir": str(tmp_path / run),
            "seed": 11,
        }
        path = tmp_path / f"{run}.json"
        path.write_text(json.dumps(exp))
        assert main(["train", str(path)]) == 0
        assert main(["eval", str(path)]) == 0
        docs = {}
        for m in sorted((tmp_path / run / "eval").iterdir()):
            doc = json.loads((m / "metrics.json").read_text())
            doc.pop("timing")
            docs[m.name] = doc
        outputs.append(docs)
    assert len(outputs[0]) == 5
    assert outputs[0] == outputs[1]
