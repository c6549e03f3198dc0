import json
import math

import numpy as np
import pytest

from dfsurrogate.errors import ConfigInvalid, OracleExhausted
from dfsurrogate.hybrid import (
    ORACLE,
    SURROGATE,
    ControllerPolicy,
    run_controller,
    saved_from_log,
    sim_cost,
)
from dfsurrogate.ingest import WindowSample
from dfsurrogate.train_eval import Forecaster, TrainConfig, build_forecaster


class Scripted(Forecaster):
    """Predicts truth * (1 + error(target iteration)); records what it was shown."""

    name = "scripted"

    def __init__(self, error):
        self.error = error
        self.seen = []
        self.tuned = []

    def predict(self, samples):
        self.seen.extend(samples)
        return np.stack([s.target * (1 + self.error(s.target_iteration)) for s in samples])

    def tune(self, samples, cfg):
        self.tuned.append([s.target_iteration for s in samples])
        return []


def stream(n, L=3, start=3):
    y = 100.0 + np.arange(n + L + 1, dtype=float)[:, None]
    return [WindowSample(t, y[t - L : t], np.zeros((1, 1, 1)), y[t]) for t in range(start, start + n)]


POLICY = dict(warmup_iterations=4, validation_window=2, switch_threshold=5.0,
              fallback_threshold=10.0, F_t=None, revalidate_every=3)


def test_mode_trace_by_hand():
    report = run_controller(stream(16), Scripted(lambda t: 0.01), ControllerPolicy(**POLICY), 10.0,
                            inference_cost=0.0)
    o, s = ORACLE, SURROGATE
    assert report.modes == [o] * 4 + [o, o] + [s] * 3 + [o, o] + [s] * 3 + [o, o]
    stages = [e["stage"] for e in report.log]
    assert stages[:6] == ["collect"] * 4 + ["validate"] * 2
    assert stages[9:11] == ["revalidate"] * 2


def test_fallback_returns_to_oracle():
    # accurate until iteration 12, then 12% off: the revalidation window fails
    err = lambda t: 0.01 if t < 12 else 0.12
    report = run_controller(stream(30), Scripted(err), ControllerPolicy(**POLICY), 10.0, inference_cost=0.0)
    first_bad = next(i for i, e in enumerate(report.log) if e["iteration"] >= 12 and e["mode"] == ORACLE)
    assert all(m == ORACLE for m in report.modes[first_bad:])


def test_looser_gate_during_revalidation():
    # 7% error passes the fallback gate (10%) but never the switch gate (5%)
    err = lambda t: 0.01 if t < 12 else 0.07
    report = run_controller(stream(30), Scripted(err), ControllerPolicy(**POLICY), 10.0, inference_cost=0.0)
    assert report.modes[-3:].count(SURROGATE) >= 1


def test_vacuous_and_impossible_gates():
    inf = run_controller(stream(12), Scripted(lambda t: 0.5),
                         ControllerPolicy(**{**POLICY, "switch_threshold": math.inf, "fallback_threshold": math.inf}),
                         10.0, inference_cost=0.0)
    assert inf.modes == [ORACLE] * 4 + [SURROGATE] * 8
    zero = run_controller(stream(12), Scripted(lambda t: 0.0),
                          ControllerPolicy(**{**POLICY, "switch_threshold": 0.0}), 10.0, inference_cost=0.0)
    assert zero.modes == [ORACLE] * 12


def test_truth_withheld_and_predictions_feed_history():
    f = Scripted(lambda t: 0.01)
    report = run_controller(stream(12), f, ControllerPolicy(**POLICY), 10.0, inference_cost=0.0)
    for e in report.log:
        assert (e["truth"] is None) == (e["mode"] == SURROGATE)
    predicted = {e["iteration"]: e["prediction"] for e in report.log if e["mode"] == SURROGATE}
    for s in f.seen:
        for i, it in enumerate(range(s.t - 2, s.t + 1)):
            if it in predicted:
                assert s.y_hist[i].tolist() == predicted[it]


def test_tuning_while_on_oracle():
    f = Scripted(lambda t: 0.5)  # never switches
    run_controller(stream(20), f, ControllerPolicy(**{**POLICY, "F_t": 4}), 10.0, inference_cost=0.0)
    assert len(f.tuned) == 4
    for batch in f.tuned:
        assert len(batch) == 4 and batch == sorted(batch)


def test_time_saved_accounting(tmp_path):
    report = run_controller(stream(16), Scripted(lambda t: 0.01), ControllerPolicy(**POLICY),
                            sim_cost("D1", "LAMMPS", "contiguous"), inference_cost=0.5)
    n = report.surrogate_iterations
    assert n == 6
    for e in report.log:
        if e["mode"] == SURROGATE:
            assert 56.47 - e["inference_s"] == pytest.approx(55.97)
    assert report.time_saved == pytest.approx(n * 56.47 - n * 0.5, rel=1e-12)
    path = tmp_path / "hybrid.json"
    report.save(path)
    doc = json.loads(path.read_text())
    assert saved_from_log(doc["iterations"], doc["totals"]["sim_cost_s"]) == doc["totals"]["time_saved_s"]
    assert doc["totals"]["surrogate_iterations"] == n


def test_reference_saving_arithmetic():
    assert sim_cost("D1", "LAMMPS", "contiguous") - 0.5150 == pytest.approx(55.955)
    assert sim_cost("D2", "NN", "random") == 14.98
    with pytest.raises(ConfigInvalid):
        sim_cost("D1", "MILC", "linear")


def test_measured_inference_cost_recomputes():
    report = run_controller(stream(16), Scripted(lambda t: 0.01), ControllerPolicy(**POLICY), 10.0)
    costs = [e["inference_s"] for e in report.log if e["mode"] == SURROGATE]
    assert all(c > 0 for c in costs)
    assert report.time_saved == math.fsum([10.0] * len(costs) + [-c for c in costs])


def test_oracle_exhausted():
    with pytest.raises(OracleExhausted):
        run_controller(stream(3), Scripted(lambda t: 0), ControllerPolicy(**POLICY), 1.0)


def test_policy_validation():
    with pytest.raises(ConfigInvalid):
        ControllerPolicy(switch_threshold=10, fallback_threshold=5).validate()
    with pytest.raises(ConfigInvalid):
        ControllerPolicy(warmup_iterations=0).validate()
    p = ControllerPolicy()
    assert (p.warmup_iterations, p.validation_window, p.switch_threshold, p.fallback_threshold) == (32, 8, 5.0, 10.0)


def test_trace_deterministic_with_trained_model(synth_sequence, synth_samples):
    policy = ControllerPolicy(warmup_iterations=40, validation_window=8, switch_threshold=8.0,
                              fallback_threshold=12.0, F_t=8, revalidate_every=16)
    runs = []
    for _ in range(2):
        f = build_forecaster("lstm", synth_sequence, seed=3)
        report = run_controller(synth_samples, f, policy, 56.47, TrainConfig(epochs=20, seed=3),
                                inference_cost=0.515)
        runs.append(report)
    assert runs[0].modes == runs[1].modes
    assert [e["prediction"] for e in runs[0].log] == [e["prediction"] for e in runs[1].log]
