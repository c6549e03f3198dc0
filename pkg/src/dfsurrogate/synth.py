"""Deterministic synthetic Dragonfly traces.

Every application (and the uniform-random background) injects traffic with
a log-normal AR(1) intensity sampled on the snapshot grid. A rank's next
iteration slows down in proportion to the traffic other jobs pushed through
its group (plus a share of system-wide global traffic) during its previous
iteration, so port counters recorded in iteration t carry information about
y at t+1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import CapacityExceeded, ConfigInvalid
from .ingest import (
    BACKGROUND,
    IterationRecord,
    PlacementMap,
    SnapshotTable,
    write_iterations,
    write_placement,
    write_snapshots,
)
from .topology import GLOBAL, LOCAL, TERMINAL, DragonflyConfig, GraphTopology, build_topology

FEATURES = ("busy_time", "vc_occupancy", "traffic_bytes", "stall_count")

# SeedSequence spawn keys; apps use their index directly
_KEY_TRAFFIC = 1000
_KEY_MEASURE = 2000
_KEY_PLACEMENT = 3000


@dataclass
class AppSpec:
    name: str
    ranks: int
    base_iter_time_ns: int
    congestion_coupling: float = 0.5
    noise_sigma: float = 0.01
    phase_sigma: float = 0.0
    phase_rho: float = 0.9
    message_volume: float = 1.0


@dataclass
class DriftSpec:
    onset: int
    magnitude: float


@dataclass
class SynthSpec:
    topology: DragonflyConfig = field(default_factory=lambda: DragonflyConfig(3, 2, 2, 1))
    apps: list[AppSpec] = field(default_factory=list)
    placement_policy: str = "random"
    background_fraction: float = 0.0
    duration: int = 200
    drift: DriftSpec | None = None
    seed: int = 0
    snapshot_period_ns: int = 250_000
    traffic_sigma: float = 0.5
    traffic_rho: float = 0.97
    global_share: float = 0.3
    measurement_noise: float = 0.02

    @property
    def background_nodes(self) -> int:
        return int(round(self.background_fraction * self.topology.num_compute_nodes))

    def validate(self) -> None:
        self.topology.validate()
        if not self.apps:
            raise ConfigInvalid("at least one application is required")
        names = [a.name for a in self.apps]
        if len(set(names)) != len(names) or BACKGROUND in names:
            raise ConfigInvalid(f"application names must be unique and not {BACKGROUND!r}")
        for app in self.apps:
            if app.ranks < 1 or app.base_iter_time_ns <= 0:
                raise ConfigInvalid(f"{app.name}: ranks and base_iter_time_ns must be positive")
            if app.noise_sigma < 0 or app.phase_sigma < 0 or not 0 <= app.phase_rho < 1:
                raise ConfigInvalid(f"{app.name}: bad noise model")
        if self.placement_policy not in ("contiguous", "random"):
            raise ConfigInvalid(f"unknown placement policy {self.placement_policy!r}")
        if not 0 <= self.background_fraction <= 1:
            raise ConfigInvalid("background_fraction must lie in [0, 1]")
        if self.duration < 1:
            raise ConfigInvalid("duration must be positive")
        if self.drift is not None and not 0 <= self.drift.onset < self.duration:
            raise ConfigInvalid("drift onset must fall inside the run")
        if not 0 <= self.traffic_rho < 1:
            raise ConfigInvalid("traffic_rho must lie in [0, 1)")
        used = sum(a.ranks for a in self.apps) + self.background_nodes
        if used > self.topology.num_compute_nodes:
            raise CapacityExceeded(
                f"{used} nodes requested, system has {self.topology.num_compute_nodes}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        doc["topology"] = DragonflyConfig(**doc.get("topology", {}))
        doc["apps"] = [AppSpec(**a) for a in doc.get("apps", [])]
        if doc.get("drift") is not None:
            doc["drift"] = DriftSpec(**doc["drift"])
        return cls(**doc)


def default_spec(seed: int = 0, **overrides) -> SynthSpec:
    """Desk-scale spec: 3 groups x 2 routers, two coupled jobs plus background."""
    spec = SynthSpec(
        topology=DragonflyConfig(3, 2, 2, 1),
        apps=[
            AppSpec("MILC", 4, 2_000_000, congestion_coupling=0.6, noise_sigma=0.01,
                    phase_sigma=0.04, phase_rho=0.9, message_volume=1.0),
            AppSpec("LAMMPS", 4, 1_500_000, congestion_coupling=0.4, noise_sigma=0.01,
                    phase_sigma=0.04, phase_rho=0.9, message_volume=1.5),
        ],
        placement_policy="random",
        background_fraction=2 / 12,
        duration=200,
        seed=seed,
    )
    for key, value in overrides.items():
        setattr(spec, key, value)
    return spec


@dataclass
class SynthTrace:
    topology: GraphTopology
    snapshots: SnapshotTable
    iterations: list[IterationRecord]
    placement: PlacementMap
    spec: SynthSpec

    def manifest(self) -> dict:
        return {
            "topology": asdict(self.spec.topology),
            "snapshots": "snapshots.csv",
            "iterations": "iterations.csv",
            "placement": "placement.csv",
            "features": list(FEATURES),
            "snapshot_period_ns": self.spec.snapshot_period_ns,
            "apps": [a.name for a in self.spec.apps],
            "generator": {"seed": self.spec.seed, "placement": self.spec.placement_policy},
        }

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_snapshots(self.snapshots, out / "snapshots.csv")
        write_iterations(self.iterations, out / "iterations.csv")
        write_placement(self.placement, out / "placement.csv")
        path = out / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2) + "\n")
        return path


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def apply_drift(series, onset: int, magnitude: float) -> np.ndarray:
    """Scale ``series[onset:]`` by ``1 + magnitude``."""
    series = np.asarray(series, dtype=np.float64)
    if not 0 <= onset < len(series):
        raise ValueError(f"onset {onset} outside series of length {len(series)}")
    out = series.copy()
    out[onset:] *= 1.0 + magnitude
    return out


class _Intensity:
    """Lazily extended log-normal AR(1) traffic intensity on the snapshot grid."""

    CHUNK = 4096

    def __init__(self, rng: np.random.Generator, volume: float, sigma: float, rho: float):
        self.rng, self.volume, self.sigma, self.rho = rng, volume, sigma, rho
        self.z = np.empty(0)

    def upto(self, k: int) -> np.ndarray:
        while len(self.z) < k:
            eps = self.rng.standard_normal(self.CHUNK)
            inno = np.sqrt(1.0 - self.rho**2)
            if len(self.z):
                zi = [self.rho * self.z[-1]]
            else:
                # start in the stationary distribution
                zi = [eps[0]]
                eps[0] = 0.0
            z, _ = lfilter([inno], [1.0, -self.rho], eps, zi=zi)
            self.z = np.concatenate([self.z, z])
        return self.volume * np.exp(self.sigma * self.z[:k] - 0.5 * self.sigma**2)


def place(spec: SynthSpec) -> PlacementMap:
    n = spec.topology.num_compute_nodes
    if spec.placement_policy == "random":
        order = _rng(spec.seed, _KEY_PLACEMENT).permutation(n)
    else:
        order = np.arange(n)
    rank_to_node, node_app = {}, {}
    cursor = 0
    for app in spec.apps:
        for rank in range(1, app.ranks + 1):
            node = int(order[cursor])
            rank_to_node[(app.name, rank)] = node
            node_app[node] = app.name
            cursor += 1
    for _ in range(spec.background_nodes):
        node_app[int(order[cursor])] = BACKGROUND
        cursor += 1
    return PlacementMap(rank_to_node, node_app)


def generate(spec: SynthSpec) -> SynthTrace:
    spec.validate()
    topo = build_topology(spec.topology)
    cfg = spec.topology
    placement = place(spec)
    P = spec.snapshot_period_ns
    Nc = cfg.num_compute_nodes
    per_group = cfg.routers_per_group * cfg.terminals_per_router

    sources = [a.name for a in spec.apps] + [BACKGROUND]
    volumes = [a.message_volume for a in spec.apps] + [1.0]
    intensity = [
        _Intensity(_rng(spec.seed, _KEY_TRAFFIC + i), v, spec.traffic_sigma, spec.traffic_rho)
        for i, v in enumerate(volumes)
    ]
    node_src = np.full(Nc, -1)
    for node, app in placement.node_app.items():
        node_src[node] = sources.index(app)
    node_group = np.arange(Nc) // per_group

    def interference(app_idx: int, group: int, lb: int, ub: int) -> float:
        k0, k1 = -(-lb // P), -(-ub // P)  # grid points with lb <= kP < ub
        if k1 <= k0:
            k1 = k0 + 1
        total = 0.0
        for s in range(len(sources)):
            if s == app_idx:
                continue
            members = node_src == s
            local = np.count_nonzero(members & (node_group == group)) / per_group
            glob = np.count_nonzero(members) / Nc
            weight = local + spec.global_share * glob
            if weight:
                total += weight * intensity[s].upto(k1)[k0:k1].mean()
        return total

    records: list[IterationRecord] = []
    horizon = 0
    for a_idx, app in enumerate(spec.apps):
        rng = _rng(spec.seed, a_idx)
        base = np.full(spec.duration, float(app.base_iter_time_ns))
        if spec.drift is not None:
            base = apply_drift(base, spec.drift.onset, spec.drift.magnitude)
        ranks = list(range(1, app.ranks + 1))
        groups = [node_group[placement.rank_to_node[(app.name, r)]] for r in ranks]
        # stationary AR(1) in log space, one per rank
        phase = rng.standard_normal(app.ranks) * app.phase_sigma
        inno = app.phase_sigma * np.sqrt(1.0 - app.phase_rho**2)
        start = int(app.base_iter_time_ns)
        prev = [(0, start)] * app.ranks
        for t in range(spec.duration):
            if t:
                phase = app.phase_rho * phase + inno * rng.standard_normal(app.ranks)
            eps = rng.standard_normal(app.ranks) * app.noise_sigma
            ends = []
            for j, rank in enumerate(ranks):
                load = interference(a_idx, groups[j], *prev[j]) if app.congestion_coupling else 0.0
                y = base[t] * np.exp(phase[j] + eps[j]) * (1.0 + app.congestion_coupling * load)
                end = start + max(1, int(round(y)))
                ends.append(end)
                records.append(IterationRecord(app.name, rank, t + 1, start, end))
            prev = [(start, e) for e in ends]
            start = max(ends)  # barrier
        horizon = max(horizon, start)

    snapshots = _port_snapshots(spec, topo, intensity, node_src, horizon)
    records.sort(key=lambda r: (sources.index(r.app_name), r.rank, r.iteration))
    return SynthTrace(topo, snapshots, records, placement, spec)


def _port_snapshots(spec, topo, intensity, node_src, horizon) -> SnapshotTable:
    cfg = spec.topology
    P = spec.snapshot_period_ns
    K = horizon // P + 1
    Nc = cfg.num_compute_nodes
    R, t_per, ppr = cfg.routers_per_group, cfg.terminals_per_router, cfg.ports_per_router
    levels = np.stack([src.upto(K) for src in intensity])  # (S, K)
    inj = np.zeros((K, Nc))
    busy = node_src >= 0
    inj[:, busy] = levels[node_src[busy]].T
    router_inj = inj.reshape(K, cfg.num_routers, t_per).sum(axis=2) / t_per
    group_load = router_inj.reshape(K, cfg.num_groups, R).mean(axis=2)
    system_load = router_inj.mean(axis=1)

    traffic = np.zeros((K, topo.num_nodes))
    congestion = np.zeros((K, topo.num_nodes))
    for node in topo.nodes:
        v, r, g = node.node_id, node.router_id, node.group_id
        if node.port_kind == TERMINAL:
            traffic[:, v] = inj[:, node.attached_compute_node]
        elif node.port_kind == LOCAL:
            j = v - r * ppr - t_per
            peer = g * R + (j if j < r % R else j + 1)
            traffic[:, v] = 0.5 * (router_inj[:, r] + router_inj[:, peer])
        else:
            assert node.port_kind == GLOBAL
            traffic[:, v] = system_load
        congestion[:, v] = group_load[:, g] + spec.global_share * system_load

    rng = _rng(spec.seed, _KEY_MEASURE)
    jitter = 1.0 + spec.measurement_noise * rng.standard_normal((K, topo.num_nodes, len(FEATURES)))
    values = np.stack(
        [
            P * traffic / (1.0 + traffic),
            16.0 * congestion,
            4096.0 * traffic,
            50.0 * congestion**2,
        ],
        axis=2,
    )
    values = np.clip(values * jitter, 0.0, None)

    n = topo.num_nodes
    time = np.repeat(np.arange(K, dtype=np.int64) * P, n)
    node_ids = np.tile(np.arange(n, dtype=np.int64), K)
    return SnapshotTable(
        time,
        node_ids // ppr,
        node_ids % ppr,
        values.reshape(K * n, len(FEATURES)),
        FEATURES,
        P,
    )
