"""Trace ingestion: from router snapshots and iteration logs to temporal graphs.

Three CSV files make up a dataset, bound together by a JSON manifest:

* ``snapshots.csv``  ``time_ns,router_id,port_id,<feature columns>``
* ``iterations.csv`` ``app,rank,iter,start_ns,end_ns``
* ``placement.csv``  ``rank,node_id,app`` (``node_id`` is a compute-node index;
  background nodes carry an empty rank)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    GapError,
    NoActiveNodes,
    SchemaMismatch,
    TooShort,
    TraceError,
)
from .topology import DragonflyConfig, GraphTopology, build_topology, hop_distances

log = logging.getLogger(__name__)

DEFAULT_SNAPSHOT_PERIOD_NS = 250_000
DEFAULT_STATS = ("mean", "max")
BACKGROUND = "background"


@dataclass(frozen=True)
class SnapshotRecord:
    time: int
    router_id: int
    port_id: int
    features: tuple[float, ...]


@dataclass(frozen=True)
class IterationRecord:
    app_name: str
    rank: int
    iteration: int
    start: int
    end: int

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass
class SnapshotTable:
    """Columnar snapshot store; one row per (time, router, port)."""

    time: np.ndarray
    router_id: np.ndarray
    port_id: np.ndarray
    values: np.ndarray
    feature_names: tuple[str, ...]
    period_ns: int = DEFAULT_SNAPSHOT_PERIOD_NS

    def __len__(self) -> int:
        return len(self.time)

    def records(self):
        for i in range(len(self)):
            yield SnapshotRecord(
                int(self.time[i]),
                int(self.router_id[i]),
                int(self.port_id[i]),
                tuple(float(v) for v in self.values[i]),
            )

    def by_node(self, config: DragonflyConfig) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Time-sorted (times, values) per port node id."""
        node = self.router_id.astype(np.int64) * config.ports_per_router + self.port_id
        order = np.lexsort((self.time, node))
        node, times, values = node[order], self.time[order], self.values[order]
        cuts = np.flatnonzero(np.diff(node)) + 1
        out = {}
        for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, len(node)]):
            out[int(node[lo])] = (times[lo:hi], values[lo:hi])
        return out


@dataclass
class PlacementMap:
    rank_to_node: dict[tuple[str, int], int]
    node_app: dict[int, str]

    def ranks(self, app: str) -> list[int]:
        return sorted(r for a, r in self.rank_to_node if a == app)

    def apps(self) -> list[str]:
        return sorted({a for a, _ in self.rank_to_node})

    def validate(self, config: DragonflyConfig) -> None:
        if len(self.node_app) > config.num_compute_nodes:
            raise TraceError("placement maps more nodes than the system has")
        for node in self.node_app:
            if not 0 <= node < config.num_compute_nodes:
                raise TraceError(f"compute node {node} out of range")
        seen: dict[str, set[int]] = {}
        for (app, _), node in self.rank_to_node.items():
            if node in seen.setdefault(app, set()):
                raise TraceError(f"two ranks of {app} share compute node {node}")
            seen[app].add(node)


@dataclass
class TemporalGraphSequence:
    topology: GraphTopology
    X: np.ndarray  # (T, |V|, d_f)
    active_ids: np.ndarray  # sorted port node ids of V_a
    y: np.ndarray  # (T, |V_a|) iteration times in ns
    feature_names: tuple[str, ...]
    target_app: str
    bounds: np.ndarray | None = field(default=None, repr=False)  # (T, |V|, 2)

    @property
    def num_iterations(self) -> int:
        return self.X.shape[0]

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.topology.num_nodes, dtype=bool)
        m[self.active_ids] = True
        return m

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            X=self.X,
            active_ids=self.active_ids,
            y=self.y,
            feature_names=np.array(self.feature_names),
            target_app=np.array(self.target_app),
            topology=np.array(json.dumps(self.topology.to_dict())),
        )

    @classmethod
    def load(cls, path: str | Path) -> "TemporalGraphSequence":
        with np.load(path) as z:
            topo = GraphTopology.from_dict(json.loads(str(z["topology"])))
            return cls(
                topo,
                z["X"],
                z["active_ids"],
                z["y"],
                tuple(str(s) for s in z["feature_names"]),
                str(z["target_app"]),
            )


@dataclass(frozen=True)
class WindowSample:
    """History windows ending at iteration ``t`` (1-based) and the target y_{t+1}."""

    t: int
    y_hist: np.ndarray  # (L_y, |V_a|)
    x_hist: np.ndarray  # (L_x, |V|, d_f)
    target: np.ndarray  # (|V_a|,)

    @property
    def target_iteration(self) -> int:
        return self.t + 1


# ---------------------------------------------------------------------------
# iteration bookkeeping


class IterationIndex:
    """Per-rank start/end arrays, validated for contiguity 1..T."""

    def __init__(self, records: Sequence[IterationRecord], app: str, ranks: Sequence[int]):
        by_rank: dict[int, list[IterationRecord]] = {r: [] for r in ranks}
        for rec in records:
            if rec.app_name == app and rec.rank in by_rank:
                by_rank[rec.rank].append(rec)
        self.start: dict[int, np.ndarray] = {}
        self.end: dict[int, np.ndarray] = {}
        T = None
        for rank, recs in by_rank.items():
            recs.sort(key=lambda r: r.iteration)
            iters = [r.iteration for r in recs]
            if iters != list(range(1, len(iters) + 1)):
                raise GapError(f"{app} rank {rank} iterations are not contiguous from 1")
            if T is None:
                T = len(iters)
            elif len(iters) != T:
                raise GapError(
                    f"{app} rank {rank} has {len(iters)} iterations, expected {T}"
                )
            s = np.array([r.start for r in recs], dtype=np.int64)
            e = np.array([r.end for r in recs], dtype=np.int64)
            if np.any(e <= s):
                raise TraceError(f"{app} rank {rank} has a non-positive iteration")
            if np.any(s[1:] < e[:-1]):
                raise TraceError(f"{app} rank {rank} has overlapping iterations")
            self.start[rank], self.end[rank] = s, e
        self.num_iterations = T or 0

    def bounds(self, rank: int, iteration: int) -> tuple[int, int]:
        i = iteration - 1
        return int(self.start[rank][i]), int(self.end[rank][i])


class BoundsResolver:
    """Aggregation window [lb, ub) for every port node at a given iteration.

    Active nodes use their own iteration. Other ports on a router with active
    terminals use that terminal's window, or the union (earliest start,
    latest end) when several are active. Everything else copies the window of
    the nearest active node by hop count, ties going to the lowest node id.
    """

    def __init__(
        self,
        topology: GraphTopology,
        iterations: Sequence[IterationRecord] | IterationIndex,
        placement: PlacementMap,
        target_app: str,
    ):
        ranks = placement.ranks(target_app)
        if not ranks:
            raise NoActiveNodes(f"no ranks of {target_app!r} in placement")
        config = topology.config
        self.topology = topology
        self.index = (
            iterations
            if isinstance(iterations, IterationIndex)
            else IterationIndex(iterations, target_app, ranks)
        )
        self.node_rank = {
            config.terminal_node(placement.rank_to_node[(target_app, r)]): r for r in ranks
        }
        self.active_ids = np.array(sorted(self.node_rank), dtype=np.int64)

        n = topology.num_nodes
        self.source = np.full(n, -1, dtype=np.int64)  # active node supplying the window
        self.router_group: dict[int, list[int]] = {}
        for router in range(config.num_routers):
            act = [p for p in topology.terminal_ports(router) if p in self.node_rank]
            if act:
                self.router_group[router] = act

        for node in topology.nodes:
            if node.node_id in self.node_rank:
                self.source[node.node_id] = node.node_id
        todo = [
            v.node_id
            for v in topology.nodes
            if self.source[v.node_id] < 0 and v.router_id not in self.router_group
        ]
        if todo:
            dist = hop_distances(topology, list(self.active_ids))
            for v in todo:
                col = dist[:, v]
                k = int(np.argmin(col))  # first minimum = lowest id
                if not np.isfinite(col[k]):
                    raise NoActiveNodes(f"node {v} cannot reach any active node")
                self.source[v] = self.active_ids[k]

    def bounds(self, node_id: int, iteration: int) -> tuple[int, int]:
        src = int(self.source[node_id])
        if src >= 0:
            return self.index.bounds(self.node_rank[src], iteration)
        router = self.topology.nodes[node_id].router_id
        spans = [self.index.bounds(self.node_rank[p], iteration) for p in self.router_group[router]]
        return min(s for s, _ in spans), max(e for _, e in spans)

    def case(self, node_id: int) -> int:
        """Which rule applies: 0 active, 1 one active terminal, 2 several, 3 nearest."""
        if node_id in self.node_rank:
            return 0
        router = self.topology.nodes[node_id].router_id
        if router in self.router_group:
            return 1 if len(self.router_group[router]) == 1 else 2
        return 3


def aggregation_bounds(
    topology: GraphTopology,
    node_id: int,
    iteration: int,
    iterations: Sequence[IterationRecord],
    placement: PlacementMap,
    target_app: str,
) -> tuple[int, int]:
    return BoundsResolver(topology, iterations, placement, target_app).bounds(node_id, iteration)


# ---------------------------------------------------------------------------
# feature aggregation


def _stat(values: np.ndarray, name: str) -> np.ndarray:
    if name == "mean":
        return values.mean(axis=0)
    if name == "max":
        return values.max(axis=0)
    if name == "min":
        return values.min(axis=0)
    if name == "median":
        return np.median(values, axis=0)
    if name.startswith("q"):
        return np.quantile(values, float(name[1:]), axis=0)
    raise ValueError(f"unknown statistic {name!r}")


def check_stats(stats: Sequence[str]) -> tuple[str, ...]:
    probe = np.zeros((1, 1))
    for s in stats:
        _stat(probe, s)
        if s.startswith("q") and not 0.0 <= float(s[1:]) <= 1.0:
            raise ValueError(f"quantile out of range in {s!r}")
    return tuple(stats)


def aggregate_features(
    times: np.ndarray,
    values: np.ndarray,
    lb: int,
    ub: int,
    stats: Sequence[str] = DEFAULT_STATS,
) -> np.ndarray:
    """Statistics of the snapshots with ``lb <= time < ub``, feature-major.

    ``times`` must be sorted. An empty window falls back to the last value
    before ``lb`` (or zeros).
    """
    if not lb < ub:
        raise ValueError(f"empty interval [{lb}, {ub})")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    lo, hi = np.searchsorted(times, [lb, ub], side="left")
    if hi > lo:
        window = values[lo:hi]
        cols = [_stat(window, s) for s in stats]
    else:
        log.warning("no snapshot in [%d, %d); carrying the previous value", lb, ub)
        last = values[lo - 1] if lo > 0 else np.zeros(values.shape[1])
        cols = [last] * len(stats)
    return np.stack(cols, axis=1).reshape(-1)


def build_sequence(
    topology: GraphTopology,
    snapshots: SnapshotTable,
    iterations: Sequence[IterationRecord],
    placement: PlacementMap,
    target_app: str,
    stats: Sequence[str] = DEFAULT_STATS,
    schema: Sequence[str] | None = None,
) -> TemporalGraphSequence:
    if len(snapshots) == 0:
        raise TraceError("snapshot table is empty")
    if schema is not None and tuple(schema) != tuple(snapshots.feature_names):
        raise SchemaMismatch(
            f"declared features {list(schema)} != snapshot columns {list(snapshots.feature_names)}"
        )
    if snapshots.values.shape[1] != len(snapshots.feature_names):
        raise SchemaMismatch("snapshot value width does not match its feature names")
    stats = check_stats(stats)
    placement.validate(topology.config)
    resolver = BoundsResolver(topology, iterations, placement, target_app)
    T = resolver.index.num_iterations
    if T == 0:
        raise GapError(f"no iterations recorded for {target_app!r}")

    n = topology.num_nodes
    d_raw = len(snapshots.feature_names)
    d_f = d_raw * len(stats)
    per_node = snapshots.by_node(topology.config)
    empty = (np.zeros(0, dtype=np.int64), np.zeros((0, d_raw)))

    bounds = np.empty((T, n, 2), dtype=np.int64)
    for v in range(n):
        for t in range(1, T + 1):
            bounds[t - 1, v] = resolver.bounds(v, t)

    X = np.empty((T, n, d_f))
    for v in range(n):
        times, values = per_node.get(v, empty)
        for t in range(T):
            lb, ub = bounds[t, v]
            X[t, v] = aggregate_features(times, values, lb, ub, stats)

    active = resolver.active_ids
    y = np.empty((T, len(active)))
    for j, node in enumerate(active):
        rank = resolver.node_rank[int(node)]
        y[:, j] = resolver.index.end[rank] - resolver.index.start[rank]

    names = tuple(f"{f}:{s}" for f in snapshots.feature_names for s in stats)
    return TemporalGraphSequence(topology, X, active, y, names, target_app, bounds)


def window_stream(sequence: TemporalGraphSequence, L_y: int, L_x: int) -> list[WindowSample]:
    """One sample per t in [max(L_y, L_x), T-1] (1-based), target y_{t+1}."""
    if L_y < 1 or L_x < 1:
        raise ValueError("look-back windows must be positive")
    T = sequence.num_iterations
    start = max(L_y, L_x)
    if T <= start:
        raise TooShort(f"{T} iterations cannot feed windows of length {start}")
    out = []
    for t in range(start, T):
        # 1-based t maps to array index t-1
        out.append(
            WindowSample(
                t=t,
                y_hist=sequence.y[t - L_y : t],
                x_hist=sequence.X[t - L_x : t],
                target=sequence.y[t],
            )
        )
    return out


# ---------------------------------------------------------------------------
# file formats


@dataclass
class Dataset:
    topology: GraphTopology
    snapshots: SnapshotTable
    iterations: list[IterationRecord]
    placement: PlacementMap
    manifest: dict

    def sequence(self, target_app: str, stats: Sequence[str] | None = None) -> TemporalGraphSequence:
        stats = stats or self.manifest.get("stats", DEFAULT_STATS)
        return build_sequence(
            self.topology,
            self.snapshots,
            self.iterations,
            self.placement,
            target_app,
            stats,
            schema=self.manifest.get("features"),
        )


def write_snapshots(table: SnapshotTable, path: str | Path) -> None:
    df = pd.DataFrame(
        {"time_ns": table.time, "router_id": table.router_id, "port_id": table.port_id}
    )
    for j, name in enumerate(table.feature_names):
        df[name] = table.values[:, j]
    df.to_csv(path, index=False, float_format="%.17g")


def read_snapshots(
    path: str | Path,
    period_ns: int = DEFAULT_SNAPSHOT_PERIOD_NS,
    column_map: dict | None = None,
    time_scale: float = 1.0,
) -> SnapshotTable:
    df = pd.read_csv(path, float_precision="round_trip")
    if column_map:
        df = df.rename(columns={v: k for k, v in column_map.items()})
    missing = {"time_ns", "router_id", "port_id"} - set(df.columns)
    if missing:
        raise SchemaMismatch(f"snapshot file lacks columns {sorted(missing)}")
    names = tuple(c for c in df.columns if c not in ("time_ns", "router_id", "port_id"))
    times = df["time_ns"].to_numpy()
    if time_scale != 1.0:
        times = np.rint(times * time_scale)
    return SnapshotTable(
        times.astype(np.int64),
        df["router_id"].to_numpy(np.int64),
        df["port_id"].to_numpy(np.int64),
        df[list(names)].to_numpy(np.float64).reshape(len(df), len(names)),
        names,
        period_ns,
    )


def write_iterations(records: Sequence[IterationRecord], path: str | Path) -> None:
    df = pd.DataFrame(
        [(r.app_name, r.rank, r.iteration, r.start, r.end) for r in records],
        columns=["app", "rank", "iter", "start_ns", "end_ns"],
    )
    df.to_csv(path, index=False)


def read_iterations(
    path: str | Path, column_map: dict | None = None, time_scale: float = 1.0
) -> list[IterationRecord]:
    df = pd.read_csv(path)
    if column_map:
        df = df.rename(columns={v: k for k, v in column_map.items()})
    missing = {"app", "rank", "iter", "start_ns", "end_ns"} - set(df.columns)
    if missing:
        raise SchemaMismatch(f"iteration file lacks columns {sorted(missing)}")
    start = np.rint(df["start_ns"].to_numpy() * time_scale).astype(np.int64)
    end = np.rint(df["end_ns"].to_numpy() * time_scale).astype(np.int64)
    return [
        IterationRecord(str(a), int(r), int(i), int(s), int(e))
        for a, r, i, s, e in zip(df["app"], df["rank"], df["iter"], start, end)
    ]


def write_placement(placement: PlacementMap, path: str | Path) -> None:
    rows = {node: ("", app) for node, app in placement.node_app.items()}
    for (app, rank), node in placement.rank_to_node.items():
        rows[node] = (str(rank), app)
    with open(path, "w") as fh:
        fh.write("rank,node_id,app\n")
        for node in sorted(rows):
            rank, app = rows[node]
            fh.write(f"{rank},{node},{app}\n")


def read_placement(path: str | Path, column_map: dict | None = None) -> PlacementMap:
    df = pd.read_csv(path, dtype={"app": str})
    if column_map:
        df = df.rename(columns={v: k for k, v in column_map.items()})
    rank_to_node, node_app = {}, {}
    for rank, node, app in zip(df["rank"], df["node_id"], df["app"]):
        node_app[int(node)] = str(app)
        if not pd.isna(rank):
            rank_to_node[(str(app), int(rank))] = int(node)
    return PlacementMap(rank_to_node, node_app)


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset described by a JSON manifest.

    Manifest keys: ``topology`` (DragonflyConfig fields), ``snapshots``,
    ``iterations``, ``placement`` (paths relative to the manifest),
    ``features``, ``snapshot_period_ns``; optionally ``stats``,
    ``column_map`` (canonical name -> file column, per file) and
    ``time_scale`` (multiplier to nanoseconds) for foreign layouts.
    """
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    cmap = doc.get("column_map", {})
    scale = float(doc.get("time_scale", 1.0))
    topology = build_topology(DragonflyConfig(**doc["topology"]))
    snapshots = read_snapshots(
        root / doc["snapshots"],
        int(doc.get("snapshot_period_ns", DEFAULT_SNAPSHOT_PERIOD_NS)),
        cmap.get("snapshots"),
        scale,
    )
    if "features" in doc and tuple(doc["features"]) != snapshots.feature_names:
        if set(doc["features"]) <= set(snapshots.feature_names):
            idx = [snapshots.feature_names.index(f) for f in doc["features"]]
            snapshots.values = snapshots.values[:, idx]
            snapshots.feature_names = tuple(doc["features"])
        else:
            raise SchemaMismatch(
                f"manifest features {doc['features']} not found in {snapshots.feature_names}"
            )
    iterations = read_iterations(root / doc["iterations"], cmap.get("iterations"), scale)
    placement = read_placement(root / doc["placement"], cmap.get("placement"))
    return Dataset(topology, snapshots, iterations, placement, doc)
