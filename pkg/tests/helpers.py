"""Small hand-built traces for the ingestion tests."""

from __future__ import annotations

import numpy as np

from dfsurrogate.ingest import IterationRecord, PlacementMap, SnapshotTable
from dfsurrogate.topology import DragonflyConfig, build_topology

MS = 1_000_000


def placement(ranks: dict[tuple[str, int], int], background=()) -> PlacementMap:
    node_app = {node: app for (app, _), node in ranks.items()}
    node_app.update({n: "background" for n in background})
    return PlacementMap(dict(ranks), node_app)


def iterations(spans: dict[tuple[str, int], list[tuple[int, int]]]) -> list[IterationRecord]:
    out = []
    for (app, rank), ss in spans.items():
        out += [IterationRecord(app, rank, i + 1, s, e) for i, (s, e) in enumerate(ss)]
    return out


def constant_snapshots(config: DragonflyConfig, horizon_ns: int, period=250_000, names=("a", "b")):
    """Every port reports value = node id + k*1000 for feature k at each tick."""
    topo = build_topology(config)
    ticks = np.arange(0, horizon_ns, period, dtype=np.int64)
    n = topo.num_nodes
    ppr = config.ports_per_router
    node = np.tile(np.arange(n), len(ticks))
    time = np.repeat(ticks, n)
    values = np.stack([node + 1000.0 * k for k in range(len(names))], axis=1).astype(float)
    return SnapshotTable(time, node // ppr, node % ppr, values, tuple(names), period)
