"""Port-level graph of a 1D Dragonfly system.

Nodes are router ports. Ports of one router form a clique, and every
local (intra-group) or global (inter-group) link adds one edge between the
two ports it joins. Node ids are assigned group-major, router-minor, and
within a router in the order terminal < local < global.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy import sparse

from .errors import ConfigInfeasible, ConfigInvalid

TERMINAL = "terminal"
LOCAL = "local"
GLOBAL = "global"
PORT_KINDS = (TERMINAL, LOCAL, GLOBAL)


@dataclass(frozen=True)
class DragonflyConfig:
    num_groups: int = 33
    routers_per_group: int = 8
    terminals_per_router: int = 4
    global_ports_per_router: int = 4

    def validate(self) -> None:
        for name in ("num_groups", "routers_per_group", "terminals_per_router"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigInvalid(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.global_ports_per_router, int) or self.global_ports_per_router < 0:
            raise ConfigInvalid(
                f"global_ports_per_router must be >= 0, got {self.global_ports_per_router!r}"
            )
        slots = self.routers_per_group * self.global_ports_per_router
        if slots < self.num_groups - 1:
            raise ConfigInfeasible(
                f"{self.routers_per_group} routers x {self.global_ports_per_router} global ports "
                f"cannot reach {self.num_groups - 1} other groups"
            )

    @property
    def local_ports_per_router(self) -> int:
        return self.routers_per_group - 1

    @property
    def ports_per_router(self) -> int:
        return (
            self.terminals_per_router
            + self.local_ports_per_router
            + self.global_ports_per_router
        )

    @property
    def num_routers(self) -> int:
        return self.num_groups * self.routers_per_group

    @property
    def num_compute_nodes(self) -> int:
        return self.num_routers * self.terminals_per_router

    @property
    def num_ports(self) -> int:
        return self.num_routers * self.ports_per_router

    def port_kind(self, port_index: int) -> str:
        if port_index < self.terminals_per_router:
            return TERMINAL
        if port_index < self.terminals_per_router + self.local_ports_per_router:
            return LOCAL
        return GLOBAL

    def node_id(self, router_id: int, port_index: int) -> int:
        return router_id * self.ports_per_router + port_index

    def terminal_node(self, compute_node: int) -> int:
        """Port node id of the terminal port serving ``compute_node``."""
        router, slot = divmod(compute_node, self.terminals_per_router)
        return self.node_id(router, slot)


@dataclass(frozen=True)
class PortNode:
    node_id: int
    router_id: int
    group_id: int
    port_kind: str
    attached_compute_node: int | None = None

    def __post_init__(self):
        if (self.port_kind == TERMINAL) != (self.attached_compute_node is not None):
            raise ConfigInvalid("attached_compute_node must be set exactly for terminal ports")


@dataclass(frozen=True)
class GraphTopology:
    config: DragonflyConfig
    nodes: tuple[PortNode, ...]
    edges: tuple[tuple[int, int], ...]
    local_links: tuple[tuple[int, int], ...] = field(default=(), compare=False)
    global_links: tuple[tuple[int, int], ...] = field(default=(), compare=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> sparse.csr_matrix:
        """Unweighted symmetric adjacency without self-loops."""
        n = self.num_nodes
        if not self.edges:
            return sparse.csr_matrix((n, n))
        e = np.asarray(self.edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.ones(len(rows))
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def adjacency_norm(self) -> np.ndarray:
        norm = normalized_adjacency(self)
        norm.setflags(write=False)
        return norm

    def neighbors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            out[u].append(v)
            out[v].append(u)
        for row in out:
            row.sort()
        return out

    def router_ports(self, router_id: int) -> range:
        ppr = self.config.ports_per_router
        return range(router_id * ppr, (router_id + 1) * ppr)

    def terminal_ports(self, router_id: int) -> list[int]:
        start = router_id * self.config.ports_per_router
        return list(range(start, start + self.config.terminals_per_router))

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "nodes": [
                {
                    "id": n.node_id,
                    "router": n.router_id,
                    "group": n.group_id,
                    "kind": n.port_kind,
                    "compute": n.attached_compute_node,
                }
                for n in self.nodes
            ],
            "edges": [list(e) for e in self.edges],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, doc: dict) -> "GraphTopology":
        config = DragonflyConfig(**doc["config"])
        nodes = tuple(
            PortNode(d["id"], d["router"], d["group"], d["kind"], d["compute"])
            for d in doc["nodes"]
        )
        edges = tuple(tuple(sorted(e)) for e in doc["edges"])
        return cls(config, nodes, edges)

    @classmethod
    def load(cls, path: str | Path) -> "GraphTopology":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _global_slot(config: DragonflyConfig, group: int, slot: int) -> int:
    """Node id of global-port ``slot`` (0-based, router-major) in ``group``."""
    h = config.global_ports_per_router
    router = group * config.routers_per_group + slot // h
    port = config.terminals_per_router + config.local_ports_per_router + slot % h
    return config.node_id(router, port)


def iter_global_links(config: DragonflyConfig) -> Iterator[tuple[int, int]]:
    """Round-robin global wiring.

    Slot k of group g points at group (g + k + 1) mod G; the peer uses slot
    G - 2 - k, so each group pair gets one link and no slot is reused.
    """
    G = config.num_groups
    for g in range(G):
        for k in range(G - 1):
            peer = (g + k + 1) % G
            if peer < g:
                continue
            u = _global_slot(config, g, k)
            v = _global_slot(config, peer, G - 2 - k)
            yield (u, v) if u < v else (v, u)


def iter_local_links(config: DragonflyConfig) -> Iterator[tuple[int, int]]:
    R = config.routers_per_group
    t = config.terminals_per_router
    for g in range(config.num_groups):
        for a, b in combinations(range(R), 2):
            # local port j of router a points at the j-th other router
            port_a = t + (b - 1)
            port_b = t + a
            u = config.node_id(g * R + a, port_a)
            v = config.node_id(g * R + b, port_b)
            yield (u, v)


def build_topology(config: DragonflyConfig) -> GraphTopology:
    config.validate()
    R = config.routers_per_group
    ppr = config.ports_per_router
    nodes = []
    for router in range(config.num_routers):
        group = router // R
        for port in range(ppr):
            kind = config.port_kind(port)
            compute = router * config.terminals_per_router + port if kind == TERMINAL else None
            nodes.append(PortNode(config.node_id(router, port), router, group, kind, compute))

    intra = []
    for router in range(config.num_routers):
        base = router * ppr
        intra.extend((base + i, base + j) for i, j in combinations(range(ppr), 2))
    local = list(iter_local_links(config))
    glob = list(iter_global_links(config))
    edges = tuple(sorted(set(intra) | set(local) | set(glob)))
    if len(edges) != len(intra) + len(local) + len(glob):
        raise ConfigInfeasible("link assignment produced a duplicate edge")
    return GraphTopology(config, tuple(nodes), edges, tuple(local), tuple(glob))


def normalized_adjacency(topology: GraphTopology) -> np.ndarray:
    """Dense D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a_tilde = topology.adjacency().toarray() + np.eye(topology.num_nodes)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def hop_distances(topology: GraphTopology, sources: list[int]) -> np.ndarray:
    """Unweighted shortest-path hop counts, one row per source (inf if unreachable)."""
    from scipy.sparse.csgraph import shortest_path

    if not sources:
        return np.empty((0, topology.num_nodes))
    return shortest_path(topology.adjacency(), unweighted=True, indices=sources)
