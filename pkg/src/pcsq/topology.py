"""Network structure: nodes with clocks, directed links, egress ports.

Every directed link has exactly one egress port at its source node, so port
ids and directed-link ids coincide.  Hosts are ordinary nodes that happen not
to forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .timebase import NodeClock, SimTime


@dataclass
class Node:
    node_id: int
    name: str = ""
    clock: NodeClock = field(default_factory=NodeClock)
    proc_delay: SimTime = 0


@dataclass
class Link:
    link_id: int
    src: int
    dst: int
    rate_bps: int
    prop_delay: SimTime

    def __post_init__(self) -> None:
        if self.rate_bps <= 0:
            raise ValueError(f"link {self.link_id}: rate must be positive")
        if self.prop_delay < 0:
            raise ValueError(f"link {self.link_id}: negative propagation delay")


class Topology:
    def __init__(self, nodes: list[Node], links: list[Link]):
        self.nodes = {n.node_id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise ValueError("duplicate node ids")
        self.links = {l.link_id: l for l in links}
        if len(self.links) != len(links):
            raise ValueError("duplicate link ids")
        self.out_links: dict[int, list[Link]] = {n.node_id: [] for n in nodes}
        for l in links:
            if l.src not in self.nodes or l.dst not in self.nodes:
                raise ValueError(f"link {l.link_id} references unknown node")
            self.out_links[l.src].append(l)

    def link_between(self, src: int, dst: int) -> Link:
        for l in self.out_links[src]:
            if l.dst == dst:
                return l
        raise KeyError(f"no link {src}->{dst}")

    def path_links(self, node_path: list[int]) -> list[Link]:
        """Directed links along a node path (one per hop)."""
        return [
            self.link_between(a, b) for a, b in zip(node_path, node_path[1:])
        ]
