"""Forward tunnels and cycle-routed return paths."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass

from .errors import TunnelUnbuildable
from .overlay import Kind, NodeId, Topology

TUNNEL_ATTEMPTS = 100


@dataclass(frozen=True)
class Tunnel:
    initiator: NodeId
    relays: tuple[NodeId, ...]

    @property
    def nodes(self) -> tuple[NodeId, ...]:
        return (self.initiator,) + self.relays

    def __len__(self) -> int:
        return len(self.relays)


@dataclass(frozen=True)
class ReturnRoute:
    """Nodes a response visits, from the last relay back to the initiator.

    ``positions[t]`` is the tunnel index of ``hops[t]``, or None when that hop
    is a cycle node carrying the response between two tunnel nodes.
    """

    hops: tuple[NodeId, ...]
    positions: tuple[int | None, ...] = ()

    def __post_init__(self):
        if self.positions and len(self.positions) != len(self.hops):
            raise ValueError("positions must align with hops")

    @property
    def links(self) -> int:
        return len(self.hops) - 1


class PairCase(enum.Enum):
    SAME_CYCLE = "same-cycle"
    DIFFERENT_CYCLE = "different-cycle"


def build_tunnel(topo: Topology, initiator: NodeId, length: int, rng: random.Random) -> Tunnel:
    """Sample a tunnel hop by hop among the current node's outgoing mimics.

    A dead end discards the whole tunnel and starts over with fresh draws;
    backtracking would bias the per-hop choice away from uniform.
    """
    if length < 1:
        raise ValueError("tunnel length must be >= 1")
    if not topo.out_links[initiator]:
        raise TunnelUnbuildable(f"node {initiator} has no outgoing mimic")
    for _ in range(TUNNEL_ATTEMPTS):
        nodes = [initiator]
        for _ in range(length):
            options = [v for v in topo.out_links[nodes[-1]] if v not in nodes]
            if not options:
                break
            nodes.append(rng.choice(options))
        else:
            return Tunnel(initiator, tuple(nodes[1:]))
    raise TunnelUnbuildable(
        f"no tunnel of length {length} from {initiator} after {TUNNEL_ATTEMPTS} attempts"
    )


def random_tunnel(topo: Topology, length: int, rng: random.Random, max_initiators: int = 100) -> Tunnel:
    """Tunnel from a uniformly drawn initiator; stuck initiators are redrawn."""
    for _ in range(max_initiators):
        initiator = rng.randrange(topo.n)
        try:
            return build_tunnel(topo, initiator, length, rng)
        except TunnelUnbuildable:
            continue
    raise TunnelUnbuildable(f"no initiator admits a tunnel of length {length}")


def classify_pair(topo: Topology, r_prev2: NodeId, r_prev1: NodeId, r: NodeId) -> PairCase:
    """SAME_CYCLE iff ``r`` closes a registered cycle over edge r_prev2 -> r_prev1."""
    if r in topo.closers(r_prev2, r_prev1):
        return PairCase.SAME_CYCLE
    return PairCase.DIFFERENT_CYCLE


def compute_return_route(topo: Topology, tunnel: Tunnel) -> ReturnRoute:
    """Route a response from the tail of the tunnel back to its initiator.

    From tunnel position ``j`` the response jumps straight to ``j - 2`` when
    node ``j`` closes the cycle of edge ``(j-2) -> (j-1)``; otherwise it reaches
    ``j - 1`` through ``next``. Tarzan simply reverses the tunnel.
    """
    nodes = tunnel.nodes
    j = len(nodes) - 1
    if topo.kind is Kind.TARZAN:
        return ReturnRoute(tuple(reversed(nodes)), tuple(range(j, -1, -1)))
    hops, positions = [nodes[j]], [j]
    while j > 0:
        if j >= 2 and classify_pair(topo, nodes[j - 2], nodes[j - 1], nodes[j]) is PairCase.SAME_CYCLE:
            j -= 2
            hops.append(nodes[j])
            positions.append(j)
        else:
            hops.append(topo.next(nodes[j], nodes[j - 1]))
            positions.append(None)
            j -= 1
            hops.append(nodes[j])
            positions.append(j)
    return ReturnRoute(tuple(hops), tuple(positions))


def forward_hop_count(tunnel: Tunnel) -> int:
    # + last relay -> PNAT -> destination
    return len(tunnel.relays) + 2


def return_hop_count(route: ReturnRoute) -> int:
    return route.links + 2
