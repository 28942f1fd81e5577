"""Key establishment, onion layers, forwarding and replies on a simulated network.

Sealing is bookkeeping plus a reversible XOR keystream derived from the key
nonce. It keeps cell bytes changing from hop to hop so digests can be
compared, and it is NOT cryptographically secure.

Every cell has the same serialized size ``CELL_SIZE`` whatever its layer count,
so dummy, control and data cells look alike on the wire.
"""

from __future__ import annotations

import enum
import hashlib
import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, Iterable, Mapping, NamedTuple

from .errors import TunnelUnbuildable, UnknownKey
from .overlay import Kind, NodeId, Topology
from .routing import ReturnRoute, Tunnel, compute_return_route

CELL_SIZE = 512
_LEN_BYTES = 2
MAX_PAYLOAD = CELL_SIZE - _LEN_BYTES

KEYX = b"KEYX"
ACK = b"ACK"


class KeyKind(str, enum.Enum):
    LINK = "link"
    TUNNEL = "tunnel"


class KeyId(NamedTuple):
    """A symmetric key.

    For link keys ``owner``/``peer`` are the link endpoints, for tunnel keys
    the initiator and the relay.
    """

    kind: KeyKind
    owner: NodeId
    peer: NodeId
    nonce: int

    @property
    def endpoints(self) -> tuple[NodeId, NodeId]:
        return self.owner, self.peer


@lru_cache(maxsize=8192)
def _keystream(nonce: int) -> int:
    key = nonce.to_bytes(8, "big")
    blocks = bytearray()
    counter = 0
    while len(blocks) < CELL_SIZE:
        blocks += hashlib.blake2b(counter.to_bytes(8, "big"), key=key, digest_size=64).digest()
        counter += 1
    return int.from_bytes(bytes(blocks[:CELL_SIZE]), "big")


def _xor(data: bytes, nonce: int) -> bytes:
    return (int.from_bytes(data, "big") ^ _keystream(nonce)).to_bytes(CELL_SIZE, "big")


def frame(data: bytes) -> bytes:
    if len(data) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(data)} bytes exceeds {MAX_PAYLOAD}")
    return len(data).to_bytes(_LEN_BYTES, "big") + data + bytes(MAX_PAYLOAD - len(data))


def unframe(body: bytes) -> bytes:
    size = int.from_bytes(body[:_LEN_BYTES], "big")
    if size > MAX_PAYLOAD:
        raise ValueError("corrupt frame")
    return body[_LEN_BYTES:_LEN_BYTES + size]


@dataclass(frozen=True)
class Cell:
    payload: bytes
    seal_stack: tuple[KeyId, ...] = ()

    def __post_init__(self):
        if len(self.payload) != CELL_SIZE:
            raise ValueError(f"cell payload must be {CELL_SIZE} bytes")

    @classmethod
    def plain(cls, data: bytes) -> "Cell":
        return cls(frame(data))

    def serialize(self) -> bytes:
        return self.payload

    def digest(self) -> str:
        return hashlib.blake2b(self.payload, digest_size=8).hexdigest()

    def open(self) -> bytes:
        if self.seal_stack:
            raise UnknownKey(f"cell still carries {len(self.seal_stack)} layers")
        return unframe(self.payload)


def seal(cell: Cell, key: KeyId) -> Cell:
    return Cell(_xor(cell.payload, key.nonce), (key,) + cell.seal_stack)


def unseal(cell: Cell, key: KeyId) -> Cell:
    if not cell.seal_stack or cell.seal_stack[0] != key:
        raise UnknownKey(f"outer layer is not {key}")
    return Cell(_xor(cell.payload, key.nonce), cell.seal_stack[1:])


def dummy_cell(rng: random.Random) -> Cell:
    """Cover traffic: random bytes, shaped like any other cell."""
    return Cell(rng.randbytes(CELL_SIZE))


def onion_wrap(keys: Iterable[KeyId], payload: bytes) -> Cell:
    """Seal with the last relay's key first so the first relay's key ends up outermost."""
    keys = list(keys)
    if not keys:
        raise ValueError("need at least one key")
    cell = Cell.plain(payload)
    for key in reversed(keys):
        cell = seal(cell, key)
    return cell


class Event(NamedTuple):
    direction: str
    peer: NodeId | None
    digest: str


@dataclass
class RelayState:
    node: NodeId
    known_keys: set[KeyId] = field(default_factory=set)
    observed_events: list[Event] = field(default_factory=list)

    def learn(self, key: KeyId) -> None:
        if self.node not in key.endpoints:
            raise ValueError(f"node {self.node} is not an endpoint of {key}")
        self.known_keys.add(key)

    def log(self, direction: str, peer: NodeId | None, cell: Cell) -> None:
        self.observed_events.append(Event(direction, peer, cell.digest()))


def relay_process(state: RelayState, cell: Cell, peer: NodeId | None = None) -> Cell:
    """Remove the outer layer with a key this relay holds."""
    if not cell.seal_stack or cell.seal_stack[0] not in state.known_keys:
        raise UnknownKey(f"node {state.node} holds no key for the outer layer")
    out = unseal(cell, cell.seal_stack[0])
    state.log("peel", peer, out)
    return out


def relay_seal(state: RelayState, cell: Cell, key: KeyId) -> Cell:
    if key not in state.known_keys:
        raise UnknownKey(f"node {state.node} does not hold {key}")
    out = seal(cell, key)
    state.log("seal", None, out)
    return out


class _Nonces:
    def __init__(self, rng: random.Random):
        self._rng = rng
        self._used: set[int] = set()

    def __call__(self) -> int:
        while True:
            nonce = self._rng.getrandbits(64)
            if nonce not in self._used:
                self._used.add(nonce)
                return nonce


def establish_link_keys(topo: Topology, seed: int = 0, *, _nonces=None) -> dict[tuple[NodeId, NodeId], KeyId]:
    """One hop-by-hop key per stored link; a Tarzan mimic pair shares one key
    for both directions."""
    nonces = _nonces or _Nonces(random.Random(f"links:{seed}"))
    table: dict[tuple[NodeId, NodeId], KeyId] = {}
    for u in range(topo.n):
        for v in topo.out_links[u]:
            if (u, v) in table:
                continue
            key = KeyId(KeyKind.LINK, u, v, nonces())
            table[u, v] = key
            if topo.kind is Kind.TARZAN:
                table[v, u] = key
    return table


@dataclass(frozen=True)
class PnatEndpoint:
    node: NodeId
    destination: str = "destination"


@dataclass(frozen=True)
class KeyedTunnel:
    tunnel: Tunnel
    keys: tuple[KeyId, ...]
    # links crossed by each key-exchange reply, relay 1 first
    reply_links: tuple[int, ...]
    reply_routes: tuple[ReturnRoute, ...] = field(repr=False, default=())

    @property
    def pnat(self) -> PnatEndpoint:
        return PnatEndpoint(self.tunnel.relays[-1])


@dataclass(frozen=True)
class SessionResult:
    request_at_pnat: bytes
    response_at_initiator: bytes
    forward_depths: tuple[int, ...]
    response_layers: int
    forward_hops: int
    return_hops: int
    route: ReturnRoute


class OverlayNetwork:
    """Single-owner stepped network: each call moves cells hop by hop and
    advances ``clock`` once per link crossed."""

    def __init__(self, topo: Topology, seed: int = 0):
        self.topo = topo
        self._nonces = _Nonces(random.Random(f"session:{seed}"))
        self.link_keys = establish_link_keys(topo, seed, _nonces=self._nonces)
        self.states = {u: RelayState(u) for u in range(topo.n)}
        for (u, v), key in self.link_keys.items():
            self.states[u].learn(key)
            self.states[v].learn(key)
        self.clock = 0
        self.pnat_log: list[tuple[PnatEndpoint, bytes]] = []

    def transmit(self, u: NodeId, v: NodeId, cell: Cell) -> Cell:
        try:
            key = self.link_keys[u, v]
        except KeyError:
            raise UnknownKey(f"no link key for {u}->{v}") from None
        wire = seal(cell, key)
        self.states[u].log("out", v, wire)
        self.states[v].log("in", u, wire)
        self.clock += 1
        return unseal(wire, key)

    def _forward(self, nodes: tuple[NodeId, ...], cell: Cell) -> tuple[Cell, list[int]]:
        depths = []
        for prev, node in zip(nodes, nodes[1:]):
            cell = self.transmit(prev, node, cell)
            if cell.seal_stack:
                cell = relay_process(self.states[node], cell, prev)
            depths.append(len(cell.seal_stack))
        return cell, depths

    def _reply(self, route: ReturnRoute, keys: tuple[KeyId, ...], cell: Cell) -> tuple[Cell, int]:
        """Carry ``cell`` along ``route``. Tunnel relays add their layer,
        cycle carriers only seal and unseal the link.

        Returns the opened cell and the layer count found at the initiator.
        """
        for t, node in enumerate(route.hops[:-1]):
            pos = route.positions[t]
            if pos is not None and pos > 0:
                cell = relay_seal(self.states[node], cell, keys[pos - 1])
            cell = self.transmit(node, route.hops[t + 1], cell)
        initiator = self.states[route.hops[-1]]
        depth = len(cell.seal_stack)
        while cell.seal_stack:
            cell = relay_process(initiator, cell)
        return cell, depth

    def _install_tunnel_key(self, initiator: NodeId, relay: NodeId) -> KeyId:
        # stands in for the public-key exchange; the relay's view only grows by the key
        key = KeyId(KeyKind.TUNNEL, initiator, relay, self._nonces())
        self.states[initiator].learn(key)
        self.states[relay].learn(key)
        return key

    def build_keyed_tunnel(self, tunnel: Tunnel) -> KeyedTunnel:
        """Agree a key with each relay in turn, through the relays already keyed.

        Each reply returns that relay's mimic list along the return route of
        the tunnel prefix, so the initiator learns where it may extend next.
        """
        nodes = tunnel.nodes
        keys: list[KeyId] = []
        links, routes = [], []
        for i in range(1, len(nodes)):
            relay = nodes[i]
            request = onion_wrap(keys, KEYX) if keys else Cell.plain(KEYX)
            arrived, _ = self._forward(nodes[:i + 1], request)
            if arrived.open() != KEYX:
                raise TunnelUnbuildable(f"relay {relay} received a malformed key exchange")
            keys.append(self._install_tunnel_key(nodes[0], relay))
            mimics = self.topo.out_links[relay]
            body = ACK + b"".join(m.to_bytes(4, "big") for m in mimics[:(MAX_PAYLOAD - len(ACK)) // 4])
            route = compute_return_route(self.topo, Tunnel(nodes[0], nodes[1:i + 1]))
            reply = self._reply(route, tuple(keys), Cell.plain(body))[0].open()
            offered = {int.from_bytes(reply[j:j + 4], "big") for j in range(len(ACK), len(reply), 4)}
            if i + 1 < len(nodes) and nodes[i + 1] not in offered:
                raise TunnelUnbuildable(f"{nodes[i + 1]} is not a mimic of relay {relay}")
            links.append(route.links)
            routes.append(route)
        return KeyedTunnel(tunnel, tuple(keys), tuple(links), tuple(routes))

    def send_and_reply(self, keyed: KeyedTunnel, request: bytes, response: bytes,
                       destination: str = "destination") -> SessionResult:
        nodes = keyed.tunnel.nodes
        start = self.clock
        cell, depths = self._forward(nodes, onion_wrap(keyed.keys, request))
        pnat = PnatEndpoint(nodes[-1], destination)
        delivered = cell.open()
        self.pnat_log.append((pnat, delivered))
        # last relay -> PNAT -> destination and back
        self.states[nodes[-1]].log("exit", None, cell)
        self.clock += 2
        forward = self.clock - start

        start = self.clock
        self.clock += 2
        back = Cell.plain(response)
        self.states[nodes[-1]].log("enter", None, back)
        route = compute_return_route(self.topo, keyed.tunnel)
        got, layers = self._reply(route, keyed.keys, back)
        return SessionResult(delivered, got.open(), tuple(depths), layers, forward,
                             self.clock - start, route)

    def export_events(self, stream: IO[str]) -> None:
        write_events(self.states, stream)


def build_keyed_tunnel(net: OverlayNetwork, tunnel: Tunnel) -> KeyedTunnel:
    return net.build_keyed_tunnel(tunnel)


def send_and_reply(net: OverlayNetwork, keyed: KeyedTunnel, request: bytes, response: bytes) -> SessionResult:
    return net.send_and_reply(keyed, request, response)


def run_session(topo: Topology, tunnel: Tunnel, request: bytes, response: bytes,
                seed: int = 0) -> tuple[OverlayNetwork, KeyedTunnel, SessionResult]:
    """Fresh network, keyed tunnel and one request/response round trip."""
    net = OverlayNetwork(topo, seed)
    keyed = net.build_keyed_tunnel(tunnel)
    return net, keyed, net.send_and_reply(keyed, request, response)


def relay_view_report(states: Mapping[NodeId, RelayState]) -> dict[NodeId, frozenset[NodeId]]:
    """Peers each node exchanged cells with."""
    return {node: frozenset(e.peer for e in st.observed_events if e.peer is not None)
            for node, st in states.items()}


def write_events(states: Mapping[NodeId, RelayState], stream: IO[str]) -> None:
    for node in sorted(states):
        for e in states[node].observed_events:
            peer = "-" if e.peer is None else e.peer
            stream.write(f"EVT {node} {e.direction} {peer} {e.digest}\n")


def read_events(stream: IO[str]) -> list[tuple[NodeId, Event]]:
    out = []
    for line in stream:
        tag, node, direction, peer, digest = line.split()
        if tag != "EVT":
            raise ValueError(f"not an event line: {line!r}")
        out.append((int(node), Event(direction, None if peer == "-" else int(peer), digest)))
    return out
