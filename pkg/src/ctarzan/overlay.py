"""Node directory, mimic selection and topology assembly.

The directory emulates the Tarzan DHT with a single hash ring: every node sits
at ``ring_hash(address)`` and ``lookup`` returns the clockwise successor of the
hashed key. Mimic selection is therefore publicly recomputable, which is what
``verify_selection`` relies on.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateNetwork, NoSharedCycle

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MAX_RETRIES = 32

NodeId = int


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def fmix64(h: int) -> int:
    """64-bit avalanche finalizer (MurmurHash3)."""
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & MASK64
    h ^= h >> 33
    return h


def ring_hash(key: str) -> int:
    """Ring position of ``key``.

    Raw FNV-1a leaves keys that differ only in their last characters within
    ~2**40 of each other on the ring, so the result is passed through an
    avalanche finalizer before use.
    """
    return fmix64(fnv1a64(key.encode()))


def node_address(index: int, seed: int = 0) -> str:
    """Synthetic IPv4 address of node ``index`` for a directory seed.

    The odd multiplier makes the map a bijection on 32-bit integers, so
    addresses are unique for any ``n <= 2**32``.
    """
    salt = ring_hash(f"seed:{seed}") & 0xFFFFFFFF
    ip = (index * 0x9E3779B1 + salt) & 0xFFFFFFFF
    return f"{ip >> 24}.{(ip >> 16) & 255}.{(ip >> 8) & 255}.{ip & 255}"


class Directory:
    """Hash ring over ``n`` nodes; immutable after construction."""

    def __init__(self, n: int, seed: int = 0):
        if n < 1:
            raise ValueError("a directory needs at least one node")
        self.n = n
        self.seed = seed
        self.addresses = tuple(node_address(i, seed) for i in range(n))
        placed = sorted((ring_hash(addr), i) for i, addr in enumerate(self.addresses))
        positions: list[int] = []
        owners: list[int] = []
        for pos, node in placed:
            # collisions: the lower id keeps the slot, later ones are bumped clockwise
            if positions and pos <= positions[-1]:
                pos = positions[-1] + 1
            positions.append(pos & MASK64)
            owners.append(node)
        self._positions = positions
        self._owners = owners

    def address(self, node: NodeId) -> str:
        return self.addresses[node]

    @property
    def ring(self) -> dict[int, NodeId]:
        return dict(zip(self._positions, self._owners))

    def lookup(self, key: str) -> NodeId:
        idx = bisect.bisect_left(self._positions, ring_hash(key))
        if idx == self.n:
            idx = 0
        return self._owners[idx]

    def __repr__(self) -> str:
        return f"Directory(n={self.n}, seed={self.seed})"


def lookup(directory: Directory, key: str) -> NodeId:
    return directory.lookup(key)


def iterated_lookup(directory: Directory, seed_key: str, i: int) -> NodeId:
    """``lookup`` applied ``i`` times.

    Step ``t >= 2`` looks up the previous result's address suffixed with
    ``#t``; without the suffix a node's own address maps back onto itself.
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    node = directory.lookup(seed_key)
    for t in range(2, i + 1):
        node = directory.lookup(f"{directory.address(node)}#{t}")
    return node


def _redraw(directory: Directory, key: str, draw, rejected) -> NodeId:
    cand = draw(key)
    for retry in range(1, MAX_RETRIES + 1):
        if not rejected(cand):
            return cand
        cand = draw(f"{key}/{retry}")
    if not rejected(cand):
        return cand
    raise DegenerateNetwork(
        f"no acceptable node for key {key!r} after {MAX_RETRIES} retries (n={directory.n})"
    )


def _mimic_chain(directory: Directory, a: NodeId, count: int) -> list[NodeId]:
    chosen: list[NodeId] = []
    prev = directory.lookup(directory.address(a))
    for i in range(2, count + 2):
        prev = _redraw(
            directory,
            f"{directory.address(prev)}#{i}",
            directory.lookup,
            lambda x: x == a or x in chosen,
        )
        chosen.append(prev)
    return chosen


def select_tarzan_mimics(directory: Directory, a: NodeId, k: int) -> list[NodeId]:
    """The ``k`` mimics node ``a`` selects, ordered by lookup index 2..k+1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if directory.n < k + 2:
        raise DegenerateNetwork(f"n={directory.n} too small for k={k}")
    return _mimic_chain(directory, a, k)


class CycleRecord(NamedTuple):
    """Directed 3-cycle a -> b -> c -> a started by selector ``a``."""

    a: NodeId
    b: NodeId
    c: NodeId

    def edges(self) -> tuple[tuple[NodeId, NodeId], ...]:
        return ((self.a, self.b), (self.b, self.c), (self.c, self.a))


def _closing_node(directory: Directory, a: NodeId, b: NodeId, i: int) -> NodeId:
    base = f"{directory.address(a)}||{directory.address(b)}"
    return _redraw(
        directory,
        base,
        lambda key: iterated_lookup(directory, key, i),
        lambda x: x == a or x == b,
    )


def select_ctarzan_cycles(directory: Directory, a: NodeId, kprime: int) -> list[CycleRecord]:
    if kprime < 1:
        raise ValueError("kprime must be >= 1")
    if directory.n < max(4, kprime + 2):
        raise DegenerateNetwork(f"n={directory.n} too small for kprime={kprime}")
    bs = _mimic_chain(directory, a, kprime)
    return [CycleRecord(a, b, _closing_node(directory, a, b, i)) for i, b in enumerate(bs, start=2)]


class Kind(str, enum.Enum):
    TARZAN = "tarzan"
    CTARZAN = "ctarzan"


def selection_param(param) -> Fraction:
    """Normalise a selection parameter (int, Fraction, float or 'p/q' string)."""
    if isinstance(param, str):
        value = Fraction(param)
    elif isinstance(param, float):
        value = Fraction(param).limit_denominator(1000)
    else:
        value = Fraction(param)
    if value < 1:
        raise ValueError(f"selection parameter must be >= 1, got {param}")
    return value


def selection_quota(directory: Directory, a: NodeId, param) -> int:
    """Number of direct selections node ``a`` makes.

    Integer parameters give every node the same quota. A fractional parameter
    ``p`` gives ``ceil(p)`` to a publicly recomputable fraction ``p - floor(p)``
    of the nodes and ``floor(p)`` to the rest, so the mean quota is ``p``.
    """
    value = selection_param(param)
    base = math.floor(value)
    frac = value - base
    if frac == 0:
        return base
    u = ring_hash(f"{directory.address(a)}#quota")
    return base + (1 if u * frac.denominator < frac.numerator << 64 else 0)


def _param_repr(param: Fraction) -> str:
    return str(param.numerator) if param.denominator == 1 else f"{param.numerator}/{param.denominator}"


@dataclass(frozen=True, eq=False)
class Topology:
    """Immutable overlay graph with its cycle registry.

    ``out_links[u]`` and ``in_links[u]`` are sorted tuples. For Tarzan both are
    the symmetric mimic sets; for C-Tarzan they are the directed neighbours.
    """

    kind: Kind
    n: int
    param: Fraction
    out_links: tuple[tuple[NodeId, ...], ...]
    in_links: tuple[tuple[NodeId, ...], ...]
    cycles: tuple[CycleRecord, ...] = ()
    seed: int = 0
    directory: Directory | None = field(default=None, repr=False)

    @classmethod
    def from_links(cls, kind: Kind, n: int, links: Iterable[tuple[NodeId, NodeId]], *,
                   param=1, seed: int = 0, cycles: Sequence[CycleRecord] = (),
                   directory: Directory | None = None) -> "Topology":
        """Assemble from directed links; Tarzan links are mirrored."""
        kind = Kind(kind)
        out_sets: list[set[NodeId]] = [set() for _ in range(n)]
        in_sets: list[set[NodeId]] = [set() for _ in range(n)]
        for u, v in links:
            if u == v:
                raise ValueError(f"self-link on node {u}")
            out_sets[u].add(v)
            in_sets[v].add(u)
            if kind is Kind.TARZAN:
                out_sets[v].add(u)
                in_sets[u].add(v)
        return cls(
            kind=kind,
            n=n,
            param=Fraction(param),
            out_links=tuple(tuple(sorted(s)) for s in out_sets),
            in_links=tuple(tuple(sorted(s)) for s in in_sets),
            cycles=tuple(CycleRecord(*c) for c in cycles),
            seed=seed,
            directory=directory,
        )

    @classmethod
    def from_cycles(cls, cycles: Iterable[Sequence[NodeId]], n: int | None = None, *,
                    param=1, seed: int = 0, directory: Directory | None = None) -> "Topology":
        records = [CycleRecord(*c) for c in cycles]
        for rec in records:
            if len({rec.a, rec.b, rec.c}) != 3:
                raise ValueError(f"cycle members must be distinct: {rec}")
        if n is None:
            n = 1 + max(max(rec) for rec in records)
        links = [e for rec in records for e in rec.edges()]
        return cls.from_links(Kind.CTARZAN, n, links, param=param, seed=seed,
                              cycles=records, directory=directory)

    @cached_property
    def _link_keys(self) -> frozenset[int]:
        n = self.n
        return frozenset(u * n + v for u in range(n) for v in self.out_links[u])

    def has_link(self, u: NodeId, v: NodeId) -> bool:
        return u * self.n + v in self._link_keys

    @cached_property
    def _closers(self) -> dict[int, tuple[NodeId, ...]]:
        n = self.n
        acc: dict[int, set[NodeId]] = {}
        for a, b, c in self.cycles:
            acc.setdefault(a * n + b, set()).add(c)
            acc.setdefault(b * n + c, set()).add(a)
            acc.setdefault(c * n + a, set()).add(b)
        return {key: tuple(sorted(s)) for key, s in acc.items()}

    def closers(self, u: NodeId, v: NodeId) -> tuple[NodeId, ...]:
        """Third nodes of every registered cycle containing edge u -> v, ascending."""
        return self._closers.get(u * self.n + v, ())

    def next(self, c: NodeId, b: NodeId) -> NodeId:
        """The node ``a`` closing a cycle b -> c -> a -> b (``C.next(B)``).

        Several cycles may share edge b -> c; the lowest closing node wins.
        """
        found = self.closers(b, c)
        if not found:
            raise NoSharedCycle(f"edge {b}->{c} belongs to no registered cycle")
        return found[0]

    @cached_property
    def reverse_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR arrays of the links a backward search follows (in-links)."""
        lens = np.fromiter((len(x) for x in self.in_links), dtype=np.int64, count=self.n)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(lens, out=indptr[1:])
        indices = np.fromiter((v for row in self.in_links for v in row), dtype=np.int64,
                              count=int(indptr[-1]))
        return indptr, indices

    @property
    def total_links(self) -> int:
        return sum(len(x) for x in self.out_links)

    def __repr__(self) -> str:
        return (f"Topology(kind={self.kind.value}, n={self.n}, param={_param_repr(self.param)}, "
                f"links={self.total_links}, cycles={len(self.cycles)}, seed={self.seed})")


def build_topology(kind, n: int, param, seed: int = 0) -> Topology:
    """Run every node's mimic selection and install the resulting links."""
    kind = Kind(kind)
    value = selection_param(param)
    if n < 10:
        raise ValueError("build_topology needs n >= 10")
    directory = Directory(n, seed)
    if kind is Kind.TARZAN:
        links = []
        for a in range(n):
            quota = selection_quota(directory, a, value)
            links.extend((a, b) for b in select_tarzan_mimics(directory, a, quota))
        return Topology.from_links(kind, n, links, param=value, seed=seed, directory=directory)
    cycles = []
    for a in range(n):
        cycles.extend(select_ctarzan_cycles(directory, a, selection_quota(directory, a, value)))
    return Topology.from_cycles(cycles, n, param=value, seed=seed, directory=directory)


def verify_selection(topo: Topology, a: NodeId, b: NodeId, i: int, c: NodeId | None = None) -> bool:
    """Recompute ``a``'s selection at lookup index ``i`` and compare.

    Also rejects indices beyond ``a``'s selection quota, so a node cannot
    claim more mimics than it is entitled to.
    """
    directory = topo.directory or Directory(topo.n, topo.seed)
    if i < 2 or not 0 <= a < topo.n:
        return False
    if i - 1 > selection_quota(directory, a, topo.param):
        return False
    try:
        if topo.kind is Kind.TARZAN:
            return c is None and select_tarzan_mimics(directory, a, i - 1)[-1] == b
        rec = select_ctarzan_cycles(directory, a, i - 1)[-1]
    except DegenerateNetwork:
        return False
    return rec.b == b and (c is None or rec.c == c)


@dataclass(frozen=True)
class DegreeStats:
    mean_out: float
    mean_in: float
    total_directed_links: int
    d: float


def degree_stats(topo: Topology) -> DegreeStats:
    total = topo.total_links
    mean_out = total / topo.n
    mean_in = sum(len(x) for x in topo.in_links) / topo.n
    return DegreeStats(mean_out=mean_out, mean_in=mean_in, total_directed_links=total, d=mean_out)


def dump_topology(topo: Topology, stream: IO[str]) -> None:
    """Write ``KIND n param seed`` then ``CYCLE a b c`` and ``LINK u v`` records.

    Tarzan links are written once per mimic pair (``u < v``).
    """
    stream.write(f"{topo.kind.value.upper()} {topo.n} {_param_repr(topo.param)} {topo.seed}\n")
    for rec in topo.cycles:
        stream.write(f"CYCLE {rec.a} {rec.b} {rec.c}\n")
    for u, row in enumerate(topo.out_links):
        for v in row:
            if topo.kind is Kind.CTARZAN or u < v:
                stream.write(f"LINK {u} {v}\n")


def load_topology(stream: IO[str]) -> Topology:
    header = stream.readline().split()
    if len(header) != 4:
        raise ValueError(f"bad topology header: {header}")
    kind = Kind(header[0].lower())
    n, param, seed = int(header[1]), Fraction(header[2]), int(header[3])
    cycles, links = [], []
    for lineno, line in enumerate(stream, start=2):
        parts = line.split()
        if not parts:
            continue
        tag, nums = parts[0], [int(x) for x in parts[1:]]
        if tag == "CYCLE" and len(nums) == 3:
            cycles.append(CycleRecord(*nums))
        elif tag == "LINK" and len(nums) == 2:
            links.append((nums[0], nums[1]))
        else:
            raise ValueError(f"line {lineno}: unrecognised record {line.strip()!r}")
    if kind is Kind.CTARZAN:
        topo = Topology.from_cycles(cycles, n, param=param, seed=seed)
        stray = {(u, v) for u, v in links if not topo.has_link(u, v)}
        if links and (stray or len(set(links)) != topo.total_links):
            raise ValueError("LINK records disagree with the CYCLE records")
        return topo
    return Topology.from_links(kind, n, links, param=param, seed=seed)
