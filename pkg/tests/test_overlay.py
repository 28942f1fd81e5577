import io
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from ctarzan.errors import DegenerateNetwork, NoSharedCycle
from ctarzan.overlay import (
    CycleRecord,
    Directory,
    Kind,
    Topology,
    build_topology,
    degree_stats,
    dump_topology,
    fnv1a64,
    iterated_lookup,
    load_topology,
    lookup,
    node_address,
    ring_hash,
    select_ctarzan_cycles,
    select_tarzan_mimics,
    selection_quota,
    verify_selection,
)


# Independent ring: scan every node position, no bisect, no shared code.
def _fnv(s: str) -> int:
    h = 14695981039346656037
    for b in s.encode():
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def _mix(h: int) -> int:
    m = 2**64
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) % m
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) % m
    h ^= h >> 33
    return h


def _pos(key: str) -> int:
    return _mix(_fnv(key))


def _addr(i: int, seed: int) -> str:
    ip = (i * 2654435761 + _pos(f"seed:{seed}") % 2**32) % 2**32
    return ".".join(str((ip >> s) & 255) for s in (24, 16, 8, 0))


def scan_lookup(n: int, seed: int, key: str) -> int:
    ring = sorted((_pos(_addr(i, seed)), i) for i in range(n))
    target = _pos(key)
    for p, i in ring:
        if p >= target:
            return i
    return ring[0][1]


def chain(n, seed, key, i):
    node = scan_lookup(n, seed, key)
    for t in range(2, i + 1):
        node = scan_lookup(n, seed, f"{_addr(node, seed)}#{t}")
    return node


def test_fnv1a_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_addresses_unique_and_seeded():
    addrs = [node_address(i) for i in range(5000)]
    assert len(set(addrs)) == 5000
    assert node_address(3, seed=0) != node_address(3, seed=1)
    assert node_address(3, seed=5) == node_address(3, seed=5)


def test_lookup_single_node():
    d = Directory(1)
    assert lookup(d, "anything") == 0
    assert iterated_lookup(d, "anything", 2) == 0


def test_lookup_deterministic():
    d = Directory(50, seed=4)
    assert lookup(d, "k") == lookup(d, "k") == lookup(Directory(50, seed=4), "k")


def test_lookup_n4_probe_matches_scan():
    # frozen from the scan oracle above
    assert scan_lookup(4, 0, "probe") == 1
    assert lookup(Directory(4), "probe") == 1


@given(st.integers(1, 60), st.integers(0, 5), st.text(max_size=12))
@settings(max_examples=150, deadline=None)
def test_lookup_matches_scan(n, seed, key):
    assert lookup(Directory(n, seed), key) == scan_lookup(n, seed, key)


def test_ring_positions_unique():
    d = Directory(2000, seed=3)
    assert sorted(d.ring.values()) == list(range(2000))


def test_iterated_lookup_i1_is_lookup():
    d = Directory(30)
    assert iterated_lookup(d, "seed-key", 1) == lookup(d, "seed-key")


def test_iterated_lookup_manual_chaining():
    d = Directory(8)
    manual = lookup(d, "x")
    manual = lookup(d, f"{d.address(manual)}#2")
    manual = lookup(d, f"{d.address(manual)}#3")
    assert iterated_lookup(d, "x", 3) == manual == chain(8, 0, "x", 3) == 7


def test_iterated_lookup_rejects_zero():
    with pytest.raises(ValueError):
        iterated_lookup(Directory(5), "x", 0)


def _oracle_redraw(n, seed, key, draw, rejected):
    cand = draw(key)
    retry = 0
    while rejected(cand):
        retry += 1
        assert retry <= 32
        cand = draw(f"{key}/{retry}")
    return cand


def _oracle_mimics(n, seed, a, k):
    chosen = []
    prev = scan_lookup(n, seed, _addr(a, seed))
    for i in range(2, k + 2):
        prev = _oracle_redraw(n, seed, f"{_addr(prev, seed)}#{i}",
                              lambda key: scan_lookup(n, seed, key),
                              lambda x: x == a or x in chosen)
        chosen.append(prev)
    return chosen


def _oracle_cycles(n, seed, a, kprime):
    out = []
    for i, b in enumerate(_oracle_mimics(n, seed, a, kprime), start=2):
        base = f"{_addr(a, seed)}||{_addr(b, seed)}"
        c = _oracle_redraw(n, seed, base, lambda key: chain(n, seed, key, i), lambda x: x in (a, b))
        out.append((a, b, c))
    return out


def test_tarzan_k1_is_second_lookup():
    d = Directory(40)
    for a in range(40):
        expect = iterated_lookup(d, d.address(a), 2)
        if expect != a:
            assert select_tarzan_mimics(d, a, 1) == [expect]


def test_tarzan_mimics_hand_rederived():
    d = Directory(100)
    assert select_tarzan_mimics(d, 7, 3) == [51, 99, 39]
    for a in range(0, 100, 7):
        assert select_tarzan_mimics(d, a, 3) == _oracle_mimics(100, 0, a, 3)
    assert select_tarzan_mimics(d, 7, 3) == select_tarzan_mimics(d, 7, 3)


def test_ctarzan_cycles_hand_rederived():
    d = Directory(100)
    assert select_ctarzan_cycles(d, 7, 2) == [CycleRecord(7, 51, 40), CycleRecord(7, 99, 0)]
    for a in range(0, 100, 9):
        got = select_ctarzan_cycles(d, a, 2)
        assert [tuple(r) for r in got] == _oracle_cycles(100, 0, a, 2)
        assert len(got) == 2 and all(r.a == a for r in got)
        assert all(len(set(r)) == 3 for r in got)


def test_degenerate_sizes_raise():
    with pytest.raises(DegenerateNetwork):
        select_tarzan_mimics(Directory(3), 0, 2)
    with pytest.raises(DegenerateNetwork):
        select_ctarzan_cycles(Directory(3), 0, 1)
    with pytest.raises(ValueError):
        build_topology(Kind.CTARZAN, 9, 1)


def test_single_cycle_next_and_stats():
    topo = Topology.from_cycles([(1, 2, 3)], n=4)
    assert topo.next(3, 2) == 1
    assert topo.next(2, 1) == 3
    with pytest.raises(NoSharedCycle):
        topo.next(1, 2)
    tri = Topology.from_cycles([(0, 1, 2)])
    s = degree_stats(tri)
    assert s.mean_out == s.mean_in == 1 and s.total_directed_links == 3


def test_next_tie_break_lowest_closer():
    cycles = [(0, 1, 5), (0, 1, 3), (0, 1, 4)]
    topo = Topology.from_cycles(cycles)
    closers = sorted(c for a, b, c in cycles if (a, b) == (0, 1))
    assert topo.next(1, 0) == closers[0] == 3


def test_tarzan_mutual_pair():
    topo = Topology.from_links(Kind.TARZAN, 2, [(0, 1)])
    assert degree_stats(topo).total_directed_links == 2
    assert topo.has_link(1, 0)


@pytest.fixture(scope="module")
def small():
    return {
        "ct": build_topology(Kind.CTARZAN, 500, 2, seed=11),
        "tz": build_topology(Kind.TARZAN, 500, 3, seed=11),
    }


def test_cycle_closure_and_no_self_links(small):
    topo = small["ct"]
    for rec in topo.cycles:
        for u, v in rec.edges():
            assert v in topo.out_links[u] and u in topo.in_links[v]
    covered = {e for rec in topo.cycles for e in rec.edges()}
    stored = {(u, v) for u in range(topo.n) for v in topo.out_links[u]}
    assert covered == stored
    assert all(u not in topo.out_links[u] for u in range(topo.n))


def test_next_returns_linked_node(small):
    topo = small["ct"]
    for u in range(0, topo.n, 13):
        for v in topo.out_links[u]:
            a = topo.next(v, u)
            assert topo.has_link(v, a) and topo.has_link(a, u)


def test_tarzan_symmetry(small):
    topo = small["tz"]
    for u in range(topo.n):
        assert topo.out_links[u] == topo.in_links[u]
        for v in topo.out_links[u]:
            assert u in topo.out_links[v]
    assert not topo.cycles


def test_degree_stats_consistent(small):
    for topo in small.values():
        s = degree_stats(topo)
        assert s.mean_out * topo.n == s.total_directed_links == s.mean_in * topo.n


def test_build_deterministic():
    a = build_topology(Kind.CTARZAN, 300, 2, seed=9)
    b = build_topology(Kind.CTARZAN, 300, 2, seed=9)
    c = build_topology(Kind.CTARZAN, 300, 2, seed=10)
    assert a.out_links == b.out_links and a.cycles == b.cycles
    assert a.out_links != c.out_links


def test_verify_selection_round_trip(small):
    ct, tz = small["ct"], small["tz"]
    for rec in ct.cycles[:60:3]:
        i = 2 + [r.b for r in ct.cycles if r.a == rec.a].index(rec.b)
        assert verify_selection(ct, rec.a, rec.b, i)
        assert verify_selection(ct, rec.a, rec.b, i, rec.c)
        other = (rec.b + 1) % ct.n
        if other != rec.b:
            assert not verify_selection(ct, rec.a, other, i)
        assert not verify_selection(ct, rec.a, rec.b, i, (rec.c + 1) % ct.n)
    d = tz.directory
    for a in range(0, 50, 5):
        for i, b in enumerate(select_tarzan_mimics(d, a, 3), start=2):
            assert verify_selection(tz, a, b, i)
        # beyond the quota of 3
        assert not verify_selection(tz, a, select_tarzan_mimics(d, a, 4)[-1], 5)


def test_fractional_quota_mean():
    d = Directory(4000, seed=2)
    quotas = Counter(selection_quota(d, a, Fraction(4, 3)) for a in range(4000))
    assert set(quotas) == {1, 2}
    assert abs(quotas[2] / 4000 - 1 / 3) < 0.03
    assert {selection_quota(d, a, 2) for a in range(100)} == {2}


def test_fractional_degree():
    topo = build_topology(Kind.CTARZAN, 3000, Fraction(4, 3), seed=1)
    assert abs(topo.total_links / topo.n - 4) / 4 < 0.03


def test_dump_load_round_trip(small):
    for topo in small.values():
        buf = io.StringIO()
        dump_topology(topo, buf)
        back = load_topology(io.StringIO(buf.getvalue()))
        assert back.kind == topo.kind and back.n == topo.n and back.param == topo.param
        assert back.out_links == topo.out_links and back.cycles == topo.cycles
    assert buf.getvalue().splitlines()[0] == "TARZAN 500 3 11"


def test_load_rejects_inconsistent_links():
    text = "CTARZAN 3 1 0\nCYCLE 0 1 2\nLINK 0 1\nLINK 1 0\n"
    with pytest.raises(ValueError):
        load_topology(io.StringIO(text))
    with pytest.raises(ValueError):
        load_topology(io.StringIO("CTARZAN 3 1\n"))


@given(st.lists(st.tuples(st.integers(0, 11), st.integers(0, 11), st.integers(0, 11))
                .filter(lambda t: len(set(t)) == 3), min_size=1, max_size=15))
def test_from_cycles_invariants(cycles):
    topo = Topology.from_cycles(cycles, n=12)
    for u in range(12):
        for v in topo.out_links[u]:
            assert u in topo.in_links[v]
            c = topo.next(v, u)
            assert topo.has_link(v, c)


def test_ring_hash_spreads_suffixes():
    # neighbouring keys must not cluster on the ring
    positions = sorted(ring_hash(f"10.0.0.1#{i}") for i in range(2, 200))
    gaps = [b - a for a, b in zip(positions, positions[1:])]
    assert max(gaps) > 2**56
