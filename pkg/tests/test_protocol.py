import io
import random

import pytest
from hypothesis import given, strategies as st

from ctarzan.errors import TunnelUnbuildable, UnknownKey
from ctarzan.metrics import cover_traffic
from ctarzan.overlay import Kind, Topology, build_topology
from ctarzan.protocol import (
    CELL_SIZE,
    MAX_PAYLOAD,
    Cell,
    KeyId,
    KeyKind,
    OverlayNetwork,
    RelayState,
    build_keyed_tunnel,
    dummy_cell,
    establish_link_keys,
    frame,
    onion_wrap,
    read_events,
    relay_process,
    relay_view_report,
    run_session,
    seal,
    send_and_reply,
    unframe,
    unseal,
)
from ctarzan.routing import Tunnel, random_tunnel


def tunnel_key(owner, peer, nonce):
    return KeyId(KeyKind.TUNNEL, owner, peer, nonce)


def test_single_cycle_link_keys():
    topo = Topology.from_cycles([(1, 2, 3)], n=4)
    keys = establish_link_keys(topo)
    assert len(keys) == 3
    assert all(topo.has_link(*k.endpoints) and k.kind is KeyKind.LINK for k in keys.values())
    assert len({k.nonce for k in keys.values()}) == 3


def test_link_key_counts():
    ct = build_topology(Kind.CTARZAN, 300, 2, seed=1)
    keys = establish_link_keys(ct)
    assert len(set(keys.values())) == cover_traffic(ct)
    tz = build_topology(Kind.TARZAN, 300, 3, seed=1)
    tkeys = establish_link_keys(tz)
    assert len(set(tkeys.values())) * 2 == cover_traffic(tz)
    assert all(tkeys[u, v] == tkeys[v, u] for u, v in tkeys)


def test_frame_limits():
    with pytest.raises(ValueError):
        frame(bytes(MAX_PAYLOAD + 1))
    assert len(frame(b"")) == CELL_SIZE
    with pytest.raises(ValueError):
        Cell(b"short")


@given(st.binary(max_size=MAX_PAYLOAD), st.integers(0, 2**64 - 1))
def test_seal_round_trip(data, nonce):
    key = KeyId(KeyKind.LINK, 0, 1, nonce)
    cell = Cell.plain(data)
    sealed = seal(cell, key)
    assert len(sealed.serialize()) == CELL_SIZE
    assert unseal(sealed, key) == cell
    assert unframe(unseal(sealed, key).payload) == data


def test_onion_order_and_peel():
    keys = [tunnel_key(0, r, 100 + r) for r in (1, 2, 3)]
    one = onion_wrap(keys[:1], b"x")
    assert one.seal_stack == (keys[0],)
    cell = onion_wrap(keys, b"payload")
    assert cell.seal_stack == tuple(keys)
    for r, key in zip((1, 2, 3), keys):
        state = RelayState(r, {key})
        before = len(cell.seal_stack)
        cell = relay_process(state, cell)
        assert len(cell.seal_stack) == before - 1
        assert state.observed_events[-1].direction == "peel"
    assert cell.open() == b"payload"
    with pytest.raises(ValueError):
        onion_wrap([], b"x")


def test_wrong_relay_raises():
    keys = [tunnel_key(0, 1, 5), tunnel_key(0, 2, 6)]
    cell = onion_wrap(keys, b"x")
    with pytest.raises(UnknownKey):
        relay_process(RelayState(2, {keys[1]}), cell)
    with pytest.raises(UnknownKey):
        relay_process(RelayState(2), Cell.plain(b"x"))
    with pytest.raises(UnknownKey):
        cell.open()


def test_relay_state_rejects_foreign_key():
    with pytest.raises(ValueError):
        RelayState(5).learn(tunnel_key(0, 1, 2))


def test_tunnel_length_one_one_key():
    topo = build_topology(Kind.CTARZAN, 200, 2, seed=2)
    net = OverlayNetwork(topo)
    keyed = build_keyed_tunnel(net, random_tunnel(topo, 1, random.Random(0)))
    assert len(keyed.keys) == 1 and keyed.reply_links == (2,)


def test_control_reply_case_a_and_b():
    topo = Topology.from_cycles([(0, 1, 2), (1, 3, 4)])
    same = OverlayNetwork(topo).build_keyed_tunnel(Tunnel(0, (1, 2)))
    assert same.reply_links[-1] == 1
    across = OverlayNetwork(topo).build_keyed_tunnel(Tunnel(0, (1, 3)))
    assert across.reply_links[-1] == 4
    assert across.reply_routes[-1].hops == (3, 4, 1, 2, 0)


def test_control_reply_carriers_logged():
    topo = Topology.from_cycles([(0, 1, 2), (1, 3, 4)])
    net = OverlayNetwork(topo)
    net.build_keyed_tunnel(Tunnel(0, (1, 3)))
    # node 4 carries 3 -> 1 and node 2 carries 1 -> 0, holding no tunnel key
    for carrier, (src, dst) in ((4, (3, 1)), (2, (1, 0))):
        st_ = net.states[carrier]
        assert ("in", src) in {(e.direction, e.peer) for e in st_.observed_events}
        assert ("out", dst) in {(e.direction, e.peer) for e in st_.observed_events}
        assert not any(k.kind is KeyKind.TUNNEL for k in st_.known_keys)


def test_unlisted_next_relay_rejected():
    topo = Topology.from_cycles([(0, 1, 2), (3, 4, 5)])
    with pytest.raises(TunnelUnbuildable):
        OverlayNetwork(topo).build_keyed_tunnel(Tunnel(0, (1, 4)))


def test_tarzan_round_trip_h1():
    topo = build_topology(Kind.TARZAN, 100, 3, seed=4)
    t = random_tunnel(topo, 1, random.Random(1))
    _, keyed, res = run_session(topo, t, b"request", b"response")
    assert res.request_at_pnat == b"request" and res.response_at_initiator == b"response"
    assert res.forward_hops == res.return_hops == 3
    assert keyed.reply_links == (1,)


def test_ctarzan_in_cycle_single_layer():
    topo = Topology.from_cycles([(0, 1, 2)])
    net, _, res = run_session(topo, Tunnel(0, (1, 2)), b"q", b"a")
    assert res.response_layers == 1
    assert res.response_at_initiator == b"a"
    assert res.return_hops == 3
    assert res.forward_depths == (1, 0)


def test_layer_discipline_and_locality():
    topo = build_topology(Kind.CTARZAN, 1000, 2, seed=7)
    rng = random.Random(11)
    for _ in range(20):
        t = random_tunnel(topo, rng.randint(1, 5), rng)
        net, keyed, res = run_session(topo, t, b"GET /", b"200", seed=rng.randrange(2**32))
        assert res.forward_depths == tuple(range(len(t) - 1, -1, -1))
        crossed = sum(1 for p in res.route.positions if p)
        assert res.response_layers == crossed
        report = relay_view_report(net.states)
        neighbours = lambda u: set(topo.out_links[u]) | set(topo.in_links[u])
        for node, peers in report.items():
            assert peers <= neighbours(node)
        for node, peers in report.items():
            if t.initiator in peers:
                assert node in neighbours(t.initiator)
        for state in net.states.values():
            assert all(state.node in k.endpoints for k in state.known_keys)


def test_digests_differ_per_hop():
    topo = build_topology(Kind.CTARZAN, 500, 2, seed=8)
    t = random_tunnel(topo, 5, random.Random(2))
    net = OverlayNetwork(topo)
    keyed = net.build_keyed_tunnel(t)
    marks = {u: len(net.states[u].observed_events) for u in t.relays}
    send_and_reply(net, keyed, b"m", b"r")
    digests = []
    for prev, u in zip(t.nodes, t.relays):
        new = net.states[u].observed_events[marks[u]:]
        digests.append(next(e.digest for e in new if e.direction == "in" and e.peer == prev))
    assert len(set(digests)) == len(digests)


def test_uniform_cell_size():
    rng = random.Random(5)
    cells = [dummy_cell(rng), Cell.plain(b""), Cell.plain(bytes(MAX_PAYLOAD)),
             onion_wrap([tunnel_key(0, i, i) for i in range(1, 9)], b"deep")]
    assert {len(c.serialize()) for c in cells} == {CELL_SIZE}


def test_event_export_round_trip():
    topo = Topology.from_cycles([(0, 1, 2)])
    net, _, _ = run_session(topo, Tunnel(0, (1,)), b"q", b"a")
    buf = io.StringIO()
    net.export_events(buf)
    lines = buf.getvalue().splitlines()
    assert lines and all(line.startswith("EVT ") and len(line.split()) == 5 for line in lines)
    parsed = read_events(io.StringIO(buf.getvalue()))
    assert [e for _, e in parsed] == [e for u in sorted(net.states) for e in net.states[u].observed_events]
