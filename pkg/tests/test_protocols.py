import pytest
from hypothesis import given, strategies as st

from epcmig.errors import AssociationTimeout, DecodeError, PreconditionError, RepairUnsupported, UnknownTeid
from epcmig.protocols import (
    GtpHeader,
    GtpTunnelEntry,
    GtpTunnelTable,
    Peer,
    SctpAssociationState,
    SctpSocket,
    TcpSocketState,
    gtp_decap,
    gtp_encap,
    inner_packet,
    parse_gtp_frame,
    sctp_associate,
    sctp_repair_restore,
    setup_messages,
    tcp_connect,
    tcp_repair_restore,
)
from epcmig.sim import Simulator

teids = st.integers(1, 2**32 - 1)
addrs = st.tuples(*[st.integers(0, 255)] * 4).map(lambda t: ".".join(map(str, t)))


def test_gtp_header_layout():
    h = GtpHeader(length=84, teid=0x01020304)
    assert h.pack() == bytes([0x30, 0xFF, 0x00, 0x54, 1, 2, 3, 4])
    assert GtpHeader.unpack(h.pack()) == h
    with pytest.raises(DecodeError):
        GtpHeader.unpack(b"\x30\xff")
    with pytest.raises(DecodeError):
        GtpHeader.unpack(bytes([0x50, 0xFF, 0, 0, 0, 0, 0, 1]))


@given(teids, teids, addrs, st.integers(28, 1400))
def test_encap_decap_round_trip(local, peer, peer_addr, size):
    entry = GtpTunnelEntry(1, local, peer, peer_addr, "10.45.0.2")
    inner = inner_packet("ue", "pdn", "10.45.0.2", "192.0.2.1", size)
    outer = gtp_encap(inner, entry, "10.20.0.3")
    assert outer.wire_len == inner.wire_len + 36
    assert outer.teid == peer
    teid, body = parse_gtp_frame(outer.to_bytes())
    assert teid == peer and body == inner.to_bytes()
    far = GtpTunnelTable([GtpTunnelEntry(1, peer, local, "10.20.0.3", "10.45.0.2")])
    assert gtp_decap(outer, far) is inner


def test_unknown_teid_raises():
    entry = GtpTunnelEntry(1, 5, 6, "10.10.0.13", "10.45.0.2")
    outer = gtp_encap(inner_packet("ue", "pdn", "10.45.0.2", "192.0.2.1"), entry, "10.20.0.3")
    with pytest.raises(UnknownTeid) as exc:
        gtp_decap(outer, GtpTunnelTable())
    assert exc.value.teid == 6


def test_tunnel_table_rules():
    with pytest.raises(ValueError):
        GtpTunnelEntry(1, 0, 1, "a", "b")
    t = GtpTunnelTable([GtpTunnelEntry(1, 7, 8, "x", "y")])
    with pytest.raises(ValueError):
        t.add(GtpTunnelEntry(2, 7, 9, "x", "z"))
    assert 7 in t and len(t) == 1
    assert t.for_ue(1).peer_teid == 8 and t.for_ue(2) is None
    assert t.teids() == {7}


def test_parse_gtp_frame_rejects_garbage():
    with pytest.raises(DecodeError):
        parse_gtp_frame(b"\0" * 10)
    with pytest.raises(DecodeError):
        parse_gtp_frame(b"\x60" + b"\0" * 60)


tcp_states = st.builds(
    TcpSocketState, addrs.map(lambda a: a + ":3868"), addrs.map(lambda a: a + ":1"),
    st.sampled_from(["listen", "syn-sent", "syn-received", "established", "closed"]),
    st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.booleans(),
    st.text("abc-h123", max_size=20),
)


@given(tcp_states)
def test_tcp_record_round_trip(s):
    assert TcpSocketState.decode(s.encode()) == s


@st.composite
def sctp_states(draw):
    n = draw(st.integers(1, 8))
    return SctpAssociationState(
        draw(addrs), draw(addrs), "one-to-one", draw(st.sampled_from(["closed", "cookie-wait", "cookie-echoed", "established"])),
        draw(teids), draw(teids), draw(teids), draw(teids), n, draw(st.integers(1, 8)),
        tuple(draw(st.lists(st.integers(0, 65535), min_size=n, max_size=n))), draw(st.booleans()), draw(st.text("xyz", max_size=8)),
    )


@given(sctp_states())
def test_sctp_record_round_trip(s):
    assert SctpAssociationState.decode(s.encode()) == s


def test_corrupt_records_are_refused():
    data = bytearray(TcpSocketState("a:1", "b:2", "established").encode())
    data[6] ^= 0xFF
    with pytest.raises(DecodeError):
        TcpSocketState.decode(bytes(data))
    with pytest.raises(DecodeError):
        SctpAssociationState.decode(b"TCPS1234")


def test_repair_restore_rules():
    est = TcpSocketState("a:1", "b:2", "established", 10, 20, host="h1")
    got = tcp_repair_restore(est.encode(), "h2")
    assert got.host == "h2" and (got.snd_nxt, got.rcv_nxt) == (10, 20)
    assert tcp_repair_restore(TcpSocketState("a:1", "0.0.0.0:0", "listen"), "h2").state == "listen"
    with pytest.raises(PreconditionError):
        tcp_repair_restore(TcpSocketState("a:1", "b:2", "syn-sent"), "h2")
    with pytest.raises(RepairUnsupported):
        tcp_repair_restore(TcpSocketState("a:1", "b:2", "established", repair_capable=False), "h2")
    a = SctpAssociationState("a:1", "b:2", state="established", local_vtag=5, peer_vtag=6)
    assert sctp_repair_restore(a.encode(), "h9") == SctpAssociationState(
        "a:1", "b:2", state="established", local_vtag=5, peer_vtag=6, host="h9")
    with pytest.raises(RepairUnsupported):
        sctp_repair_restore(SctpAssociationState("a:1", "b:2", state="established", repair_capable=False), "h9")
    with pytest.raises(PreconditionError):
        sctp_repair_restore(SctpAssociationState("a:1", "b:2"), "h9")


def test_one_to_one_socket():
    s = SctpSocket("mme")
    s.attach(SctpAssociationState("a:1", "b:2", state="established"))
    with pytest.raises(PreconditionError):
        s.attach(SctpAssociationState("a:1", "c:2", state="established"))
    with pytest.raises(PreconditionError):
        s.listen()
    with pytest.raises(ValueError):
        SctpAssociationState("a:1", "b:2", style="one-to-many")


def _link(sim, trace, drop=lambda p: False, delay=100):
    def transmit(p, on_receive):
        trace.append((sim.now, "l", p.protocol, p.src, p.dst, p.wire_len, None, p.msgtype))
        if not drop(p):
            sim.schedule(lambda: on_receive(p), delay)
    return transmit


CU = Peer("cu", "10.20.0.2", 36412, "ran")
MME = Peer("mme", "10.10.0.12", 36412, "rack1-h2")


def test_sctp_four_way_handshake():
    sim, trace = Simulator(seed=3), []
    res = sctp_associate(sim, _link(sim, trace), CU, MME)
    sim.run_to_completion()
    assert res.ok and res.done_at == 400
    assert [r[7] for r in trace] == ["INIT", "INIT-ACK", "COOKIE-ECHO", "COOKIE-ACK"]
    assert res.client.state == res.server.state == "established"
    assert res.client.peer_vtag == res.server.local_vtag
    assert res.server.peer_vtag == res.client.local_vtag
    assert len(setup_messages(trace)) == 1


def test_sctp_init_is_retransmitted_then_times_out():
    sim, trace = Simulator(), []
    res = sctp_associate(sim, _link(sim, trace, drop=lambda p: True), CU, MME, rto_us=1000, max_retries=3)
    sim.run_to_completion()
    assert isinstance(res.error, AssociationTimeout)
    assert [r[7] for r in trace] == ["INIT"] * 4
    assert res.done_at == 4000


def test_sctp_recovers_from_one_lost_init():
    sim, trace = Simulator(), []
    lost = []

    def drop(p):
        if p.msgtype == "INIT" and not lost:
            lost.append(p)
            return True
        return False

    res = sctp_associate(sim, _link(sim, trace, drop), CU, MME, rto_us=1000)
    sim.run_to_completion()
    assert res.ok and res.done_at == 1400


def test_tcp_three_way_handshake():
    sim, trace = Simulator(seed=1), []
    a, b = Peer("mme", "10.10.0.12", 40000), Peer("hss", "10.10.0.11", 3868)
    res = tcp_connect(sim, _link(sim, trace), a, b)
    sim.run_to_completion()
    assert res.ok
    assert [r[7] for r in trace] == ["SYN", "SYN-ACK", "ACK"]
    assert res.client.rcv_nxt == (res.server.snd_nxt) % 2**32
    assert res.server.rcv_nxt == res.client.snd_nxt
