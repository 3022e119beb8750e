import pytest
from hypothesis import given, strategies as st

from epcmig.errors import PreconditionError, TopologyError
from epcmig.net import (
    Fabric,
    Hop,
    LightpathSpec,
    NetworkPath,
    Packet,
    Topology,
    apply_firewall,
    format_wire_trace,
    ip_checksum,
    ipv4_header,
    propagation_delay,
    transfer_time,
    vpn_decapsulate,
    vpn_encapsulate,
)
from epcmig.sim import Simulator


def test_propagation_delay():
    assert propagation_delay(0) == 0
    assert propagation_delay(0.005) == 0
    assert propagation_delay(25) == 125
    assert propagation_delay(50) == 250
    with pytest.raises(ValueError):
        propagation_delay(-1)


def test_transfer_time_uses_slowest_hop_and_cap():
    p = NetworkPath((Hop(10**9), Hop(10 * 10**9), Hop(10**9)), efficiency=1, propagation_us=100)
    assert p.one_way_us == 115
    assert p.rtt_us == 230
    assert transfer_time(125_000, p) == 1000 + 115
    assert transfer_time(125_000, p, rate_cap=62_500_000) == 2000 + 115
    assert transfer_time(0, p) == 115
    with pytest.raises(ValueError):
        transfer_time(-1, p)


@given(st.integers(0, 10**9), st.integers(0, 10**9))
def test_transfer_time_monotone_in_size(a, b):
    p = NetworkPath((Hop(10**9),))
    lo, hi = sorted((a, b))
    assert transfer_time(lo, p) <= transfer_time(hi, p)


def test_ipv4_header_checksum_verifies():
    h = ipv4_header("10.0.0.1", "10.0.0.2", 17, 64)
    assert len(h) == 20
    assert ip_checksum(h) == 0


def test_firewall_drops_raw_sctp_but_not_vpn_wrapped():
    raw = Packet("cu", "mme", "sctp", payload=b"x" * 40, headers=(("ip", b"\0" * 20), ("sctp", b"\0" * 12)))
    assert apply_firewall(raw) == "drop"
    wrapped = vpn_encapsulate(raw, "10.20.0.2", "10.10.0.12")
    assert apply_firewall(wrapped) == "pass"
    assert wrapped.wire_len == raw.wire_len + 28
    assert wrapped.carries == "sctp"
    assert vpn_decapsulate(wrapped) == raw
    with pytest.raises(ValueError):
        vpn_decapsulate(raw)


def _fabric(openroadm, trace=None):
    sim = Simulator()
    return sim, Fabric(sim, openroadm, Topology(hosts_per_rack=2), trace)


def test_lightpath_provisioning(openroadm):
    sim, fab = _fabric(openroadm)
    with pytest.raises(TopologyError):
        fab.management_path("rack1-h1", "rack2-h1")
    spec = LightpathSpec(("rack1", "rack2"), 50, 10 * 10**9)
    handle = fab.provision_lightpath(spec)
    assert handle.usable_at == sim.now
    path = fab.management_path("rack1-h1", "rack2-h1")
    assert path.propagation_us == 250
    assert path.rtt_us == 2 * (15 + 250)
    with pytest.raises(TopologyError):
        fab.provision_lightpath(spec)
    with pytest.raises(TopologyError):
        fab.provision_lightpath(LightpathSpec(("rack1", "rack9"), 1, 10**9))
    with pytest.raises(TopologyError):
        fab.rack_of("rack3-h1")
    assert fab.management_path("rack1-h1", "rack1-h2").propagation_us == 0


def test_overlay_reroute_delays(openroadm, cloudlab):
    sim, fab = _fabric(openroadm)
    fab.register("spgw", "rack1-h1", "10.10.0.13")
    with pytest.raises(PreconditionError):
        fab.overlay_reroute("spgw", "rack2-h1")
    with pytest.raises(TopologyError):
        fab.overlay_reroute("nobody", "rack2-h1")
    fab.move("spgw", "rack2-h1")
    assert fab.overlay_reroute("spgw", "rack2-h1", "vpn") == 8_000_000
    assert fab.overlay_reroute("spgw", "rack2-h1", "floating-ip") == 4_000_000
    sim2, fab2 = _fabric(cloudlab)
    fab2.register("hss", "rack1-h1", "10.10.0.11")
    fab2.move("hss", "rack2-h1")
    assert fab2.overlay_reroute("hss", "rack2-h1", "vpn", plane="control") == 16_000_000
    assert fab2.overlay_reroute("hss", "rack2-h1", "vpn", plane="user") == 8_000_000


def test_send_counts_and_traces(openroadm):
    trace = []
    sim, fab = _fabric(openroadm, trace)
    path = fab.tenant_path("rack1-h1", "rack2-h1")
    raw = Packet("cu", "mme", "sctp", payload=b"x", headers=(("sctp", b"\0" * 12),), msgtype="INIT")
    assert fab.send(raw, path, "s1-mme", lambda p: "delivered") is False
    ok = Packet("a", "b", "udp", payload=b"y", teid=0xAB, msgtype="gtp-u")
    assert fab.send(ok, path, "s1-u", lambda p: "delivered") is True
    assert fab.counters.in_flight == 1
    sim.run_to_completion()
    c = fab.counters
    assert (c.injected, c.delivered, c.fw_dropped, c.in_flight) == (2, 1, 1, 0)
    lines = format_wire_trace(trace).splitlines()
    assert lines[0].split("\t")[2:4] == ["sctp", "cu→mme"]
    assert lines[1].endswith("0x000000ab\tgtp-u")
