"""Ethernet-over-WDM backhaul model.

Paths are chains of rate-limited hops. Serialization uses the path's
effective rate (bottleneck hop scaled by an efficiency factor); propagation
is 5 us per km of fiber. The Neutron OVS firewall drops raw SCTP, which is why
the VPN overlay wraps everything in UDP.
"""

import math
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .errors import PreconditionError, TopologyError

PROPAGATION_US_PER_KM = 5
DEFAULT_HOP_LATENCY_US = 5
VPN_OUTER_IP = 20
VPN_OUTER_UDP = 8
VPN_PORT = 1194

OVERLAYS = ("vpn", "floating-ip")
PURPOSES = ("management", "tenant")
PROTOCOLS = ("tcp", "sctp", "udp")


def propagation_delay(length_km, us_per_km=PROPAGATION_US_PER_KM):
    """Fiber propagation delay in integer microseconds (half up)."""
    if length_km < 0:
        raise ValueError(f"negative fiber length {length_km}")
    return math.floor(Fraction(length_km) * us_per_km + Fraction(1, 2))


@dataclass(frozen=True)
class LightpathSpec:
    endpoints: tuple
    length_km: float
    rate_bps: int
    purpose: str = "management"

    def __post_init__(self):
        if len(self.endpoints) != 2 or self.endpoints[0] == self.endpoints[1]:
            raise ValueError("a lightpath joins two distinct racks")
        if self.length_km < 0:
            raise ValueError("length_km must be >= 0")
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be > 0")
        if self.purpose not in PURPOSES:
            raise ValueError(f"purpose must be one of {PURPOSES}")

    @property
    def key(self):
        return (self.purpose, frozenset(self.endpoints))


@dataclass(frozen=True)
class Hop:
    rate_bps: int
    latency_us: int = DEFAULT_HOP_LATENCY_US


@dataclass(frozen=True)
class NetworkPath:
    hops: tuple
    efficiency: Fraction = Fraction(1)
    propagation_us: int = 0
    firewall: bool = False
    overlay: str = "floating-ip"
    name: str = ""

    def __post_init__(self):
        if not self.hops:
            raise ValueError("a path needs at least one hop")
        if self.overlay not in OVERLAYS:
            raise ValueError(f"overlay must be one of {OVERLAYS}")

    @property
    def effective_rate_bps(self):
        return min(h.rate_bps for h in self.hops) * Fraction(self.efficiency)

    @property
    def one_way_us(self):
        return sum(h.latency_us for h in self.hops) + self.propagation_us

    @property
    def rtt_us(self):
        return 2 * self.one_way_us

    def with_overlay(self, overlay):
        return replace(self, overlay=overlay)


def transfer_time(nbytes, path, rate_cap=None):
    """Microseconds to push ``nbytes`` across ``path``.

    Serialization at the effective rate (optionally capped by a sender limit
    given in bytes/s) plus per-hop latencies plus propagation.
    """
    if nbytes < 0:
        raise ValueError("byte count must be >= 0")
    rate = Fraction(path.effective_rate_bps)
    if rate_cap is not None:
        rate = min(rate, Fraction(rate_cap) * 8)
    if rate <= 0:
        raise ValueError("path has zero effective rate")
    return math.ceil(Fraction(nbytes * 8 * 1_000_000) / rate) + path.one_way_us


# --- packets -----------------------------------------------------------------


def ip_checksum(data):
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _addr(a):
    parts = [int(p) for p in a.split(".")]
    return bytes(parts)


def ipv4_header(src, dst, proto, payload_len, ident=0, ttl=64):
    total = 20 + payload_len
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, ident & 0xFFFF, 0x4000, ttl, proto, 0, _addr(src), _addr(dst))
    return hdr[:10] + struct.pack("!H", ip_checksum(hdr)) + hdr[12:]


def udp_header(sport, dport, payload_len):
    return struct.pack("!HHHH", sport, dport, 8 + payload_len, 0)


IPPROTO = {"tcp": 6, "udp": 17, "sctp": 132, "icmp": 1}


@dataclass(frozen=True)
class Packet:
    """A packet on the wire; ``headers`` is outermost first as (name, bytes)."""

    src: str
    dst: str
    protocol: str
    payload: bytes = b""
    headers: tuple = ()
    teid: int = None
    msgtype: str = ""
    inner_protocol: str = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")

    @property
    def payload_len(self):
        return len(self.payload)

    @property
    def header_len(self):
        return sum(len(h) for _, h in self.headers)

    @property
    def wire_len(self):
        return self.header_len + len(self.payload)

    def to_bytes(self):
        return b"".join(h for _, h in self.headers) + self.payload

    @property
    def carries(self):
        """Protocol seen by a deep inspector (inner protocol for tunnels)."""
        return self.inner_protocol or self.protocol


def apply_firewall(packet):
    """OVS firewall decision: raw SCTP is dropped, everything else passes."""
    return "drop" if packet.protocol == "sctp" else "pass"


def vpn_encapsulate(packet, src_addr, dst_addr):
    """Wrap a packet in outer IP/UDP as the VPN overlay does (+28 bytes)."""
    inner_len = packet.wire_len
    outer = (
        ("vpn-ip", ipv4_header(src_addr, dst_addr, IPPROTO["udp"], VPN_OUTER_UDP + inner_len)),
        ("vpn-udp", udp_header(VPN_PORT, VPN_PORT, inner_len)),
    )
    return replace(
        packet,
        protocol="udp",
        headers=outer + packet.headers,
        inner_protocol=packet.carries,
    )


def vpn_decapsulate(packet):
    if not packet.headers or packet.headers[0][0] != "vpn-ip":
        raise ValueError("packet is not VPN-encapsulated")
    return replace(packet, protocol=packet.inner_protocol, headers=packet.headers[2:], inner_protocol=None)


# --- fabric ------------------------------------------------------------------


@dataclass
class LightpathHandle:
    spec: LightpathSpec
    path: NetworkPath
    requested_at: int
    usable_at: int


@dataclass
class Counters:
    injected: int = 0
    delivered: int = 0
    fw_dropped: int = 0
    teid_dropped: int = 0
    unreachable: int = 0

    @property
    def in_flight(self):
        return self.injected - self.delivered - self.fw_dropped - self.teid_dropped - self.unreachable


@dataclass(frozen=True)
class Topology:
    racks: tuple = ("rack1", "rack2")
    hosts_per_rack: int = 8
    firewall: bool = True
    overlay: str = "vpn"
    tenant_length_km: float = 0.005


class Fabric:
    """Hosts, racks, lightpaths and packet delivery for one simulation."""

    RAN = "ran"
    PDN = "pdn"

    def __init__(self, sim, profile, topology=None, wire_trace=None):
        self.sim = sim
        self.profile = profile
        self.topology = topology or Topology(hosts_per_rack=profile.hosts_per_rack)
        self.wire_trace = wire_trace
        self.counters = Counters()
        self.hosts = {}
        for rack in self.topology.racks:
            for i in range(1, self.topology.hosts_per_rack + 1):
                self.hosts[f"{rack}-h{i}"] = rack
        self.lightpaths = {}
        self.endpoints = {}
        self.addresses = {}
        self._route_ready = {}
        self.link_bytes = {}

    # topology ---------------------------------------------------------------

    def rack_of(self, host):
        if host in (self.RAN, self.PDN):
            return host
        try:
            return self.hosts[host]
        except KeyError:
            raise TopologyError(f"unknown host {host!r}") from None

    def provision_lightpath(self, spec):
        for rack in spec.endpoints:
            if rack not in self.topology.racks:
                raise TopologyError(f"unknown rack {rack!r}")
        if spec.key in self.lightpaths:
            raise TopologyError(f"{spec.purpose} lightpath {sorted(spec.endpoints)} already provisioned")
        prof = self.profile.mgmt if spec.purpose == "management" else self.profile.tenant
        hops = [Hop(r, prof.hop_latency_us) for r in prof.link_rates_bps]
        # the line segment carries the lightpath's own rate
        hops[len(hops) // 2] = Hop(spec.rate_bps, prof.hop_latency_us)
        path = NetworkPath(
            hops=tuple(hops),
            efficiency=prof.efficiency,
            propagation_us=propagation_delay(spec.length_km, self.profile.propagation_us_per_km),
            name=f"{spec.purpose}:{'-'.join(spec.endpoints)}",
        )
        now = self.sim.now
        handle = LightpathHandle(spec, path, now, now + self.profile.lightpath_setup_us)
        self.lightpaths[spec.key] = handle
        return handle

    def release_lightpath(self, spec):
        self.lightpaths.pop(spec.key, None)

    def _lightpath(self, purpose, ra, rb):
        handle = self.lightpaths.get((purpose, frozenset((ra, rb))))
        if handle is None:
            raise TopologyError(f"no {purpose} lightpath between {ra} and {rb}")
        if handle.usable_at > self.sim.now:
            raise TopologyError(f"{purpose} lightpath {ra}-{rb} not yet usable")
        return handle

    def management_path(self, src_host, dst_host):
        ra, rb = self.rack_of(src_host), self.rack_of(dst_host)
        prof = self.profile.mgmt
        if ra != rb and prof.lightpath:
            return self._lightpath("management", ra, rb).path
        hops = tuple(Hop(r, prof.hop_latency_us) for r in prof.link_rates_bps)
        return NetworkPath(hops=hops, efficiency=prof.efficiency, name=f"management:{ra}-{rb}")

    def tenant_path(self, host_a, host_b, overlay=None):
        overlay = overlay or self.topology.overlay
        ra, rb = self.rack_of(host_a), self.rack_of(host_b)
        prof = self.profile.tenant
        hops = [Hop(r, prof.hop_latency_us) for r in prof.link_rates_bps]
        prop = 0
        if {ra, rb} & {self.RAN, self.PDN}:
            hops = [Hop(r, self.profile.ran.hop_latency_us) for r in self.profile.ran.link_rates_bps] + hops
        racks = {ra, rb} - {self.RAN, self.PDN}
        if len(racks) == 2 and prof.lightpath:
            prop = propagation_delay(self.topology.tenant_length_km, self.profile.propagation_us_per_km)
        if host_a == host_b:
            hops = [Hop(max(prof.link_rates_bps), 0)]
        return NetworkPath(
            hops=tuple(hops),
            efficiency=prof.efficiency,
            propagation_us=prop,
            firewall=self.topology.firewall,
            overlay=overlay,
            name=f"tenant:{ra}-{rb}",
        )

    # endpoints --------------------------------------------------------------

    def register(self, endpoint, host, addr):
        self.rack_of(host)
        self.endpoints[endpoint] = host
        self.addresses[endpoint] = addr
        self._route_ready[endpoint] = 0

    def host_of(self, endpoint):
        try:
            return self.endpoints[endpoint]
        except KeyError:
            raise TopologyError(f"unknown endpoint {endpoint!r}") from None

    def move(self, endpoint, new_host):
        self.host_of(endpoint)
        self.rack_of(new_host)
        self.endpoints[endpoint] = new_host

    def set_route_ready(self, endpoint, time):
        self._route_ready[endpoint] = time

    def route_ready(self, endpoint):
        return self._route_ready.get(endpoint, 0) <= self.sim.now

    def overlay_reroute(self, endpoint, new_host, overlay=None, plane="control"):
        """Address-learning delay after ``endpoint`` moved to ``new_host`` (us).

        Floating IP needs RARP only; the VPN overlay also reroutes client-to-client
        traffic. Control-plane reachability additionally pays the profile's
        geographic delay.
        """
        if endpoint not in self.endpoints:
            raise TopologyError(f"unknown endpoint {endpoint!r}")
        if self.endpoints[endpoint] != new_host:
            raise PreconditionError(f"{endpoint} has not migrated to {new_host}")
        overlay = overlay or self.topology.overlay
        delay = self.profile.rarp_delay_us
        if overlay == "vpn":
            delay += self.profile.vpn_reroute_delay_us
        if plane == "control":
            delay += self.profile.geo_delay_us
        return delay

    # delivery ---------------------------------------------------------------

    def send(self, packet, path, link, on_arrival):
        """Put ``packet`` on ``path``. ``on_arrival(packet)`` returns the outcome.

        Returns ``False`` if the firewall dropped it, else ``True``.
        """
        c = self.counters
        c.injected += 1
        self._trace(link, packet)
        if path.firewall and apply_firewall(packet) == "drop":
            c.fw_dropped += 1
            return False
        delay = transfer_time(packet.wire_len, path)

        def arrive():
            outcome = on_arrival(packet)
            if outcome == "delivered":
                c.delivered += 1
            elif outcome == "teid-drop":
                c.teid_dropped += 1
            elif outcome == "unreachable":
                c.unreachable += 1
            else:
                raise ValueError(f"bad delivery outcome {outcome!r}")

        self.sim.schedule(arrive, delay, target=packet.dst, label=f"rx:{link}:{packet.msgtype}")
        return True

    def bulk(self, link, src, dst, nbytes, msgtype="bulk"):
        """Account a bulk stream (migration data) on ``link`` without per-packet events."""
        if nbytes < 0:
            raise ValueError("byte count must be >= 0")
        self.link_bytes[link] = self.link_bytes.get(link, 0) + nbytes
        if self.wire_trace is not None:
            self.wire_trace.append((self.sim.now, link, "tcp", src, dst, nbytes, None, msgtype))

    def _trace(self, link, packet):
        if self.wire_trace is None:
            return
        proto = packet.protocol if packet.inner_protocol is None else f"{packet.protocol}/{packet.inner_protocol}"
        self.wire_trace.append((self.sim.now, link, proto, packet.src, packet.dst, packet.wire_len, packet.teid, packet.msgtype))


def format_wire_trace(trace):
    lines = []
    for t, link, proto, src, dst, length, teid, msg in trace:
        tid = "-" if teid is None else f"0x{teid:08x}"
        lines.append(f"{t}\t{link}\t{proto}\t{src}→{dst}\t{length}\t{tid}\t{msg}\n")
    return "".join(lines)
