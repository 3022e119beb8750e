"""EPC processes (HSS, MME, SPGW) and their RAN/PDN peers.

Each VNF is a process with a resident page set, open sockets and a
kind-specific application state. Control messages travel through the fabric
as real TCP/SCTP/UDP packets; a message that reaches a frozen or unreachable
VNF waits in that endpoint's queue until it is serviceable again. User-plane
packets are GTP-U encapsulated at the gNB and decapsulated by the SPGW's
kernel ``gtp0`` device.
"""

import ipaddress
import struct
from dataclasses import dataclass, field

from .errors import CapacityError, DecodeError, PreconditionError, UnknownTeid
from .net import IPPROTO, ipv4_header, udp_header, vpn_decapsulate, vpn_encapsulate
from .protocols import (
    CHUNK_DATA,
    GTPC_PORT,
    GTPU_PORT,
    GtpTunnelEntry,
    GtpTunnelTable,
    Packet,
    Peer,
    SctpAssociationState,
    TcpSocketState,
    _open,
    _pack_str,
    _seal,
    gtp_decap,
    gtp_encap,
    inner_packet,
    sctp_associate,
    sctp_packet,
    tcp_connect,
    tcp_packet,
)

PAGE_SIZE = 4096
KINDS = ("hss", "mme", "spgw")


@dataclass(frozen=True)
class FlavorSpec:
    name: str
    vcpus: int
    ram_mb: int
    disk_gb: int


FLAVORS = {
    "small": FlavorSpec("small", 1, 2048, 20),
    "medium": FlavorSpec("medium", 2, 4096, 40),
}

ADDRESSES = {
    "hss": "10.10.0.11",
    "mme": "10.10.0.12",
    "spgw": "10.10.0.13",
    "cu": "10.20.0.2",
    "gnb": "10.20.0.3",
    "pdn": "192.0.2.1",
}
PORTS = {"diameter": 3868, "s1ap": 36412, "gtpc": GTPC_PORT, "gtpu": GTPU_PORT}
UE_POOL = ipaddress.ip_network("172.16.0.0/24")
IMSI_BASE = 208_930_000_000_000
LINKS = {
    frozenset(("cu", "mme")): "s1-mme",
    frozenset(("mme", "hss")): "s6a",
    frozenset(("mme", "spgw")): "s11",
    frozenset(("gnb", "spgw")): "s1-u",
}


def flavor(name):
    try:
        return FLAVORS[name]
    except KeyError:
        raise ValueError(f"unknown flavor {name!r}") from None


# --- pages ---------------------------------------------------------------------


class PageSet:
    """Resident pages with a dirty set bounded by the working set."""

    def __init__(self, resident_pages, wss_pages):
        if resident_pages < 0 or wss_pages < 0:
            raise ValueError("page counts must be >= 0")
        self.resident = resident_pages
        self.wss = min(wss_pages, resident_pages) if resident_pages else wss_pages
        self.dirty = 0

    def touch(self, n):
        self.dirty = min(self.dirty + n, self.wss)

    def collect(self):
        n, self.dirty = self.dirty, 0
        return n

    @property
    def resident_bytes(self):
        return self.resident * PAGE_SIZE


# --- application state -----------------------------------------------------------

_SUB = struct.Struct("!Q16s16sQ")
_CTX = struct.Struct("!IQIIII4s")
_SESS = struct.Struct("!IQ4sII4s")


@dataclass(frozen=True)
class SubscriberRecord:
    imsi: int
    key: bytes
    opc: bytes
    sqn: int = 0

    def pack(self):
        return _SUB.pack(self.imsi, self.key, self.opc, self.sqn)


@dataclass
class HssState:
    subscribers: dict = field(default_factory=dict)

    CODE = 1

    def encode(self):
        recs = [self.subscribers[k].pack() for k in sorted(self.subscribers)]
        return struct.pack("!I", len(recs)) + b"".join(recs)

    @classmethod
    def decode(cls, data):
        (n,) = struct.unpack_from("!I", data)
        if len(data) != 4 + n * _SUB.size:
            raise DecodeError("bad HSS state length")
        subs = {}
        for i in range(n):
            rec = SubscriberRecord(*_SUB.unpack_from(data, 4 + i * _SUB.size))
            subs[rec.imsi] = rec
        return cls(subs)


@dataclass(frozen=True)
class UeContext:
    ue_id: int
    imsi: int
    enb_ue_id: int
    mme_ue_id: int
    sgw_teid: int
    enb_teid: int
    ue_addr: str


@dataclass
class MmeState:
    contexts: dict = field(default_factory=dict)
    next_mme_ue_id: int = 1

    CODE = 2

    def encode(self):
        out = [struct.pack("!II", self.next_mme_ue_id, len(self.contexts))]
        for k in sorted(self.contexts):
            c = self.contexts[k]
            out.append(_CTX.pack(c.ue_id, c.imsi, c.enb_ue_id, c.mme_ue_id, c.sgw_teid, c.enb_teid, _a(c.ue_addr)))
        return b"".join(out)

    @classmethod
    def decode(cls, data):
        nxt, n = struct.unpack_from("!II", data)
        if len(data) != 8 + n * _CTX.size:
            raise DecodeError("bad MME state length")
        ctxs = {}
        for i in range(n):
            f = _CTX.unpack_from(data, 8 + i * _CTX.size)
            ctxs[f[0]] = UeContext(*f[:6], _s(f[6]))
        return cls(ctxs, nxt)


@dataclass(frozen=True)
class SpgwSession:
    ue_id: int
    imsi: int
    ue_addr: str
    sgw_teid: int
    enb_teid: int
    enb_addr: str


@dataclass
class SpgwState:
    sessions: dict = field(default_factory=dict)
    next_ue_host: int = 2

    CODE = 3

    def encode(self):
        out = [struct.pack("!II", self.next_ue_host, len(self.sessions))]
        for k in sorted(self.sessions):
            s = self.sessions[k]
            out.append(_SESS.pack(s.ue_id, s.imsi, _a(s.ue_addr), s.sgw_teid, s.enb_teid, _a(s.enb_addr)))
        return b"".join(out)

    @classmethod
    def decode(cls, data):
        nxt, n = struct.unpack_from("!II", data)
        if len(data) != 8 + n * _SESS.size:
            raise DecodeError("bad SPGW state length")
        sess = {}
        for i in range(n):
            f = _SESS.unpack_from(data, 8 + i * _SESS.size)
            sess[f[0]] = SpgwSession(f[0], f[1], _s(f[2]), f[3], f[4], _s(f[5]))
        return cls(sess, nxt)


APP_STATES = {c.CODE: c for c in (HssState, MmeState, SpgwState)}
APP_FOR_KIND = {"hss": HssState, "mme": MmeState, "spgw": SpgwState}


def encode_app_state(state):
    return struct.pack("!B", state.CODE) + state.encode()


def decode_app_state(data):
    if not data:
        raise DecodeError("empty application state")
    try:
        return APP_STATES[data[0]].decode(data[1:])
    except KeyError:
        raise DecodeError(f"unknown application state code {data[0]}") from None
    except struct.error:
        raise DecodeError("truncated application state") from None


def _a(addr):
    return ipaddress.IPv4Address(addr).packed


def _s(packed):
    return str(ipaddress.IPv4Address(packed))


@dataclass(frozen=True)
class Gtp0Device:
    addr: str = "172.16.0.1"
    mtu: int = 1500
    netmask: str = "255.255.255.0"
    routes: tuple = ("172.16.0.0/24",)
    masquerade: bool = True

    def encode(self):
        out = [_a(self.addr), struct.pack("!H", self.mtu), _a(self.netmask), struct.pack("!B", len(self.routes))]
        for r in self.routes:
            net = ipaddress.ip_network(r)
            out.append(net.network_address.packed + struct.pack("!B", net.prefixlen))
        out.append(struct.pack("!B", self.masquerade))
        return _seal(b"GTP0", b"".join(out))

    @classmethod
    def decode(cls, data):
        r = _open(b"GTP0", data, "gtp0 device")
        addr = _s(r.take(4))
        (mtu,) = r.unpack("!H")
        mask = _s(r.take(4))
        (n,) = r.unpack("!B")
        routes = []
        for _ in range(n):
            net = _s(r.take(4))
            (plen,) = r.unpack("!B")
            routes.append(f"{net}/{plen}")
        (masq,) = r.unpack("!B")
        r.done()
        return cls(addr, mtu, mask, tuple(routes), bool(masq))


_TUN = struct.Struct("!III4s4s")


def encode_tunnels(table):
    entries = table.entries()
    body = struct.pack("!I", len(entries)) + b"".join(
        _TUN.pack(e.ue_id, e.local_teid, e.peer_teid, _a(e.peer_addr), _a(e.ue_inner_addr)) for e in entries
    )
    return _seal(b"GTPT", body)


def decode_tunnels(data):
    r = _open(b"GTPT", data, "tunnel list")
    (n,) = r.unpack("!I")
    table = GtpTunnelTable()
    for _ in range(n):
        ue, lt, pt, pa, ua = r.unpack(_TUN.format)
        try:
            table.add(GtpTunnelEntry(ue, lt, pt, _s(pa), _s(ua)))
        except ValueError as exc:
            raise DecodeError(str(exc)) from None
    r.done()
    return table


# --- process -----------------------------------------------------------------------


class VnfProcess:
    """One EPC process instance on a host."""

    _pids = 1000

    def __init__(self, kind, flavor_spec, host, addr, pages, app_state, core_bytes=0, disk_image_bytes=0, pid=None):
        if kind not in KINDS:
            raise ValueError(f"unknown VNF kind {kind!r}")
        self.kind = kind
        self.flavor = flavor_spec
        self.host = host
        self.addr = addr
        self.pages = pages
        self.app_state = app_state
        self.core_bytes = core_bytes
        self.disk_image_bytes = disk_image_bytes
        if pid is None:
            VnfProcess._pids += 1
            pid = VnfProcess._pids
        self.pid = pid
        self.tcp_sockets = []
        self.sctp_assocs = []
        self.sctp_listeners = []
        self.udp_ports = []
        self.gtp0 = None
        self.tunnels = None
        self.state = "running"
        self.kernel_forwarding = False
        self.user_ready_at = 0
        self.uplink_active = False

    @property
    def frozen(self):
        return self.state == "frozen"

    @property
    def running(self):
        return self.state == "running"

    def freeze(self):
        if self.state != "running":
            raise PreconditionError(f"{self.kind} is {self.state}, not running")
        self.state = "frozen"

    def resume(self):
        if self.state != "frozen":
            raise PreconditionError(f"{self.kind} is {self.state}, not frozen")
        self.state = "running"

    def destroy(self):
        self.state = "destroyed"
        self.kernel_forwarding = False

    def snapshot(self):
        """Comparable view of everything a checkpoint must preserve."""
        return {
            "kind": self.kind,
            "flavor": self.flavor,
            "addr": self.addr,
            "pid": self.pid,
            "resident_pages": self.pages.resident,
            "core_bytes": self.core_bytes,
            "app_state": encode_app_state(self.app_state),
            "tcp": [(s.local, s.remote, s.state, s.snd_nxt, s.rcv_nxt, s.snd_wnd, s.repair_capable) for s in self.tcp_sockets],
            "sctp": [
                (a.local, a.remote, a.state, a.local_vtag, a.peer_vtag, a.local_tsn, a.peer_tsn, a.stream_seqs, a.repair_capable)
                for a in self.sctp_assocs
            ],
            "sctp_listeners": list(self.sctp_listeners),
            "udp_ports": list(self.udp_ports),
            "gtp0": self.gtp0,
            "tunnels": None if self.tunnels is None else self.tunnels.entries(),
        }

    def __repr__(self):
        return f"VnfProcess({self.kind}, {self.flavor.name}, {self.host}, {self.state})"


def resident_pages_for(metadata_bytes):
    """Pages dumped for a process whose checkpoint is ``metadata_bytes`` long."""
    return (metadata_bytes * 3 // 4) // PAGE_SIZE


def make_subscribers(n, rng):
    subs = {}
    for i in range(n):
        imsi = IMSI_BASE + i + 1
        subs[imsi] = SubscriberRecord(imsi, rng.randbytes(16), rng.randbytes(16), 0)
    return subs


# --- peers ---------------------------------------------------------------------------


@dataclass
class Ue:
    ue_id: int
    imsi: int
    addr: str = None
    attached: bool = False
    enb_ue_id: int = 0


@dataclass
class AttachResult:
    ue_id: int
    started_at: int
    done_at: int = None
    error: str = None
    sgw_teid: int = None
    enb_teid: int = None
    callbacks: list = field(default_factory=list, repr=False)

    @property
    def ok(self):
        return self.done_at is not None and self.error is None

    @property
    def delay_us(self):
        return None if self.done_at is None else self.done_at - self.started_at


class UplinkStream:
    """Periodic UE pings through the GTP tunnel; each one is a probe."""

    def __init__(self, core, ue_id, payload_len, period_us):
        self.core = core
        self.ue_id = ue_id
        self.payload_len = payload_len
        self.period_us = period_us
        self.sent = []
        self.answered = {}
        self.outcomes = {}
        self.stop_at = None
        self.active = False
        self.reattaches = 0

    def start(self, at=None):
        self.active = True
        spgw = self.core.vnfs.get("spgw")
        if spgw is not None:
            spgw.uplink_active = True
        self.core.sim.schedule_at(self.core.sim.now if at is None else at, self._tick, target="ue", label="uplink")

    def stop(self):
        self.active = False
        spgw = self.core.vnfs.get("spgw")
        if spgw is not None:
            spgw.uplink_active = False

    def _tick(self):
        if not self.active:
            return
        sim = self.core.sim
        if self.stop_at is not None and sim.now >= self.stop_at:
            self.stop()
            return
        t = sim.now
        self.sent.append(t)
        self.core._send_uplink(self, t)
        sim.schedule(self._tick, self.period_us, target="ue", label="uplink")

    def record(self, t, outcome):
        self.outcomes[t] = outcome
        if outcome == "delivered":
            self.answered[t] = self.core.sim.now


# --- core ------------------------------------------------------------------------------


class EpcCore:
    """The EPC deployment: VNFs, RAN peers, control procedures and data plane."""

    def __init__(self, sim, fabric, profile, repair_tcp=True, repair_sctp=True, gtp_utility=True,
                 attach_timeout_us=120_000_000):
        self.sim = sim
        self.fabric = fabric
        self.profile = profile
        self.repair_tcp = repair_tcp
        self.repair_sctp = repair_sctp
        self.gtp_utility = gtp_utility
        self.attach_timeout_us = attach_timeout_us
        self.vnfs = {}
        self.usage = {}
        self.pending = {k: [] for k in KINDS}
        self.outages = {k: [] for k in KINDS}
        self.ues = {}
        self.gnb_tunnels = GtpTunnelTable()
        self.cu_assoc = None
        self.pdn_received = []
        self.streams = []
        self.attaches = []
        self.enb_ue_ids = 0
        self.mme_overlay = "vpn"
        self._next_pid = 1000
        fabric.register("cu", fabric.RAN, ADDRESSES["cu"])
        fabric.register("gnb", fabric.RAN, ADDRESSES["gnb"])
        fabric.register("pdn", fabric.PDN, ADDRESSES["pdn"])

    # placement ------------------------------------------------------------------------

    def _reserve(self, host, fl):
        self.fabric.rack_of(host)
        used = self.usage.setdefault(host, [0, 0, 0])
        p = self.profile
        if (used[0] + fl.vcpus > p.host_vcpus or used[1] + fl.ram_mb > p.host_ram_mib
                or used[2] + fl.disk_gb > p.host_disk_gb):
            raise CapacityError(f"host {host} cannot fit a {fl.name} instance")
        used[0] += fl.vcpus
        used[1] += fl.ram_mb
        used[2] += fl.disk_gb

    def reserve(self, host, fl):
        self._reserve(host, fl)

    def release(self, host, fl):
        used = self.usage[host]
        used[0] -= fl.vcpus
        used[1] -= fl.ram_mb
        used[2] -= fl.disk_gb

    def spawn_vnf(self, kind, flavor_name, host):
        """Start ``kind`` on ``host``; opens its listeners and, for SPGW, gtp0."""
        if kind in self.vnfs and self.vnfs[kind].state != "destroyed":
            raise PreconditionError(f"{kind} already running")
        fl = flavor(flavor_name)
        self._reserve(host, fl)
        c = self.profile.container_for(kind, flavor_name)
        pages = PageSet(resident_pages_for(c.metadata_bytes), self.profile.vnf[kind].wss_pages)
        if kind == "hss":
            app = HssState(make_subscribers(self.profile.subscribers, self.sim.rng))
        else:
            app = APP_FOR_KIND[kind]()
        self._next_pid += 1
        vnf = VnfProcess(kind, fl, host, ADDRESSES[kind], pages, app,
                         disk_image_bytes=self.profile.vm_for(kind, flavor_name).load_bytes, pid=self._next_pid)
        if kind == "hss":
            vnf.tcp_sockets.append(TcpSocketState(f"{vnf.addr}:{PORTS['diameter']}", "0.0.0.0:0", "listen",
                                                  repair_capable=self.repair_tcp, host=host))
        elif kind == "mme":
            vnf.sctp_listeners.append(f"{vnf.addr}:{PORTS['s1ap']}")
            vnf.udp_ports.append(PORTS["gtpc"])
        else:
            vnf.udp_ports.extend([PORTS["gtpc"], PORTS["gtpu"]])
            vnf.gtp0 = Gtp0Device()
            vnf.tunnels = GtpTunnelTable()
            vnf.kernel_forwarding = True
        from .container import footprint_core_bytes

        vnf.core_bytes = footprint_core_bytes(vnf, self.profile, self)
        self.vnfs[kind] = vnf
        self.fabric.register(kind, host, vnf.addr)
        return vnf

    def replace_instance(self, kind, new_vnf):
        self.vnfs[kind] = new_vnf

    # availability ----------------------------------------------------------------------

    def mark_down(self, kind, t):
        self.outages[kind].append([t, None])

    def mark_up(self, kind, t):
        if not self.outages[kind] or self.outages[kind][-1][1] is not None:
            raise PreconditionError(f"{kind} has no open outage")
        self.outages[kind][-1][1] = t

    def serviceable(self, kind):
        vnf = self.vnfs.get(kind)
        if vnf is None or not vnf.running:
            return False
        out = self.outages[kind]
        return not out or out[-1][1] is not None and out[-1][1] <= self.sim.now

    def flush(self, kind):
        """Hand queued control messages to the (now serviceable) endpoint."""
        queued, self.pending[kind] = self.pending[kind], []
        for packet, handler in queued:
            self.sim.schedule(lambda p=packet, h=handler: self._run_handler(kind, p, h), 0, target=kind,
                              label=f"dequeue:{packet.msgtype}")

    def _run_handler(self, kind, packet, handler):
        if not self.serviceable(kind):
            self.pending[kind].append((packet, handler))
            return
        handler(self.vnfs[kind], packet)

    # transport ------------------------------------------------------------------------

    def path(self, a, b):
        overlay = self.mme_overlay if {a, b} == {"cu", "mme"} else None
        return self.fabric.tenant_path(self.fabric.host_of(a), self.fabric.host_of(b), overlay)

    def transmit(self, packet, on_receive):
        """Send ``packet`` from ``packet.src`` to ``packet.dst`` over the tenant network."""
        path = self.path(packet.src, packet.dst)
        link = LINKS.get(frozenset((packet.src, packet.dst)), "tenant")
        wire = packet
        if path.overlay == "vpn":
            wire = vpn_encapsulate(packet, self.fabric.addresses[packet.src], self.fabric.addresses[packet.dst])

        def arrive(p):
            if p.headers and p.headers[0][0] == "vpn-ip":
                p = vpn_decapsulate(p)
            return on_receive(p)

        return self.fabric.send(wire, path, link, arrive)

    def to_vnf(self, kind, handler):
        """Receiver wrapper: queue while ``kind`` is frozen or unreachable."""

        def rx(packet):
            if self.serviceable(kind) and not self.pending[kind]:
                handler(self.vnfs[kind], packet)
            else:
                self.pending[kind].append((packet, handler))
            return "delivered"

        return rx

    def peer(self, name):
        host = self.fabric.host_of(name)
        port = {"hss": PORTS["diameter"], "mme": PORTS["s1ap"], "cu": PORTS["s1ap"]}.get(name, PORTS["gtpc"])
        return Peer(name, self.fabric.addresses[name], port, host)

    # warmup -----------------------------------------------------------------------------

    def connect_hss(self, on_done=None):
        """MME opens its Diameter/TCP connection to the HSS."""

        def done(res):
            if res.ok:
                self.vnfs["mme"].tcp_sockets.append(res.client)
                self.vnfs["hss"].tcp_sockets.append(res.server)
            if on_done:
                on_done(res)

        return tcp_connect(self.sim, self._routed("mme", "hss"), self.peer("mme"), self.peer("hss"),
                           repair_capable=self.repair_tcp, on_done=done)

    def associate_cu(self, on_done=None, **kw):
        """The CU sets up its S1-MME SCTP association to the MME."""

        def done(res):
            if res.ok:
                self.cu_assoc = res.client
                self.vnfs["mme"].sctp_assocs.append(res.server)
            if on_done:
                on_done(res)

        return sctp_associate(self.sim, self._routed("cu", "mme"), self.peer("cu"), self.peer("mme"),
                              repair_capable=self.repair_sctp, on_done=done, **kw)

    def _routed(self, a, b):
        def transmit(packet, on_receive):
            dst = packet.dst
            rx = on_receive if dst not in KINDS else self.to_vnf(dst, lambda v, p: on_receive(p))
            return self.transmit(packet, rx)

        return transmit

    # control messages ---------------------------------------------------------------------

    def _sctp_data(self, assoc, src, dst, msg, body, handler):
        assoc.local_tsn = (assoc.local_tsn + 1) % 2**32
        seqs = list(assoc.stream_seqs)
        seqs[1] = (seqs[1] + 1) % 2**16
        assoc.stream_seqs = tuple(seqs)
        p = sctp_packet(src, dst, self.fabric.addresses[src], self.fabric.addresses[dst], PORTS["s1ap"], PORTS["s1ap"],
                        assoc.peer_vtag, CHUNK_DATA, struct.pack("!I", assoc.local_tsn) + body)
        p = Packet(p.src, p.dst, p.protocol, p.payload, p.headers, msgtype=msg)
        return self.transmit(p, handler)

    def _tcp_data(self, sock, src, dst, msg, body, handler):
        p = tcp_packet(src, dst, self.fabric.addresses[src], self.fabric.addresses[dst],
                       int(sock.local.rsplit(":", 1)[1]), int(sock.remote.rsplit(":", 1)[1]),
                       sock.snd_nxt, sock.rcv_nxt, "PSH-ACK", body)
        sock.snd_nxt = (sock.snd_nxt + len(body)) % 2**32
        p = Packet(p.src, p.dst, p.protocol, p.payload, p.headers, msgtype=msg)
        return self.transmit(p, handler)

    def _udp(self, src, dst, msg, body, handler, dport=GTPC_PORT):
        ip = ipv4_header(self.fabric.addresses[src], self.fabric.addresses[dst], IPPROTO["udp"], 8 + len(body))
        p = Packet(src, dst, "udp", body, (("ip", ip), ("udp", udp_header(dport, dport, len(body)))), msgtype=msg)
        return self.transmit(p, handler)

    @staticmethod
    def _established(sockets):
        for s in sockets:
            if s.state == "established":
                return s
        raise PreconditionError("no established connection")

    def attach_ue(self, ue_id, on_done=None):
        """Six-message attach: S1 request, S6a auth pair, S11 session pair, S1 accept."""
        for k in KINDS:
            if k not in self.vnfs or self.vnfs[k].state == "destroyed":
                raise PreconditionError(f"{k} is not deployed")
        if self.cu_assoc is None or self.cu_assoc.state != "established":
            raise PreconditionError("CU has no established S1-MME association")
        ue = self.ues.get(ue_id)
        if ue is None:
            ue = self.ues[ue_id] = Ue(ue_id, IMSI_BASE + ue_id)
        self.enb_ue_ids += 1
        ue.enb_ue_id = self.enb_ue_ids
        enb_teid = self._fresh_teid(self.gnb_tunnels)
        res = AttachResult(ue_id, self.sim.now, enb_teid=enb_teid)
        if on_done:
            res.callbacks.append(on_done)
        self.attaches.append(res)

        def timeout():
            if res.done_at is None:
                res.error = "timeout"
                for cb in res.callbacks:
                    cb(res)

        self.sim.schedule(timeout, self.attach_timeout_us, target="cu", label="attach-timeout")

        def mme_attach_req(mme, p):
            self._established(mme.sctp_assocs).peer_tsn = struct.unpack_from("!I", p.payload, 4)[0]
            sock = self._established(mme.tcp_sockets)
            self._tcp_data(sock, "mme", "hss", "auth-info-req", struct.pack("!Q", ue.imsi), self.to_vnf("hss", hss_auth))

        def hss_auth(hss, p):
            sock = self._established(hss.tcp_sockets)
            sock.rcv_nxt = (sock.rcv_nxt + len(p.payload)) % 2**32
            subs = hss.app_state.subscribers
            rec = subs.get(ue.imsi)
            if rec is not None:
                subs[ue.imsi] = SubscriberRecord(rec.imsi, rec.key, rec.opc, rec.sqn + 1)
            self._tcp_data(sock, "hss", "mme", "auth-info-ans", struct.pack("!QB", ue.imsi, rec is not None),
                           self.to_vnf("mme", mme_auth_ans))

        def mme_auth_ans(mme, p):
            sock = self._established(mme.tcp_sockets)
            sock.rcv_nxt = (sock.rcv_nxt + len(p.payload)) % 2**32
            if not p.payload[8]:
                res.error = "unknown subscriber"
                return
            body = struct.pack("!IQI4s", ue_id, ue.imsi, enb_teid, _a(ADDRESSES["gnb"]))
            self._udp("mme", "spgw", "create-session-req", body, self.to_vnf("spgw", spgw_create))

        def spgw_create(spgw, p):
            uid, imsi, eteid, eaddr = struct.unpack("!IQI4s", p.payload)
            st = spgw.app_state
            if spgw.gtp0 is None or spgw.tunnels is None or not spgw.gtp0.masquerade:
                # session setup (re)initializes the data plane
                spgw.gtp0 = Gtp0Device()
                spgw.tunnels = spgw.tunnels if spgw.tunnels is not None else GtpTunnelTable()
                spgw.kernel_forwarding = True
            old = spgw.tunnels.for_ue(uid)
            if old is not None:
                spgw.tunnels.remove(old.local_teid)
            prev = st.sessions.get(uid)
            ue_addr = prev.ue_addr if prev else str(UE_POOL[st.next_ue_host])
            if prev is None:
                st.next_ue_host += 1
            sgw_teid = self._fresh_teid(spgw.tunnels, avoid={s.sgw_teid for s in st.sessions.values()})
            st.sessions[uid] = SpgwSession(uid, imsi, ue_addr, sgw_teid, eteid, _s(eaddr))
            spgw.tunnels.add(GtpTunnelEntry(uid, sgw_teid, eteid, _s(eaddr), ue_addr))
            self._udp("spgw", "mme", "create-session-resp", struct.pack("!II4s", uid, sgw_teid, _a(ue_addr)),
                      self.to_vnf("mme", mme_session))

        def mme_session(mme, p):
            uid, sgw_teid, ue_addr = struct.unpack("!II4s", p.payload)
            st = mme.app_state
            prev = st.contexts.get(uid)
            mme_ue_id = prev.mme_ue_id if prev else st.next_mme_ue_id
            if prev is None:
                st.next_mme_ue_id += 1
            st.contexts[uid] = UeContext(uid, ue.imsi, ue.enb_ue_id, mme_ue_id, sgw_teid, enb_teid, _s(ue_addr))
            assoc = self._established(mme.sctp_assocs)
            self._sctp_data(assoc, "mme", "cu", "attach-accept", struct.pack("!II4s", uid, sgw_teid, ue_addr), cu_accept)

        def cu_accept(p):
            self.cu_assoc.peer_tsn = struct.unpack_from("!I", p.payload, 4)[0]
            uid, sgw_teid, ue_addr = struct.unpack_from("!II4s", p.payload, 8)
            old = self.gnb_tunnels.for_ue(uid)
            if old is not None:
                self.gnb_tunnels.remove(old.local_teid)
            self.gnb_tunnels.add(GtpTunnelEntry(uid, enb_teid, sgw_teid, ADDRESSES["spgw"], _s(ue_addr)))
            ue.addr = _s(ue_addr)
            ue.attached = True
            if res.done_at is None and res.error is None:
                res.done_at = self.sim.now
                res.sgw_teid = sgw_teid
                for cb in res.callbacks:
                    cb(res)
            return "delivered"

        body = struct.pack("!IQI", ue_id, ue.imsi, enb_teid)
        self._sctp_data(self.cu_assoc, "cu", "mme", "attach-request", body, self.to_vnf("mme", mme_attach_req))
        return res

    def _fresh_teid(self, table, avoid=()):
        while True:
            t = self.sim.rng.randrange(1, 2**32)
            if t not in table and t not in avoid:
                return t

    # user plane -----------------------------------------------------------------------------

    def generate_uplink(self, ue_id, payload_len=84, period_us=100_000, start=True):
        ue = self.ues.get(ue_id)
        if ue is None or not ue.attached:
            raise PreconditionError(f"UE {ue_id} is not attached")
        s = UplinkStream(self, ue_id, payload_len, period_us)
        self.streams.append(s)
        if start:
            s.start()
        return s

    def _send_uplink(self, stream, t):
        ue = self.ues[stream.ue_id]
        entry = self.gnb_tunnels.for_ue(stream.ue_id)
        if entry is None or not ue.attached:
            stream.record(t, "no-bearer")
            return
        inner = inner_packet("ue", "pdn", ue.addr, ADDRESSES["pdn"], stream.payload_len)
        outer = gtp_encap(inner, entry, ADDRESSES["gnb"], src="gnb", dst="spgw")
        outer = Packet(outer.src, outer.dst, outer.protocol, outer.payload, outer.headers, outer.teid,
                       "gtp-u", meta={"inner": inner, "probe": t, "stream": stream})
        fab = self.fabric
        path = self.path("gnb", "spgw")
        wire = outer
        if path.overlay == "vpn":
            wire = vpn_encapsulate(outer, ADDRESSES["gnb"], ADDRESSES["spgw"])

        def arrive(p):
            if p.headers and p.headers[0][0] == "vpn-ip":
                p = vpn_decapsulate(p)
            outcome = self._spgw_user_rx(p)
            stream.record(t, outcome)
            return outcome

        if not fab.send(wire, path, "s1-u", arrive):
            stream.record(t, "fw-drop")

    def _spgw_user_rx(self, packet):
        spgw = self.vnfs.get("spgw")
        now = self.sim.now
        if spgw is None or spgw.state == "destroyed":
            return "unreachable"
        if spgw.frozen and not spgw.kernel_forwarding:
            return "unreachable"
        if now < spgw.user_ready_at or spgw.gtp0 is None or spgw.tunnels is None:
            return "unreachable"
        try:
            inner = gtp_decap(packet, spgw.tunnels)
        except UnknownTeid as exc:
            self._error_indication(exc.teid)
            return "teid-drop"
        if not spgw.gtp0.masquerade:
            return "unreachable"
        self.pdn_received.append((now, inner.wire_len))
        return "delivered"

    def _error_indication(self, teid):
        """SPGW tells the gNB a TEID is unknown; the gNB drops the bearer and the UE re-attaches."""

        def gnb_rx(p):
            for e in self.gnb_tunnels.entries():
                if e.peer_teid == teid:
                    self.gnb_tunnels.remove(e.local_teid)
                    ue = self.ues[e.ue_id]
                    ue.attached = False
                    for s in self.streams:
                        if s.ue_id == e.ue_id:
                            s.reattaches += 1
                    self.sim.schedule(lambda u=e.ue_id: self.attach_ue(u), self.profile.ue_reattach_delay_us,
                                      target="ue", label="re-attach")
            return "delivered"

        self._udp("spgw", "gnb", "error-indication", struct.pack("!I", teid), gnb_rx, dport=GTPU_PORT)

    # memory -------------------------------------------------------------------------------------

    def dirty_rate(self, vnf):
        vp = self.profile.vnf[vnf.kind]
        rate = vp.dirty_pages_per_s
        if vnf.kind == "spgw" and vnf.uplink_active:
            rate += vp.uplink_dirty_pages_per_s
        return rate

    def dirty_page_count(self, vnf, interval_us):
        return dirty_page_count(vnf, interval_us, self.dirty_rate(vnf))


def dirty_page_count(vnf, interval_us, rate_pages_per_s):
    """Pages dirtied by ``vnf`` over ``interval_us``; a frozen VNF dirties none."""
    if interval_us < 0:
        raise ValueError("interval must be >= 0")
    if not vnf.running:
        return 0
    return rate_pages_per_s * interval_us // 1_000_000

