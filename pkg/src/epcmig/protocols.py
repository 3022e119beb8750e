"""Transport state machines and codecs: TCP, one-to-one SCTP, UDP, GTP-U.

Socket states serialize to fixed-layout records so a checkpoint can carry them
and a repair-mode restore can rebuild the socket without any handshake.
Handshake drivers run on the simulator and talk through a ``transmit``
callable supplied by the caller, so they are independent of routing.
"""

import struct
import zlib
from dataclasses import dataclass, field, replace

from .errors import AssociationTimeout, DecodeError, PreconditionError, RepairUnsupported, UnknownTeid
from .net import IPPROTO, Packet, ipv4_header, udp_header

GTPU_PORT = 2152
GTPC_PORT = 2123
GTP_FLAGS = 0x30  # version 1, protocol type GTP, no optional fields
GTP_TPDU = 0xFF
GTP_HEADER_LEN = 8
_GTP = struct.Struct("!BBHI")


# --- GTP-U -------------------------------------------------------------------


@dataclass(frozen=True)
class GtpHeader:
    flags: int = GTP_FLAGS
    msgtype: int = GTP_TPDU
    length: int = 0
    teid: int = 0

    def pack(self):
        return _GTP.pack(self.flags, self.msgtype, self.length, self.teid)

    @classmethod
    def unpack(cls, data):
        if len(data) < GTP_HEADER_LEN:
            raise DecodeError(f"GTP header needs {GTP_HEADER_LEN} bytes, got {len(data)}")
        flags, msgtype, length, teid = _GTP.unpack_from(data)
        if flags >> 5 != 1 or not flags & 0x10:
            raise DecodeError(f"not a GTPv1 header (flags 0x{flags:02x})")
        if flags & 0x07:
            raise DecodeError("optional GTP fields are not supported")
        return cls(flags, msgtype, length, teid)


@dataclass(frozen=True)
class GtpTunnelEntry:
    ue_id: int
    local_teid: int
    peer_teid: int
    peer_addr: str
    ue_inner_addr: str

    def __post_init__(self):
        for name in ("local_teid", "peer_teid"):
            v = getattr(self, name)
            if not 0 < v < 2**32:
                raise ValueError(f"{name} must be a nonzero 32-bit value")


class GtpTunnelTable:
    """TEID-keyed tunnel list of one GTP endpoint."""

    def __init__(self, entries=()):
        self._by_teid = {}
        for e in entries:
            self.add(e)

    def add(self, entry):
        if entry.local_teid in self._by_teid:
            raise ValueError(f"duplicate local TEID 0x{entry.local_teid:08x}")
        self._by_teid[entry.local_teid] = entry

    def remove(self, teid):
        return self._by_teid.pop(teid)

    def lookup(self, teid):
        try:
            return self._by_teid[teid]
        except KeyError:
            raise UnknownTeid(teid) from None

    def for_ue(self, ue_id):
        for e in self._by_teid.values():
            if e.ue_id == ue_id:
                return e
        return None

    def teids(self):
        return frozenset(self._by_teid)

    def entries(self):
        return [self._by_teid[t] for t in sorted(self._by_teid)]

    def __len__(self):
        return len(self._by_teid)

    def __contains__(self, teid):
        return teid in self._by_teid

    def __eq__(self, other):
        return isinstance(other, GtpTunnelTable) and self.entries() == other.entries()

    def __repr__(self):
        return f"GtpTunnelTable({self.entries()!r})"


def inner_packet(src, dst, src_addr, dst_addr, payload_len=84, sport=40000, dport=7):
    """A UE-side IPv4/UDP packet whose total IP length is ``payload_len``."""
    body = bytes((i * 7) & 0xFF for i in range(payload_len - 28))
    headers = (
        ("ip", ipv4_header(src_addr, dst_addr, IPPROTO["udp"], 8 + len(body))),
        ("udp", udp_header(sport, dport, len(body))),
    )
    return Packet(src, dst, "udp", payload=body, headers=headers, msgtype="ue-data")


def gtp_encap(inner, entry, src_addr, src="gnb", dst=None):
    """Wrap ``inner`` in outer IP/UDP/GTP toward the tunnel peer (+36 bytes)."""
    body = inner.to_bytes()
    gtp = GtpHeader(length=len(body), teid=entry.peer_teid).pack()
    udp = udp_header(GTPU_PORT, GTPU_PORT, len(gtp) + len(body))
    ip = ipv4_header(src_addr, entry.peer_addr, IPPROTO["udp"], len(udp) + len(gtp) + len(body))
    return Packet(
        src,
        dst or entry.peer_addr,
        "udp",
        payload=body,
        headers=(("ip", ip), ("udp", udp), ("gtp", gtp)),
        teid=entry.peer_teid,
        msgtype="gtp-u",
        meta={"inner": inner},
    )


def parse_gtp_frame(data):
    """Split raw outer bytes into (teid, inner bytes)."""
    if len(data) < 36:
        raise DecodeError("frame too short for IP/UDP/GTP")
    if data[0] >> 4 != 4 or data[9] != IPPROTO["udp"]:
        raise DecodeError("outer header is not IPv4/UDP")
    ihl = (data[0] & 0x0F) * 4
    dport = struct.unpack_from("!H", data, ihl + 2)[0]
    if dport != GTPU_PORT:
        raise DecodeError(f"UDP port {dport} is not GTP-U")
    hdr = GtpHeader.unpack(data[ihl + 8:])
    inner = data[ihl + 8 + GTP_HEADER_LEN:]
    if hdr.length != len(inner):
        raise DecodeError(f"GTP length {hdr.length} disagrees with {len(inner)} payload bytes")
    return hdr.teid, inner


def gtp_decap(outer, table):
    """Strip IP/UDP/GTP and return the inner packet if the TEID is known."""
    teid, body = parse_gtp_frame(outer.to_bytes())
    table.lookup(teid)
    inner = outer.meta.get("inner")
    if inner is None or inner.to_bytes() != body:
        raise DecodeError("GTP payload does not match the carried inner packet")
    return inner


# --- serialization helpers -----------------------------------------------------


def _pack_str(s):
    b = s.encode()
    if len(b) > 255:
        raise ValueError("string field longer than 255 bytes")
    return struct.pack("!B", len(b)) + b


class _Reader:
    def __init__(self, data, what):
        self.data = bytes(data)
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated {self.what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def str(self):
        (n,) = self.unpack("!B")
        try:
            return self.take(n).decode()
        except UnicodeDecodeError:
            raise DecodeError(f"bad string in {self.what}") from None

    def done(self):
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes in {self.what}")


def _seal(magic, body):
    return magic + body + struct.pack("!I", zlib.crc32(magic + body))


def _open(magic, data, what):
    data = bytes(data)
    if len(data) < len(magic) + 4 or not data.startswith(magic):
        raise DecodeError(f"not a {what} record")
    body, crc = data[:-4], struct.unpack("!I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise DecodeError(f"{what} record checksum mismatch")
    return _Reader(body[len(magic):], what)


# --- TCP -----------------------------------------------------------------------

TCP_STATES = ("listen", "syn-sent", "syn-received", "established", "closed")


@dataclass
class TcpSocketState:
    local: str
    remote: str
    state: str = "closed"
    snd_nxt: int = 0
    rcv_nxt: int = 0
    snd_wnd: int = 65535
    repair_capable: bool = True
    host: str = ""

    def encode(self):
        body = (
            _pack_str(self.local)
            + _pack_str(self.remote)
            + _pack_str(self.host)
            + struct.pack("!BIIIB", TCP_STATES.index(self.state), self.snd_nxt, self.rcv_nxt, self.snd_wnd, self.repair_capable)
        )
        return _seal(b"TCPS", body)

    @classmethod
    def decode(cls, data):
        r = _open(b"TCPS", data, "TCP socket")
        local, remote, host = r.str(), r.str(), r.str()
        st, snd, rcv, wnd, rep = r.unpack("!BIIIB")
        r.done()
        if st >= len(TCP_STATES):
            raise DecodeError(f"bad TCP state code {st}")
        return cls(local, remote, TCP_STATES[st], snd, rcv, wnd, bool(rep), host)


def tcp_repair_restore(serialized, new_host):
    """Rebuild a TCP socket at ``new_host`` from its serialized record.

    Established sockets come back in repair mode with their sequence space
    intact and no SYN on the wire; listeners are simply reopened.
    """
    state = TcpSocketState.decode(serialized) if isinstance(serialized, (bytes, bytearray)) else serialized
    if state.state == "listen":
        return replace(state, host=new_host)
    if state.state != "established":
        raise PreconditionError(f"cannot repair a TCP socket in state {state.state!r}")
    if not state.repair_capable:
        raise RepairUnsupported(f"TCP repair disabled for {state.local}->{state.remote}")
    return replace(state, host=new_host)


# --- SCTP ----------------------------------------------------------------------

SCTP_STATES = ("closed", "cookie-wait", "cookie-echoed", "established")
CHUNK_DATA, CHUNK_INIT, CHUNK_INIT_ACK, CHUNK_COOKIE_ECHO, CHUNK_COOKIE_ACK = 0, 1, 2, 10, 11
CHUNK_NAMES = {
    CHUNK_DATA: "DATA",
    CHUNK_INIT: "INIT",
    CHUNK_INIT_ACK: "INIT-ACK",
    CHUNK_COOKIE_ECHO: "COOKIE-ECHO",
    CHUNK_COOKIE_ACK: "COOKIE-ACK",
}


@dataclass
class SctpAssociationState:
    local: str
    remote: str
    style: str = "one-to-one"
    state: str = "closed"
    local_vtag: int = 0
    peer_vtag: int = 0
    local_tsn: int = 0
    peer_tsn: int = 0
    out_streams: int = 2
    in_streams: int = 2
    stream_seqs: tuple = (0, 0)
    repair_capable: bool = True
    host: str = ""

    def __post_init__(self):
        if self.style != "one-to-one":
            raise ValueError("only one-to-one SCTP sockets are supported")
        self.stream_seqs = tuple(self.stream_seqs)
        if len(self.stream_seqs) != self.out_streams:
            raise ValueError("one sequence counter per outbound stream")

    def encode(self):
        body = (
            _pack_str(self.local)
            + _pack_str(self.remote)
            + _pack_str(self.host)
            + struct.pack(
                "!BIIIIHHB",
                SCTP_STATES.index(self.state),
                self.local_vtag,
                self.peer_vtag,
                self.local_tsn,
                self.peer_tsn,
                self.out_streams,
                self.in_streams,
                self.repair_capable,
            )
            + struct.pack(f"!{self.out_streams}H", *self.stream_seqs)
        )
        return _seal(b"SCTA", body)

    @classmethod
    def decode(cls, data):
        r = _open(b"SCTA", data, "SCTP association")
        local, remote, host = r.str(), r.str(), r.str()
        st, lv, pv, lt, pt, os_, is_, rep = r.unpack("!BIIIIHHB")
        seqs = r.unpack(f"!{os_}H")
        r.done()
        if st >= len(SCTP_STATES):
            raise DecodeError(f"bad SCTP state code {st}")
        return cls(local, remote, "one-to-one", SCTP_STATES[st], lv, pv, lt, pt, os_, is_, seqs, bool(rep), host)


class SctpSocket:
    """One-to-one style socket: never more than one association."""

    def __init__(self, name, repair_capable=True):
        self.name = name
        self.repair_capable = repair_capable
        self.association = None
        self.listening = False

    def attach(self, assoc):
        if self.association is not None and self.association.state != "closed":
            raise PreconditionError(f"socket {self.name} already has an association")
        self.association = assoc

    def listen(self):
        if self.association is not None:
            raise PreconditionError("an associated one-to-one socket cannot listen")
        self.listening = True


def sctp_repair_restore(serialized, new_host):
    """Re-create an established association at ``new_host`` with no INIT."""
    state = SctpAssociationState.decode(serialized) if isinstance(serialized, (bytes, bytearray)) else serialized
    if state.state != "established":
        raise PreconditionError(f"cannot repair an SCTP association in state {state.state!r}")
    if not state.repair_capable:
        raise RepairUnsupported(f"SCTP repair disabled for {state.local}->{state.remote}")
    return replace(state, host=new_host)


def sctp_packet(src, dst, src_addr, dst_addr, sport, dport, vtag, chunk_type, body=b""):
    chunk = struct.pack("!BBH", chunk_type, 0, 4 + len(body)) + body
    common = struct.pack("!HHII", sport, dport, vtag, 0)
    common = common[:8] + struct.pack("!I", zlib.crc32(common + chunk))
    ip = ipv4_header(src_addr, dst_addr, IPPROTO["sctp"], len(common) + len(chunk))
    return Packet(src, dst, "sctp", payload=chunk, headers=(("ip", ip), ("sctp", common)), msgtype=CHUNK_NAMES[chunk_type])


def chunk_of(packet):
    ctype, _, length = struct.unpack_from("!BBH", packet.payload)
    return ctype, packet.payload[4:length]


@dataclass
class Peer:
    """Addressing of one side of a connection."""

    name: str
    addr: str
    port: int
    host: str = ""


@dataclass
class HandshakeResult:
    client: object = None
    server: object = None
    wire_messages: int = 0
    error: Exception = None
    done_at: int = None
    callbacks: list = field(default_factory=list, repr=False)

    @property
    def ok(self):
        return self.error is None and self.done_at is not None

    def _finish(self, now, error=None):
        self.error = error
        self.done_at = now
        for cb in self.callbacks:
            cb(self)


SCTP_RTO_US = 3_000_000
SCTP_MAX_INIT_RETRIES = 8


def sctp_associate(sim, transmit, client, server, repair_capable=True, rto_us=SCTP_RTO_US,
                   max_retries=SCTP_MAX_INIT_RETRIES, on_done=None):
    """Run the four-way SCTP handshake; returns a HandshakeResult filled in later.

    ``transmit(packet, on_receive)`` injects a packet; ``on_receive(packet)``
    is called at the far end. INIT is retransmitted every ``rto_us`` and the
    attempt fails with AssociationTimeout after ``max_retries`` retries.
    """
    res = HandshakeResult()
    if on_done:
        res.callbacks.append(on_done)
    rng = sim.rng
    c = SctpAssociationState(
        f"{client.addr}:{client.port}", f"{server.addr}:{server.port}",
        local_vtag=rng.randrange(1, 2**32), local_tsn=rng.randrange(1, 2**32),
        repair_capable=repair_capable, host=client.host,
    )
    state = {"retries": 0, "timer": None}

    def send(src, dst, vtag, ctype, body, handler):
        res.wire_messages += 1
        p = sctp_packet(src.name, dst.name, src.addr, dst.addr, src.port, dst.port, vtag, ctype, body)
        transmit(p, handler)

    def send_init():
        c.state = "cookie-wait"
        send(client, server, 0, CHUNK_INIT, struct.pack("!IHHI", c.local_vtag, c.out_streams, c.in_streams, c.local_tsn), server_rx)
        state["timer"] = sim.schedule(on_timeout, rto_us, target=client.name, label="sctp-t1-init")

    def on_timeout():
        if c.state == "established":
            return
        if state["retries"] >= max_retries:
            c.state = "closed"
            res._finish(sim.now, AssociationTimeout(f"no INIT-ACK from {server.name} after {max_retries} retries"))
            return
        state["retries"] += 1
        send_init()

    def server_rx(p):
        ctype, body = chunk_of(p)
        if ctype == CHUNK_INIT:
            peer_vtag, _, _, peer_tsn = struct.unpack("!IHHI", body)
            my_vtag = rng.randrange(1, 2**32)
            my_tsn = rng.randrange(1, 2**32)
            cookie = struct.pack("!IIII", my_vtag, peer_vtag, my_tsn, peer_tsn)
            send(server, client, peer_vtag, CHUNK_INIT_ACK, struct.pack("!IHHI", my_vtag, 2, 2, my_tsn) + cookie, client_rx)
        elif ctype == CHUNK_COOKIE_ECHO:
            my_vtag, peer_vtag, my_tsn, peer_tsn = struct.unpack("!IIII", body)
            if res.server is None:
                res.server = SctpAssociationState(
                    f"{server.addr}:{server.port}", f"{client.addr}:{client.port}", state="established",
                    local_vtag=my_vtag, peer_vtag=peer_vtag, local_tsn=my_tsn, peer_tsn=peer_tsn,
                    repair_capable=repair_capable, host=server.host,
                )
            send(server, client, peer_vtag, CHUNK_COOKIE_ACK, b"", client_rx)
        return "delivered"

    def client_rx(p):
        ctype, body = chunk_of(p)
        if ctype == CHUNK_INIT_ACK and c.state == "cookie-wait":
            peer_vtag, _, _, peer_tsn = struct.unpack("!IHHI", body[:12])
            c.peer_vtag, c.peer_tsn = peer_vtag, peer_tsn
            c.state = "cookie-echoed"
            sim.cancel(state["timer"])
            send(client, server, peer_vtag, CHUNK_COOKIE_ECHO, body[12:], server_rx)
        elif ctype == CHUNK_COOKIE_ACK and c.state == "cookie-echoed":
            c.state = "established"
            res.client = c
            res._finish(sim.now)
        return "delivered"

    send_init()
    return res


# --- TCP handshake ---------------------------------------------------------------

TCP_RTO_US = 1_000_000
TCP_MAX_SYN_RETRIES = 6
TCP_FLAGS = {"SYN": 0x02, "SYN-ACK": 0x12, "ACK": 0x10, "PSH-ACK": 0x18}


def tcp_packet(src, dst, src_addr, dst_addr, sport, dport, seq, ack, kind, payload=b""):
    hdr = struct.pack("!HHIIBBHHH", sport, dport, seq, ack, 5 << 4, TCP_FLAGS[kind], 65535, 0, 0)
    ip = ipv4_header(src_addr, dst_addr, IPPROTO["tcp"], len(hdr) + len(payload))
    return Packet(src, dst, "tcp", payload=payload, headers=(("ip", ip), ("tcp", hdr)), msgtype=kind if not payload else "DATA")


def tcp_connect(sim, transmit, client, server, repair_capable=True, rto_us=TCP_RTO_US,
                max_retries=TCP_MAX_SYN_RETRIES, on_done=None):
    """Three-way TCP handshake; mirrors :func:`sctp_associate`."""
    res = HandshakeResult()
    if on_done:
        res.callbacks.append(on_done)
    isn = sim.rng.randrange(0, 2**32)
    c = TcpSocketState(f"{client.addr}:{client.port}", f"{server.addr}:{server.port}", "syn-sent",
                       snd_nxt=(isn + 1) % 2**32, repair_capable=repair_capable, host=client.host)
    state = {"retries": 0, "timer": None}

    def send(src, dst, seq, ack, kind, handler):
        res.wire_messages += 1
        transmit(tcp_packet(src.name, dst.name, src.addr, dst.addr, src.port, dst.port, seq, ack, kind), handler)

    def send_syn():
        send(client, server, isn, 0, "SYN", server_rx)
        state["timer"] = sim.schedule(on_timeout, rto_us, target=client.name, label="tcp-syn-rto")

    def on_timeout():
        if c.state == "established":
            return
        if state["retries"] >= max_retries:
            c.state = "closed"
            res._finish(sim.now, AssociationTimeout(f"no SYN-ACK from {server.name}"))
            return
        state["retries"] += 1
        send_syn()

    def server_rx(p):
        seq, ack = struct.unpack_from("!II", p.headers[-1][1], 4)
        flags = p.headers[-1][1][13]
        if flags == TCP_FLAGS["SYN"]:
            siss = sim.rng.randrange(0, 2**32)
            res.server = TcpSocketState(f"{server.addr}:{server.port}", f"{client.addr}:{client.port}", "syn-received",
                                        snd_nxt=(siss + 1) % 2**32, rcv_nxt=(seq + 1) % 2**32,
                                        repair_capable=repair_capable, host=server.host)
            send(server, client, siss, (seq + 1) % 2**32, "SYN-ACK", client_rx)
        elif flags == TCP_FLAGS["ACK"] and res.server is not None:
            res.server.state = "established"
            res._finish(sim.now)
        return "delivered"

    def client_rx(p):
        seq, ack = struct.unpack_from("!II", p.headers[-1][1], 4)
        if c.state == "syn-sent":
            sim.cancel(state["timer"])
            c.state = "established"
            c.rcv_nxt = (seq + 1) % 2**32
            res.client = c
            send(client, server, c.snd_nxt, c.rcv_nxt, "ACK", server_rx)
        return "delivered"

    send_syn()
    return res


def setup_messages(trace):
    """Connection-setup packets (SYN or INIT) in a wire trace."""
    return [r for r in trace if r[7] in ("SYN", "INIT")]
