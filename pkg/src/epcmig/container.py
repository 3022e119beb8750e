"""Checkpoint/restore container migration.

The container is frozen when the checkpoint starts and stays unavailable
until the restore at the destination finishes, so downtime equals migration
time. Durations are size over calibrated per-flavor dump/restore rates; the
metadata copy runs over the management path at the copy tool's rate and pays
a fixed per-transfer overhead plus a number of protocol round trips.

With the GTP utility the SPGW's ``gtp0`` device and kernel tunnel list travel
in two extra sections and are re-created after restore. Without it the
restored SPGW has an empty tunnel list and every existing bearer is lost.
"""

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

from .blob import MetadataBlob, Section
from .epc import (
    FLAVORS,
    KINDS,
    PORTS,
    ADDRESSES,
    Gtp0Device,
    GtpTunnelEntry,
    GtpTunnelTable,
    MmeState,
    PageSet,
    SpgwSession,
    SpgwState,
    UeContext,
    VnfProcess,
    decode_app_state,
    decode_tunnels,
    encode_app_state,
    encode_tunnels,
)
from .errors import DecodeError, PreconditionError, RepairUnsupported, TopologyError
from .net import transfer_time
from .protocols import (
    SctpAssociationState,
    TcpSocketState,
    _pack_str,
    _Reader,
    sctp_repair_restore,
    tcp_repair_restore,
)

US = 1_000_000


@dataclass(frozen=True)
class ContainerOptions:
    repair_tcp: bool = True
    repair_sctp: bool = True
    gtp_utility: bool = True


@dataclass(frozen=True)
class ContainerMigrationBreakdown:
    checkpoint_us: int
    metadata_us: int
    restore_us: int
    blob_bytes: int
    utility_setup_us: int = 0

    @property
    def total_us(self):
        return self.checkpoint_us + self.metadata_us + self.restore_us

    @property
    def checkpoint_s(self):
        return self.checkpoint_us / US

    @property
    def metadata_transfer_s(self):
        return self.metadata_us / US

    @property
    def restore_s(self):
        return self.restore_us / US

    @property
    def total_s(self):
        return self.total_us / US


# --- blob building ------------------------------------------------------------------


def _records(items):
    out = [struct.pack("!I", len(items))]
    for flag, rec in items:
        out.append(struct.pack("!BI", flag, len(rec)) + rec)
    return b"".join(out)


def _read_records(r):
    (n,) = r.unpack("!I")
    out = []
    for _ in range(n):
        flag, length = r.unpack("!BI")
        out.append((bool(flag), r.take(length)))
    return out


def build_blob(vnf, options=ContainerOptions()):
    """Serialize a (frozen) process into its checkpoint sections."""
    pstree = (
        struct.pack("!IIB", vnf.pid, 1, KINDS.index(vnf.kind))
        + _pack_str(vnf.flavor.name)
        + _pack_str(vnf.host)
    )
    pages = struct.pack("!QQ", vnf.pages.resident, vnf.pages.wss)
    app = encode_app_state(vnf.app_state)
    pages += struct.pack("!I", len(app)) + app
    tcp = _records([
        (s.state != "established" or (options.repair_tcp and s.repair_capable), s.encode())
        for s in vnf.tcp_sockets
    ])
    sctp = struct.pack("!I", len(vnf.sctp_listeners)) + b"".join(_pack_str(a) for a in vnf.sctp_listeners)
    sctp += _records([(options.repair_sctp and a.repair_capable, a.encode()) for a in vnf.sctp_assocs])
    netns = _pack_str(vnf.addr) + struct.pack(f"!I{len(vnf.udp_ports)}H", len(vnf.udp_ports), *vnf.udp_ports)
    cgroup = struct.pack("!IIQ", vnf.flavor.vcpus, vnf.flavor.ram_mb, vnf.flavor.disk_gb)
    sections = [
        Section.build("PSTREE", pstree, vnf.core_bytes),
        Section.build("PAGES", pages, vnf.pages.resident_bytes),
        Section.build("SK-TCP", tcp),
        Section.build("SK-SCTP", sctp),
        Section.build("NETNS", netns),
        Section.build("CGROUP", cgroup),
    ]
    if options.gtp_utility and vnf.kind == "spgw" and vnf.gtp0 is not None:
        sections.append(Section.build("GTP-DEV", vnf.gtp0.encode()))
        sections.append(Section.build("GTP-TUN", encode_tunnels(vnf.tunnels or GtpTunnelTable())))
    return MetadataBlob(sections)


def rebuild_process(blob, dest_host):
    """Recreate the process described by ``blob`` on ``dest_host``.

    Established sockets are repaired in place; a socket checkpointed without
    repair support raises RepairUnsupported.
    """
    if isinstance(blob, (bytes, bytearray)):
        blob = MetadataBlob.from_bytes(blob)
    try:
        ps = _Reader(blob.get("PSTREE").body, "PSTREE")
        pg = _Reader(blob.get("PAGES").body, "PAGES")
        tc = _Reader(blob.get("SK-TCP").body, "SK-TCP")
        sc = _Reader(blob.get("SK-SCTP").body, "SK-SCTP")
        ns = _Reader(blob.get("NETNS").body, "NETNS")
        cg = _Reader(blob.get("CGROUP").body, "CGROUP")
    except KeyError as exc:
        raise DecodeError(f"blob lacks mandatory section {exc.args[0]}") from None
    pid, _ppid, kind_idx = ps.unpack("!IIB")
    flavor_name = ps.str()
    ps.str()  # source host
    ps.done()
    if kind_idx >= len(KINDS) or flavor_name not in FLAVORS:
        raise DecodeError("unknown process kind or flavor in PSTREE")
    kind = KINDS[kind_idx]
    resident, wss = pg.unpack("!QQ")
    (alen,) = pg.unpack("!I")
    app = decode_app_state(pg.take(alen))
    pg.done()
    ns_addr = ns.str()
    (nports,) = ns.unpack("!I")
    ports = list(ns.unpack(f"!{nports}H"))
    ns.done()
    cg.unpack("!IIQ")
    cg.done()
    pages = PageSet(resident, 0)
    pages.wss = wss
    vnf = VnfProcess(kind, FLAVORS[flavor_name], dest_host, ns_addr, pages, app,
                     core_bytes=blob.get("PSTREE").extent, pid=pid)
    vnf.udp_ports = ports
    for restorable, rec in _read_records(tc):
        st = TcpSocketState.decode(rec)
        if st.state == "established" and not restorable:
            raise RepairUnsupported(f"TCP socket {st.local}->{st.remote} was dumped without repair support")
        vnf.tcp_sockets.append(tcp_repair_restore(st, dest_host))
    tc.done()
    (nl,) = sc.unpack("!I")
    vnf.sctp_listeners = [sc.str() for _ in range(nl)]
    for restorable, rec in _read_records(sc):
        st = SctpAssociationState.decode(rec)
        if not restorable:
            raise RepairUnsupported(f"SCTP association {st.local}->{st.remote} was dumped without repair support")
        vnf.sctp_assocs.append(sctp_repair_restore(st, dest_host))
    sc.done()
    if blob.has("GTP-DEV") != blob.has("GTP-TUN"):
        raise DecodeError("GTP-DEV and GTP-TUN must travel together")
    if blob.has("GTP-DEV"):
        vnf.gtp0 = Gtp0Device.decode(blob.get("GTP-DEV").body)
        vnf.tunnels = decode_tunnels(blob.get("GTP-TUN").body)
        vnf.kernel_forwarding = True
    elif kind == "spgw":
        # the app brings up a bare gtp0; the kernel tunnel list is gone
        vnf.gtp0 = Gtp0Device(masquerade=False)
        vnf.tunnels = GtpTunnelTable()
        vnf.kernel_forwarding = True
    return vnf


# --- footprint sizing ---------------------------------------------------------------


def reference_process(vnf, profile):
    """``vnf`` as it looks after warmup with the profile's reference UE count."""
    ref = VnfProcess(vnf.kind, vnf.flavor, vnf.host, vnf.addr, vnf.pages, vnf.app_state, pid=vnf.pid)
    ref.udp_ports = list(vnf.udp_ports)
    ref.sctp_listeners = list(vnf.sctp_listeners)
    n = profile.reference_ues
    hss = f"{ADDRESSES['hss']}:{PORTS['diameter']}"
    mme = f"{ADDRESSES['mme']}:{PORTS['s1ap']}"
    cu = f"{ADDRESSES['cu']}:{PORTS['s1ap']}"
    if vnf.kind == "hss":
        ref.tcp_sockets = list(vnf.tcp_sockets) + [TcpSocketState(hss, mme, "established", host=vnf.host)]
    elif vnf.kind == "mme":
        ref.tcp_sockets = [TcpSocketState(mme, hss, "established", host=vnf.host)]
        ref.sctp_assocs = [SctpAssociationState(mme, cu, state="established", host=vnf.host)]
        ref.app_state = MmeState({i: UeContext(i, 0, 0, 0, 1, 1, "0.0.0.0") for i in range(1, n + 1)}, n + 1)
    else:
        ref.app_state = SpgwState({i: SpgwSession(i, 0, "0.0.0.0", 1, 1, "0.0.0.0") for i in range(1, n + 1)}, n + 2)
        ref.gtp0 = Gtp0Device()
        ref.tunnels = GtpTunnelTable(GtpTunnelEntry(i, i, i, "0.0.0.0", "0.0.0.0") for i in range(1, n + 1))
    return ref


def footprint_core_bytes(vnf, profile, core=None):
    """Core-image extent that makes the reference checkpoint exactly metadata_mb long."""
    target = profile.container_for(vnf.kind, vnf.flavor.name).metadata_bytes
    ref = reference_process(vnf, profile)
    ref.core_bytes = 0
    used = build_blob(ref).total_bytes
    if used > target:
        raise PreconditionError(f"{vnf.kind} state alone exceeds the calibrated metadata size")
    return target - used


# --- phase durations --------------------------------------------------------------------


def _rate_us(nbytes, rate):
    return math.ceil(Fraction(nbytes * US) / Fraction(rate))


def checkpoint_duration(blob_bytes, kind, flavor_name, profile):
    c = profile.container_for(kind, flavor_name)
    return _rate_us(blob_bytes, c.dump_rate) + c.dump_overhead_us


def restore_duration(blob_bytes, kind, flavor_name, profile):
    c = profile.container_for(kind, flavor_name)
    return _rate_us(blob_bytes, c.restore_rate) + c.restore_overhead_us


def transfer_metadata(nbytes, path, profile):
    """Copy time of a checkpoint over the management path (us)."""
    if path is None:
        raise TopologyError("no management path to the destination")
    if isinstance(nbytes, MetadataBlob):
        nbytes = nbytes.total_bytes
    return (transfer_time(nbytes, path, rate_cap=profile.copy_rate)
            + profile.copy_overhead_us + profile.copy_round_trips * path.rtt_us)


def checkpoint(vnf, options, profile):
    """Freeze ``vnf`` and dump it. Returns (blob, duration_us)."""
    if not vnf.running:
        raise PreconditionError(f"{vnf.kind} is {vnf.state}, cannot checkpoint")
    vnf.freeze()
    blob = build_blob(vnf, options)
    return blob, checkpoint_duration(blob.total_bytes, vnf.kind, vnf.flavor.name, profile)


def restore(blob, dest_host, profile):
    """Verify and rebuild ``blob`` on ``dest_host``. Returns (vnf, duration_us)."""
    data = blob.to_bytes() if isinstance(blob, MetadataBlob) else bytes(blob)
    parsed = MetadataBlob.from_bytes(data)
    vnf = rebuild_process(parsed, dest_host)
    return vnf, restore_duration(parsed.total_bytes, vnf.kind, vnf.flavor.name, profile)


# --- engine -------------------------------------------------------------------------------


class ContainerMigration:
    """Drives checkpoint, metadata copy and restore on the simulator."""

    def __init__(self, core, kind, dest_host, options=ContainerOptions(), on_done=None):
        self.core = core
        self.sim = core.sim
        self.kind = kind
        self.dest = dest_host
        self.options = options
        self.on_done = on_done
        self.blob = None
        self.started_at = None
        self.breakdown = None
        self.recovery_at = None
        self.outage = None

    def start(self):
        core, sim = self.core, self.sim
        vnf = core.vnfs[self.kind]
        self.source = vnf
        self.started_at = sim.now
        core.mark_down(self.kind, sim.now)
        self.blob, self.ckpt_us = checkpoint(vnf, self.options, core.profile)
        sim.schedule(self._transfer, self.ckpt_us, target=self.kind, label="checkpoint-done")

    def _transfer(self):
        core = self.core
        path = core.fabric.management_path(self.source.host, self.dest)
        self.meta_us = transfer_metadata(self.blob, path, core.profile)
        core.fabric.bulk("mgmt", self.source.host, self.dest, self.blob.total_bytes, msgtype="checkpoint")
        self.sim.schedule(self._restore, self.meta_us, target=self.kind, label="metadata-done")

    def _restore(self):
        core = self.core
        core.reserve(self.dest, self.source.flavor)
        self.new, self.restore_us = restore(self.blob, self.dest, core.profile)
        self.new.state = "frozen"
        self.sim.schedule(self._finish, self.restore_us, target=self.kind, label="restore-done")

    def _finish(self):
        core, sim = self.core, self.sim
        old, new = self.source, self.new
        now = sim.now
        old.destroy()
        core.release(old.host, old.flavor)
        new.state = "running"
        new.uplink_active = old.uplink_active
        new.disk_image_bytes = old.disk_image_bytes
        utility_us = 0
        if new.kind == "spgw" and self.blob.has("GTP-DEV"):
            utility_us = core.profile.container_for(new.kind, new.flavor.name).utility_setup_us
        new.user_ready_at = now + utility_us
        core.replace_instance(self.kind, new)
        core.fabric.move(self.kind, self.dest)
        core.mark_up(self.kind, now)
        core.flush(self.kind)
        self.breakdown = ContainerMigrationBreakdown(self.ckpt_us, self.meta_us, self.restore_us,
                                                     self.blob.total_bytes, utility_us)
        self.outage = (self.started_at, now)
        self.recovery_at = now + utility_us
        if self.on_done:
            self.on_done(self)


def migrate_container(core, kind, dest_host, options=ContainerOptions(), on_done=None):
    """Start a container migration now; returns the engine (breakdown filled on completion)."""
    m = ContainerMigration(core, kind, dest_host, options, on_done)
    m.start()
    return m
