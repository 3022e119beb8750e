"""Scenario runner: provision the lightpath, migrate, probe and report.

A run deploys HSS, MME and SPGW on rack 1, brings up the HSS-MME Diameter
connection and the CU-MME S1 association, attaches the UEs and starts their
uplink pings. At the trigger time the management lightpath to rack 2 is
provisioned and the selected engine migrates one VNF. Two probe streams
measure the outcome: 1 ms pings of the VNF address (downtime) and the UE's
100 ms GTP pings (service recovery time).
"""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .container import ContainerOptions, ContainerMigration
from .epc import KINDS, EpcCore
from .errors import ConfigError, SimulationError
from .kernels import scan_probes
from .net import OVERLAYS, Fabric, LightpathSpec, Topology, format_wire_trace
from .profiles import FLAVOR_NAMES, load_profile
from .sim import Simulator, format_event_trace
from .vm import VmMigration, VmOptions

VIRTS = ("container", "vm")
SOURCE_HOSTS = {"hss": "rack1-h1", "mme": "rack1-h2", "spgw": "rack1-h3"}
DEST_HOST = "rack2-h1"
US = 1_000_000


@dataclass(frozen=True)
class ProbeConfig:
    downtime_interval_us: int = 1_000
    srt_interval_us: int = 100_000
    trigger_us: int = 5_000_000
    lead_us: int = 1_000_000
    tail_us: int = 30_000_000

    def __post_init__(self):
        for name in ("downtime_interval_us", "srt_interval_us"):
            if getattr(self, name) <= 0:
                raise ConfigError("probe interval must be positive", f"probes.{name}")
        if self.lead_us > self.trigger_us:
            raise ConfigError("probes cannot start before time 0", "probes.lead_s")


@dataclass(frozen=True)
class MigrationOptions:
    repair_tcp: bool = True
    repair_sctp: bool = True
    gtp_utility: bool = True
    max_iterations: int = None
    stop_threshold_bytes: int = None
    ue_count: int = 1
    uplink_payload: int = 84
    new_ue_attach_us: int = None


def length_label(length_km):
    return "short" if length_km < 1 else f"{Fraction(length_km).limit_denominator(1000)}km".replace("/", "_")


@dataclass(frozen=True)
class Scenario:
    profile: str
    kind: str
    virt: str
    flavor: str = "small"
    length_km: Fraction = Fraction(5, 1000)
    overlay: str = "vpn"
    options: MigrationOptions = MigrationOptions()
    probes: ProbeConfig = ProbeConfig()
    seed: int = 0
    hosts_per_rack: int = None
    firewall: bool = None

    def __post_init__(self):
        object.__setattr__(self, "length_km", Fraction(self.length_km))
        self.validate()

    def validate(self):
        checks = [
            ("scenario.kind", self.kind in KINDS, f"must be one of {KINDS}"),
            ("scenario.virt", self.virt in VIRTS, f"must be one of {VIRTS}"),
            ("scenario.flavor", self.flavor in FLAVOR_NAMES, f"must be one of {FLAVOR_NAMES}"),
            ("scenario.overlay", self.overlay in OVERLAYS, f"must be one of {OVERLAYS}"),
            ("scenario.length_km", self.length_km >= 0, "must be >= 0"),
            ("options.ue_count", self.options.ue_count >= 1, "at least one UE is needed"),
            ("options.uplink_payload", self.options.uplink_payload >= 28, "must hold IP and UDP headers"),
        ]
        bad = [ConfigError(msg, path) for path, ok, msg in checks if not ok]
        if bad:
            err = ConfigError("; ".join(str(e) for e in bad))
            err.path = bad[0].path
            raise err

    @property
    def scenario_id(self):
        base = f"{self.profile}-{self.kind}-{self.virt}-{self.flavor}-{length_label(self.length_km)}-{self.overlay}"
        o = self.options
        tags = [t for t, off in (("notcprepair", not o.repair_tcp), ("nosctprepair", not o.repair_sctp),
                                 ("noutil", not o.gtp_utility)) if off]
        return "-".join([base] + tags)


CSV_COLUMNS = (
    "scenario_id", "kind", "virt", "flavor", "length_km", "overlay",
    "migration_s", "downtime_s", "load_bytes", "srt_s",
    "checkpoint_s", "metadata_s", "restore_s", "pre_live_s", "live_s", "post_live_s", "iterations",
)
ALIASES = {
    "migration_time_s": "migration_s",
    "total_s": "migration_s",
    "network_load_bytes": "load_bytes",
    "ue_srt_s": "srt_s",
    "metadata_transfer_s": "metadata_s",
}


@dataclass
class MetricsReport:
    scenario_id: str
    kind: str
    virt: str
    flavor: str
    length_km: Fraction
    overlay: str
    migration_time_s: float
    downtime_s: float
    network_load_bytes: int
    ue_srt_s: float
    breakdown: dict
    engine_outage_s: float = 0.0
    new_ue_attach_s: float = None
    ue_reattaches: int = 0
    counters: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)
    wire_trace: str = None
    event_trace: str = None

    def values(self):
        out = {
            "migration_s": self.migration_time_s,
            "downtime_s": self.downtime_s,
            "load_bytes": self.network_load_bytes,
            "srt_s": self.ue_srt_s,
            "engine_outage_s": self.engine_outage_s,
            "new_ue_attach_s": self.new_ue_attach_s,
            "ue_reattaches": self.ue_reattaches,
        }
        out.update(self.breakdown)
        return out

    def metric(self, name):
        return self.values().get(ALIASES.get(name, name))

    def csv_row(self):
        vals = self.values()
        row = {
            "scenario_id": self.scenario_id,
            "kind": self.kind,
            "virt": self.virt,
            "flavor": self.flavor,
            "length_km": _fmt(float(self.length_km), 3),
            "overlay": self.overlay,
        }
        for col in CSV_COLUMNS[6:]:
            v = vals.get(col)
            if col in ("load_bytes", "iterations"):
                row[col] = "" if v is None else str(int(v))
            else:
                row[col] = "" if v is None else _fmt(v, 6)
        return row


def _fmt(v, digits):
    if v == math.inf:
        return "timeout"
    return f"{v:.{digits}f}"


# --- measurement ---------------------------------------------------------------------


def measure_downtime(outages, start_us, stop_us, interval_us):
    """Longest run of unanswered pings, first miss to first answer, in us.

    ``outages`` are [down, up) windows of the target; an open window (``up`` is
    None) never recovers and yields ``math.inf``.
    """
    if interval_us <= 0:
        raise ValueError("probe interval must be positive")
    starts, ends = [], []
    for down, up in outages:
        if down < start_us or (up is not None and up > stop_us):
            raise SimulationError("probe stream does not span the outage window")
        starts.append(down)
        ends.append(stop_us + interval_us if up is None else up)
    _, _, runs = scan_probes(start_us, stop_us, interval_us, starts, ends)
    return max((fa - fm if fa >= 0 else math.inf for fm, fa in runs), default=0)


def measure_ue_srt(stream, start_us=0):
    """First missed to first answered UE ping after ``start_us`` (longest such gap)."""
    worst = 0
    missed_at = None
    for t in stream.sent:
        if t < start_us:
            continue
        ok = t in stream.answered
        if not ok and missed_at is None:
            missed_at = t
        elif ok and missed_at is not None:
            worst = max(worst, t - missed_at)
            missed_at = None
    if missed_at is not None:
        return math.inf
    return worst


# --- run -------------------------------------------------------------------------------------


class _Run:
    def __init__(self, scenario, profile, trace):
        self.sc = scenario
        self.profile = profile
        self.sim = Simulator(seed=scenario.seed, trace=[] if trace else None)
        self.wire = [] if trace else None
        topo = Topology(
            hosts_per_rack=scenario.hosts_per_rack or profile.hosts_per_rack,
            firewall=profile.firewall if scenario.firewall is None else scenario.firewall,
            overlay=scenario.overlay,
            tenant_length_km=scenario.length_km,
        )
        self.fabric = Fabric(self.sim, profile, topo, self.wire)
        o = scenario.options
        self.core = EpcCore(self.sim, self.fabric, profile, o.repair_tcp, o.repair_sctp, o.gtp_utility)
        self.ready = False
        self.error = None
        self.engine = None
        self.new_attach = None
        self.streams = []

    def deploy(self):
        for kind in KINDS:
            fl = self.sc.flavor if kind == self.sc.kind else "small"
            self.core.spawn_vnf(kind, fl, SOURCE_HOSTS[kind])
        self.core.connect_hss(on_done=self._tcp_up)

    def _fail(self, what, res):
        self.error = f"{what}: {res.error}"

    def _tcp_up(self, res):
        if not res.ok:
            return self._fail("HSS connection", res)
        self.core.associate_cu(on_done=self._sctp_up)

    def _sctp_up(self, res):
        if not res.ok:
            return self._fail("S1 association", res)
        self._attach(1)

    def _attach(self, ue_id):
        def done(res):
            if not res.ok:
                return self._fail(f"attach of UE {ue_id}", res)
            if ue_id < self.sc.options.ue_count:
                self._attach(ue_id + 1)
            else:
                for u in range(1, self.sc.options.ue_count + 1):
                    self.streams.append(self.core.generate_uplink(u, self.sc.options.uplink_payload,
                                                                  self.sc.probes.srt_interval_us))
                self.ready = True

        self.core.attach_ue(ue_id, on_done=done)

    def trigger(self):
        p = self.profile
        sim = self.sim
        start = sim.now
        self.trigger_us = start
        # reference points for the repair and tunnel-continuity checks
        self.cu_record_at_trigger = self.core.cu_assoc.encode()
        tun = self.core.vnfs["spgw"].tunnels
        self.teids_at_trigger = frozenset(e.local_teid for e in tun.entries()) if tun else frozenset()
        if p.mgmt.lightpath:
            rates = p.mgmt.link_rates_bps
            spec = LightpathSpec(("rack1", "rack2"), self.sc.length_km, rates[len(rates) // 2], "management")
            start = self.fabric.provision_lightpath(spec).usable_at
        sim.schedule_at(start, self._start_engine, target="orchestrator", label="migrate")
        if self.sc.options.new_ue_attach_us is not None:
            sim.schedule(self._new_ue, self.sc.options.new_ue_attach_us, target="orchestrator", label="new-ue")

    def _new_ue(self):
        self.new_attach = self.core.attach_ue(self.sc.options.ue_count + 1)

    def _start_engine(self):
        sc = self.sc
        o = sc.options
        if sc.virt == "container":
            self.engine = ContainerMigration(self.core, sc.kind, DEST_HOST,
                                             ContainerOptions(o.repair_tcp, o.repair_sctp, o.gtp_utility),
                                             on_done=self._done)
        else:
            control = self.core.mme_overlay if sc.kind == "mme" else sc.overlay
            self.engine = VmMigration(self.core, sc.kind, DEST_HOST,
                                      VmOptions(o.max_iterations, o.stop_threshold_bytes, sc.overlay, control),
                                      on_done=self._done)
        self.engine.start()

    def _done(self, engine):
        stop = engine.recovery_at + self.sc.probes.tail_us
        for s in self.streams:
            s.stop_at = stop
        self.probe_stop = stop


def run_scenario(scenario, profile=None, trace=False):
    """Execute one scenario and return its MetricsReport."""
    profile = profile or load_profile(scenario.profile)
    if profile.name != scenario.profile:
        scenario = replace(scenario, profile=profile.name)
    if scenario.overlay == "floating-ip" and not profile.floating_ip:
        raise ConfigError(f"profile {profile.name} has no floating-IP network", "scenario.overlay")
    r = _Run(scenario, profile, trace)
    r.deploy()
    pc = scenario.probes
    r.sim.run_until(pc.trigger_us)
    if not r.ready:
        raise SimulationError(f"warmup incomplete at trigger: {r.error or 'still in progress'}")
    trigger = r.sim.now
    r.trigger()
    r.sim.run_to_completion()
    eng = r.engine
    if eng is None or eng.breakdown is None or eng.recovery_at is None:
        raise SimulationError("migration did not complete")
    probe_start = trigger - pc.lead_us
    downtime_us = measure_downtime(r.core.outages[scenario.kind], probe_start, r.probe_stop, pc.downtime_interval_us)
    srt_us = measure_ue_srt(r.streams[0], probe_start)
    b = eng.breakdown
    if scenario.virt == "container":
        breakdown = {
            "checkpoint_s": b.checkpoint_s,
            "metadata_s": b.metadata_transfer_s,
            "restore_s": b.restore_s,
        }
        load = b.blob_bytes
    else:
        breakdown = {
            "pre_live_s": b.pre_live_s,
            "live_s": b.live_s,
            "post_live_s": b.post_live_s,
            "iterations": b.iterations,
            "stop_copy_s": b.stop_copy_us / US,
        }
        load = b.bytes_moved
    if r.fabric.link_bytes.get("mgmt", 0) != load:
        raise SimulationError("management-link byte count disagrees with the engine")
    c = r.fabric.counters
    report = MetricsReport(
        scenario_id=scenario.scenario_id,
        kind=scenario.kind,
        virt=scenario.virt,
        flavor=scenario.flavor,
        length_km=scenario.length_km,
        overlay=scenario.overlay,
        migration_time_s=b.total_us / US,
        downtime_s=downtime_us / US,
        network_load_bytes=load,
        ue_srt_s=srt_us / US,
        breakdown=breakdown,
        engine_outage_s=(eng.outage[1] - eng.outage[0]) / US,
        new_ue_attach_s=None if r.new_attach is None or r.new_attach.delay_us is None else r.new_attach.delay_us / US,
        ue_reattaches=sum(s.reattaches for s in r.streams),
        counters={
            "injected": c.injected,
            "delivered": c.delivered,
            "fw_dropped": c.fw_dropped,
            "teid_dropped": c.teid_dropped,
            "unreachable": c.unreachable,
        },
        probes={
            "start_us": probe_start,
            "stop_us": r.probe_stop,
            "ue_sent": len(r.streams[0].sent),
            "ue_answered": len(r.streams[0].answered),
        },
    )
    if trace:
        report.wire_trace = format_wire_trace(r.wire)
        report.event_trace = format_event_trace(r.sim.trace)
    report._run = r
    return report


def warm_checkpoint(profile, kind, flavor="small", options=MigrationOptions(), seed=0):
    """Bring up the deployment, then checkpoint ``kind`` as the engine would."""
    from .container import build_blob

    profile = load_profile(profile) if isinstance(profile, str) else profile
    sc = Scenario(profile.name, kind, "container", flavor, options=options, seed=seed)
    r = _Run(sc, profile, trace=False)
    r.deploy()
    r.sim.run_until(sc.probes.trigger_us)
    if not r.ready:
        raise SimulationError(f"warmup incomplete: {r.error or 'still in progress'}")
    vnf = r.core.vnfs[kind]
    vnf.freeze()
    return build_blob(vnf, ContainerOptions(options.repair_tcp, options.repair_sctp, options.gtp_utility))
