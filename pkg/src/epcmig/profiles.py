"""Calibration profiles: testbed constants read from measured breakdowns.

Profiles are ``section.key = value`` files. Every value carries a provenance
note after ``|``. Rates are held as exact rationals (bytes per second) so that
phase durations are reproducible to the microsecond.
"""

import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .expect import ExpectedRecord, parse_tolerance
from .kv import KvDoc
from .sim import seconds

KINDS = ("hss", "mme", "spgw")
FLAVOR_NAMES = ("small", "medium")

MB = 10**6
GB = 10**9
KIB = 1024
MIB = 1024 * 1024
GBPS = 10**9

PROFILE_PATH_ENV = "EPCMIG_PROFILE_PATH"
BUNDLED_DIR = Path(__file__).parent / "data" / "profiles"


@dataclass(frozen=True)
class PathProfile:
    link_rates_bps: tuple
    hop_latency_us: int
    efficiency: Fraction
    lightpath: bool


@dataclass(frozen=True)
class VnfKindProfile:
    dirty_pages_per_s: int
    uplink_dirty_pages_per_s: int
    wss_pages: int


@dataclass(frozen=True)
class ContainerKindProfile:
    metadata_bytes: int
    dump_rate: Fraction
    restore_rate: Fraction
    dump_overhead_us: int
    restore_overhead_us: int
    utility_setup_us: int


@dataclass(frozen=True)
class VmKindProfile:
    load_bytes: int
    ram_bytes: int
    pre_live_us: int
    live_sync_us: int
    db_update_us: int
    port_binding_us: int


@dataclass(frozen=True)
class CalibrationProfile:
    name: str
    description: str
    propagation_us_per_km: int
    mgmt: PathProfile
    tenant: PathProfile
    ran: PathProfile
    lightpath_setup_us: int
    firewall: bool
    floating_ip: bool
    rarp_delay_us: int
    vpn_reroute_delay_us: int
    geo_delay_us: int
    gtp_settle_us: int
    bridge_reconfig_us: int
    host_vcpus: int
    host_ram_mib: int
    host_disk_gb: int
    hosts_per_rack: int
    subscribers: int
    ue_reattach_delay_us: int
    reference_ues: int
    vnf: dict
    copy_rate: Fraction
    copy_overhead_us: int
    copy_round_trips: int
    container: dict
    vm_chunk_bytes: int
    vm_max_iterations: int
    vm_stop_threshold_bytes: int
    vm: dict
    expectations: tuple = ()
    provenance: dict = field(default_factory=dict, compare=False, repr=False)
    source: str = field(default="", compare=False)

    def container_for(self, kind, flavor):
        return self.container[(kind, flavor)]

    def vm_for(self, kind, flavor):
        return self.vm[(kind, flavor)]


def _path(doc, prefix):
    rates = doc.nums(f"{prefix}.link_rates_gbps", positive=True)
    if not rates:
        raise ConfigError("at least one hop required", f"{prefix}.link_rates_gbps")
    eff = doc.num(f"{prefix}.efficiency", positive=True)
    if eff > 1:
        raise ConfigError("must be <= 1", f"{prefix}.efficiency")
    return PathProfile(
        link_rates_bps=tuple(int(r * GBPS) for r in rates),
        hop_latency_us=doc.int("net.hop_latency_us"),
        efficiency=eff,
        lightpath=doc.bool(f"{prefix}.lightpath", default=False),
    )


def _us(doc, key, default=None):
    return seconds(doc.num(key, default, nonnegative=True))


def parse_profile(doc):
    name = doc.str("profile.name")
    vnf = {}
    container = {}
    vm = {}
    for kind in KINDS:
        vnf[kind] = VnfKindProfile(
            dirty_pages_per_s=doc.int(f"vnf.{kind}.dirty_pages_per_s"),
            uplink_dirty_pages_per_s=doc.int(f"vnf.{kind}.uplink_dirty_pages_per_s", 0),
            wss_pages=doc.int(f"vnf.{kind}.wss_pages"),
        )
        for flavor in FLAVOR_NAMES:
            c = f"container.{kind}.{flavor}"
            container[(kind, flavor)] = ContainerKindProfile(
                metadata_bytes=int(doc.num(f"{c}.metadata_mb", positive=True) * MB),
                dump_rate=doc.num(f"{c}.dump_rate_mb_s", positive=True) * MB,
                restore_rate=doc.num(f"{c}.restore_rate_mb_s", positive=True) * MB,
                dump_overhead_us=_us(doc, f"container.{kind}.dump_overhead_s", 0),
                restore_overhead_us=_us(doc, f"container.{kind}.restore_overhead_s", 0),
                utility_setup_us=_us(doc, f"{c}.utility_setup_s", 0),
            )
            v = f"vm.{kind}.{flavor}"
            load = int(doc.num(f"{v}.load_gb", positive=True) * GB)
            ram = int(doc.num(f"{v}.ram_mib", positive=True) * MIB)
            if ram >= load:
                raise ConfigError("resident RAM must be below the migration load", f"{v}.ram_mib")
            vm[(kind, flavor)] = VmKindProfile(
                load_bytes=load,
                ram_bytes=ram,
                pre_live_us=_us(doc, f"vm.{kind}.pre_live_s"),
                live_sync_us=_us(doc, f"vm.{kind}.live_sync_s"),
                db_update_us=_us(doc, f"vm.{kind}.db_update_s"),
                port_binding_us=_us(doc, f"vm.{kind}.port_binding_s"),
            )
    expectations = []
    for key in doc.keys("expect."):
        rel, _, metric = key[len("expect."):].rpartition(".")
        if not rel or not metric:
            raise ConfigError("expected expect.<scenario>.<metric>", key)
        entry = doc.entries[key]
        value, tol, tol_text = parse_tolerance(entry.raw, key)
        if not entry.note:
            raise ConfigError("expectation lacks a source note", key)
        doc._used.add(key)
        expectations.append(ExpectedRecord(f"{name}-{rel}", metric, value, tol, tol_text, entry.note))
    profile = CalibrationProfile(
        name=name,
        description=doc.str("profile.description", ""),
        propagation_us_per_km=doc.int("net.propagation_us_per_km"),
        mgmt=_path(doc, "net.mgmt"),
        tenant=_path(doc, "net.tenant"),
        ran=_path(doc, "net.ran"),
        lightpath_setup_us=_us(doc, "net.lightpath_setup_s", 0),
        firewall=doc.bool("net.firewall"),
        floating_ip=doc.bool("net.floating_ip"),
        rarp_delay_us=_us(doc, "net.rarp_delay_s"),
        vpn_reroute_delay_us=_us(doc, "net.vpn_reroute_delay_s"),
        geo_delay_us=_us(doc, "net.geo_delay_s", 0),
        gtp_settle_us=_us(doc, "net.gtp_settle_s"),
        bridge_reconfig_us=_us(doc, "vm.bridge_reconfig_s"),
        host_vcpus=doc.int("host.vcpus"),
        host_ram_mib=doc.int("host.ram_mib"),
        host_disk_gb=doc.int("host.disk_gb"),
        hosts_per_rack=doc.int("host.per_rack"),
        subscribers=doc.int("vnf.hss.subscribers"),
        ue_reattach_delay_us=_us(doc, "vnf.ue_reattach_delay_s", 0),
        reference_ues=doc.int("vnf.reference_ues"),
        vnf=vnf,
        copy_rate=doc.num("container.copy_rate_mb_s", positive=True) * MB,
        copy_overhead_us=_us(doc, "container.copy_overhead_s"),
        copy_round_trips=doc.int("container.copy_round_trips"),
        container=container,
        vm_chunk_bytes=doc.int("vm.chunk_kib") * KIB,
        vm_max_iterations=doc.int("vm.max_iterations"),
        vm_stop_threshold_bytes=int(doc.num("vm.stop_threshold_mib", nonnegative=True) * MIB),
        vm=vm,
        expectations=tuple(sorted(expectations, key=lambda r: (r.scenario_id, r.metric))),
        provenance={k: e.note for k, e in doc.entries.items()},
        source=doc.source,
    )
    if profile.vm_chunk_bytes <= 0:
        raise ConfigError("must be > 0", "vm.chunk_kib")
    if profile.vm_max_iterations < 1:
        raise ConfigError("must be >= 1", "vm.max_iterations")
    leftover = doc.unused()
    if leftover:
        raise ConfigError("unknown key", leftover[0])
    return profile


def search_path():
    dirs = [Path(p) for p in os.environ.get(PROFILE_PATH_ENV, "").split(os.pathsep) if p]
    dirs.append(BUNDLED_DIR)
    return dirs


def find_profile(name):
    candidate = Path(name)
    if candidate.suffix == ".profile" and candidate.is_file():
        return candidate
    for d in search_path():
        p = d / f"{name}.profile"
        if p.is_file():
            return p
    raise ConfigError(f"unknown profile {name!r} (searched {', '.join(map(str, search_path()))})")


_cache = {}


def load_profile(name):
    path = find_profile(name)
    key = (str(path.resolve()), path.stat().st_mtime_ns)
    if key not in _cache:
        _cache[key] = parse_profile(KvDoc.load(path))
    return _cache[key]


def list_profiles():
    seen = {}
    for d in search_path():
        if d.is_dir():
            for p in sorted(d.glob("*.profile")):
                seen.setdefault(p.stem, p)
    return seen
