"""Scenario files.

Same ``section.key = value`` syntax as profiles. Scenario keys may hold a
comma-separated list, in which case the file expands to the cartesian
product; an explicitly empty list gives an empty set. ``overlay = auto`` picks floating-ip for medium VMs on profiles
that offer floating IPs and the VPN everywhere else.
"""

import itertools
from fractions import Fraction

from .errors import ConfigError
from .kv import KvDoc, parse_number
from .orchestrator import MigrationOptions, ProbeConfig, Scenario
from .profiles import MIB, load_profile
from .sim import seconds

GRID_KEYS = ("kind", "virt", "flavor", "length_km", "overlay")


def auto_overlay(profile, virt, flavor):
    if virt == "vm" and flavor == "medium" and profile.floating_ip:
        return "floating-ip"
    return "vpn"


def _opt_int(doc, key):
    return doc.int(key) if key in doc else None


def _options(doc):
    thr = doc.num("options.stop_threshold_mib", nonnegative=True) if "options.stop_threshold_mib" in doc else None
    attach = doc.num("options.new_ue_attach_s", nonnegative=True) if "options.new_ue_attach_s" in doc else None
    return MigrationOptions(
        repair_tcp=doc.bool("options.repair_tcp", True),
        repair_sctp=doc.bool("options.repair_sctp", True),
        gtp_utility=doc.bool("options.gtp_utility", True),
        max_iterations=_opt_int(doc, "options.max_iterations"),
        stop_threshold_bytes=None if thr is None else int(thr * MIB),
        ue_count=doc.int("options.ue_count", 1),
        uplink_payload=doc.int("options.uplink_payload", 84),
        new_ue_attach_us=None if attach is None else seconds(attach),
    )


def _probes(doc):
    d = ProbeConfig()

    def ms(key, default_us):
        return seconds(doc.num(key, Fraction(default_us, 1000), positive=True) / 1000)

    def s(key, default_us):
        return seconds(doc.num(key, Fraction(default_us, 1_000_000), nonnegative=True))

    return ProbeConfig(
        downtime_interval_us=ms("probes.downtime_interval_ms", d.downtime_interval_us),
        srt_interval_us=ms("probes.srt_interval_ms", d.srt_interval_us),
        trigger_us=s("probes.trigger_s", d.trigger_us),
        lead_us=s("probes.lead_s", d.lead_us),
        tail_us=s("probes.tail_s", d.tail_us),
    )


def parse_scenarios(doc, profile=None):
    """Expand a scenario document into Scenario objects.

    ``profile`` (a name or a CalibrationProfile) overrides ``scenario.profile``.
    """
    if profile is None:
        profile = doc.str("scenario.profile", "") or None
        if profile is None:
            raise ConfigError("no profile given on the command line or in the file", "scenario.profile")
    elif "scenario.profile" in doc:
        doc.str("scenario.profile")
    prof = load_profile(profile) if isinstance(profile, str) else profile
    axes = {
        "kind": doc.list("scenario.kind"),
        "virt": doc.list("scenario.virt"),
        "flavor": doc.list("scenario.flavor", ["small"]),
        "length_km": [parse_number(v, "scenario.length_km") for v in doc.list("scenario.length_km", ["0.005"])],
        "overlay": doc.list("scenario.overlay", ["auto"]),
    }
    seed = doc.int("scenario.seed", 0)
    options = _options(doc)
    probes = _probes(doc)
    hosts = _opt_int(doc, "topology.hosts_per_rack")
    firewall = doc.bool("topology.firewall") if "topology.firewall" in doc else None
    leftover = doc.unused()
    if leftover:
        raise ConfigError("unknown key", leftover[0])
    out = []
    seen = set()
    for kind, virt, flavor, length, overlay in itertools.product(*axes.values()):
        if overlay == "auto":
            overlay = auto_overlay(prof, virt, flavor)
        sc = Scenario(prof.name, kind, virt, flavor, length, overlay, options, probes, seed, hosts, firewall)
        if sc.scenario_id in seen:
            continue
        seen.add(sc.scenario_id)
        out.append(sc)
    return prof, out


def load_scenarios(path, profile=None):
    return parse_scenarios(KvDoc.load(path), profile)
