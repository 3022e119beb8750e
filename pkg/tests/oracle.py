"""Independent analytic model of migration time.

Reads the profile file with its own parser and recomputes every phase from
the raw constants with integer microsecond arithmetic. Nothing here imports
the simulator, so agreement with the engines is a real cross-check.
"""

import math
from fractions import Fraction
from pathlib import Path

PROFILE_DIR = Path(__file__).resolve().parent.parent / "src" / "epcmig" / "data" / "profiles"
PAGE = 4096
SHORT_KM = Fraction(5, 1000)


def _num(text):
    text = text.strip()
    if "/" in text:
        a, b = text.split("/")
        return Fraction(a.strip()) / Fraction(b.strip())
    return Fraction(text)


def read_profile(name):
    raw = {}
    for line in (PROFILE_DIR / f"{name}.profile").read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, value = line.split("=", 1)
        raw[key.strip()] = value.split("|", 1)[0].strip()
    return raw


def us(value):
    return math.floor(Fraction(value) * 1_000_000 + Fraction(1, 2))


class Oracle:
    def __init__(self, name):
        self.raw = read_profile(name)

    def n(self, key, default=None):
        if key not in self.raw:
            return Fraction(default)
        return _num(self.raw[key])

    def rates(self, key):
        return [_num(x) * 10**9 for x in self.raw[key].split(",")]

    # management path

    def mgmt(self, length_km):
        rates = self.rates("net.mgmt.link_rates_gbps")
        hop = int(self.n("net.hop_latency_us"))
        lightpath = self.raw.get("net.mgmt.lightpath", "false") == "true"
        prop = math.floor(Fraction(length_km) * self.n("net.propagation_us_per_km") + Fraction(1, 2)) if lightpath else 0
        one_way = len(rates) * hop + prop
        bps = min(rates) * self.n("net.mgmt.efficiency")
        return bps, one_way, 2 * one_way

    # containers

    def container(self, kind, flavor, length_km):
        """(checkpoint, metadata, restore) in us."""
        c = f"container.{kind}.{flavor}"
        size = int(self.n(f"{c}.metadata_mb") * 10**6)
        dump = self.n(f"{c}.dump_rate_mb_s") * 10**6
        rest = self.n(f"{c}.restore_rate_mb_s") * 10**6
        ck = math.ceil(size * Fraction(10**6) / dump) + us(self.n(f"container.{kind}.dump_overhead_s", 0))
        rs = math.ceil(size * Fraction(10**6) / rest) + us(self.n(f"container.{kind}.restore_overhead_s", 0))
        bps, one_way, rtt = self.mgmt(length_km)
        rate = min(bps, self.n("container.copy_rate_mb_s") * 10**6 * 8)
        md = (math.ceil(size * 8 * Fraction(10**6) / rate) + one_way
              + us(self.n("container.copy_overhead_s")) + int(self.n("container.copy_round_trips")) * rtt)
        return ck, md, rs

    def container_total(self, kind, flavor, length_km):
        return sum(self.container(kind, flavor, length_km))

    # VMs

    def _passes(self, ram, dirty_rate, wss, rate, rtt):
        chunk = int(self.n("vm.chunk_kib")) * 1024
        cap = int(self.n("vm.max_iterations"))
        threshold = int(self.n("vm.stop_threshold_mib") * 1024 * 1024)

        def t(b):
            return 0 if b == 0 else math.ceil(b * Fraction(10**6) / rate) + -(-b // chunk) * rtt

        out = [ram]
        while True:
            dirty = min(dirty_rate * t(out[-1]) // 10**6, wss) * PAGE
            if dirty <= threshold or len(out) >= cap:
                out.append(dirty)
                return out, t
            out.append(dirty)

    def vm(self, kind, flavor, length_km):
        """(pre_live, live, post_live, bytes) in us / bytes."""
        v = f"vm.{kind}"
        ram = int(self.n(f"{v}.{flavor}.ram_mib") * 1024 * 1024)
        load = int(self.n(f"{v}.{flavor}.load_gb") * 10**9)
        dirty_rate = int(self.n(f"vnf.{kind}.dirty_pages_per_s"))
        if kind == "spgw":
            dirty_rate += int(self.n("vnf.spgw.uplink_dirty_pages_per_s", 0))
        wss = int(self.n(f"vnf.{kind}.wss_pages"))
        bps, _, rtt_ref = self.mgmt(SHORT_KM)
        rate = bps / 8
        ref, _ = self._passes(ram, dirty_rate, wss, rate, rtt_ref)
        disk = load - sum(ref)
        _, _, rtt = self.mgmt(length_km)
        seq, t = self._passes(ram, dirty_rate, wss, rate, rtt)
        live = us(self.n(f"{v}.live_sync_s")) + t(disk) + sum(t(b) for b in seq)
        pre = us(self.n(f"{v}.pre_live_s"))
        post = us(self.n(f"{v}.db_update_s")) + us(self.n(f"{v}.port_binding_s")) + us(self.n("vm.bridge_reconfig_s"))
        return pre, live, post, disk + sum(seq)

    def vm_total(self, kind, flavor, length_km):
        pre, live, post, _ = self.vm(kind, flavor, length_km)
        return pre + live + post

    def total(self, kind, virt, flavor, length_km):
        if virt == "container":
            return self.container_total(kind, flavor, length_km)
        return self.vm_total(kind, flavor, length_km)
