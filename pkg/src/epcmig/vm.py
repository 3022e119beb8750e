"""Pre-copy VM migration.

Pre-live reserves the destination. The live phase pushes the disk image,
then RAM, then keeps re-sending pages dirtied during the previous pass until
the dirty set drops under the stop threshold or the iteration cap is hit; the
VM is then paused for the stop-and-copy of the residual. Post-live updates
the databases, binds the port and reconfigures the bridge.

Every pass costs its serialization time at the management path's effective
rate plus one round trip per chunk. The VM is unavailable from the start of
stop-and-copy until the bridge is reconfigured and the overlay has learned
the new location.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .epc import PAGE_SIZE, PageSet
from .errors import PreconditionError
from .net import propagation_delay

US = 1_000_000
SHORT_KM = Fraction(5, 1000)


@dataclass(frozen=True)
class VmOptions:
    max_iterations: int = None
    stop_threshold_bytes: int = None
    overlay: str = "vpn"
    control_overlay: str = None


@dataclass(frozen=True)
class VmImage:
    disk_bytes: int
    ram_bytes: int
    log_growth_bytes_per_s: int = 0

    def __post_init__(self):
        if self.disk_bytes < 0 or self.ram_bytes <= 0:
            raise ValueError("image sizes must be positive")

    def disk_at(self, uptime_us):
        return self.disk_bytes + self.log_growth_bytes_per_s * uptime_us // US


@dataclass
class VmMigrationBreakdown:
    pre_live_us: int
    live_us: int
    post_live_us: int
    iterations: int
    bytes_moved: int
    stop_copy_us: int
    live_sync_us: int = 0
    passes: list = field(default_factory=list)

    @property
    def total_us(self):
        return self.pre_live_us + self.live_us + self.post_live_us

    @property
    def pre_live_s(self):
        return self.pre_live_us / US

    @property
    def live_s(self):
        return self.live_us / US

    @property
    def post_live_s(self):
        return self.post_live_us / US

    @property
    def total_s(self):
        return self.total_us / US


def pass_time(nbytes, rate, chunk_bytes, rtt_us):
    """One push pass: serialization at ``rate`` bytes/s plus a round trip per chunk."""
    if nbytes == 0:
        return 0
    return math.ceil(Fraction(nbytes * US) / Fraction(rate)) + -(-nbytes // chunk_bytes) * rtt_us


def dirty_passes(ram_bytes, dirty_rate, wss_pages, rate, chunk_bytes, rtt_us, max_iterations, threshold_bytes):
    """Plan RAM pass 0 and the dirty passes.

    Returns (passes, residual_bytes) where passes is a list of (bytes, us) and
    residual_bytes is what the stop-and-copy must still move.
    """
    passes = []
    nbytes = ram_bytes
    while True:
        us = pass_time(nbytes, rate, chunk_bytes, rtt_us)
        passes.append((nbytes, us))
        dirty = min(dirty_rate * us // US, wss_pages) * PAGE_SIZE
        if dirty <= threshold_bytes or len(passes) >= max_iterations:
            return passes, dirty
        nbytes = dirty


def reference_rtt_us(profile):
    """Management round trip over the short lightpath, used to size disk images."""
    m = profile.mgmt
    prop = propagation_delay(SHORT_KM, profile.propagation_us_per_km) if m.lightpath else 0
    return 2 * (len(m.link_rates_bps) * m.hop_latency_us + prop)


def mgmt_rate(profile):
    """Bulk rate of the management path in bytes/s."""
    m = profile.mgmt
    return Fraction(min(m.link_rates_bps)) * m.efficiency / 8


def reference_dirty_rate(profile, kind):
    v = profile.vnf[kind]
    return v.dirty_pages_per_s + (v.uplink_dirty_pages_per_s if kind == "spgw" else 0)


def vm_image(profile, kind, flavor_name):
    """Disk+RAM image sized so the reference migration moves exactly ``load_gb``."""
    vp = profile.vm_for(kind, flavor_name)
    passes, residual = dirty_passes(
        vp.ram_bytes, reference_dirty_rate(profile, kind), profile.vnf[kind].wss_pages, mgmt_rate(profile),
        profile.vm_chunk_bytes, reference_rtt_us(profile), profile.vm_max_iterations, profile.vm_stop_threshold_bytes,
    )
    dirty = sum(b for b, _ in passes[1:]) + residual
    disk = vp.load_bytes - vp.ram_bytes - dirty
    if disk < 0:
        raise PreconditionError(f"{kind}/{flavor_name}: load is smaller than RAM plus dirty pages")
    return VmImage(disk, vp.ram_bytes)


def post_live_duration(profile, kind, flavor_name):
    vp = profile.vm_for(kind, flavor_name)
    return vp.db_update_us + vp.port_binding_us + profile.bridge_reconfig_us


class VmMigration:
    """Drives the pre-copy phases on the simulator."""

    def __init__(self, core, kind, dest_host, options=VmOptions(), on_done=None):
        self.core = core
        self.sim = core.sim
        self.kind = kind
        self.dest = dest_host
        self.options = options
        self.on_done = on_done
        p = core.profile
        self.max_iterations = options.max_iterations or p.vm_max_iterations
        self.threshold = p.vm_stop_threshold_bytes if options.stop_threshold_bytes is None else options.stop_threshold_bytes
        self.passes = []
        self.iterations = 0
        self.breakdown = None
        self.outage = None
        self.recovery_at = None

    # phases

    def start(self):
        core = self.core
        self.vnf = core.vnfs[self.kind]
        if not self.vnf.running:
            raise PreconditionError(f"{self.kind} is {self.vnf.state}")
        self.src = self.vnf.host
        self.started_at = self.sim.now
        self.image = vm_image(core.profile, self.kind, self.vnf.flavor.name)
        self.pages = PageSet(self.image.ram_bytes // PAGE_SIZE, core.profile.vnf[self.kind].wss_pages)
        self.pre_us = self.pre_live()
        self.sim.schedule(self._live, self.pre_us, target=self.kind, label="pre-live-done")

    def pre_live(self):
        self.core.fabric.management_path(self.src, self.dest)
        self.core.reserve(self.dest, self.vnf.flavor)
        return self.core.profile.vm_for(self.kind, self.vnf.flavor.name).pre_live_us

    def _live(self):
        core = self.core
        path = core.fabric.management_path(self.src, self.dest)
        self.rate = Fraction(path.effective_rate_bps) / 8
        self.rtt = path.rtt_us
        self.live_start = self.sim.now
        self.live_sync_us = core.profile.vm_for(self.kind, self.vnf.flavor.name).live_sync_us
        disk = self.image.disk_at(self.sim.now)
        disk_us = pass_time(disk, self.rate, core.profile.vm_chunk_bytes, self.rtt)
        self._push("disk", disk, self.live_sync_us + disk_us, self._ram_pass)

    def _push(self, label, nbytes, us, then):
        self.passes.append((label, nbytes, us))
        self.core.fabric.bulk("mgmt", self.src, self.dest, nbytes, msgtype=f"vm-{label}")
        self.sim.schedule(then, us, target=self.kind, label=f"{label}-pass-done")

    def _pass(self, label, nbytes):
        us = pass_time(nbytes, self.rate, self.core.profile.vm_chunk_bytes, self.rtt)
        self.pages.collect()
        self.iterations += 1
        self._push(label, nbytes, us, lambda: self._after_pass(us))

    def _ram_pass(self):
        self._pass("ram", self.image.ram_bytes)

    def _after_pass(self, us):
        self.pages.touch(self.core.dirty_page_count(self.vnf, us))
        dirty = self.pages.dirty * PAGE_SIZE
        if dirty <= self.threshold or self.iterations >= self.max_iterations:
            self._stop_and_copy()
        else:
            self._pass(f"dirty{self.iterations}", dirty)

    def _stop_and_copy(self):
        core, vnf = self.core, self.vnf
        vnf.freeze()
        self.stop_at = self.sim.now
        core.mark_down(self.kind, self.stop_at)
        residual = self.pages.collect() * PAGE_SIZE
        us = pass_time(residual, self.rate, core.profile.vm_chunk_bytes, self.rtt)
        self.stop_us = us
        self.passes.append(("stop-copy", residual, us))
        core.fabric.bulk("mgmt", self.src, self.dest, residual, msgtype="vm-stop-copy")
        self.sim.schedule(self._resume, us, target=self.kind, label="stop-copy-done")

    def _resume(self):
        core, vnf, sim = self.core, self.vnf, self.sim
        now = sim.now
        self.live_us = now - self.live_start
        vnf.host = self.dest
        core.fabric.move(self.kind, self.dest)
        vnf.resume()
        p = core.profile
        overlay = self.options.overlay
        control = self.options.control_overlay or overlay
        bridge = p.bridge_reconfig_us
        down_end = now + bridge + core.fabric.overlay_reroute(self.kind, self.dest, control, plane="control")
        self.user_ready = now + bridge + core.fabric.overlay_reroute(self.kind, self.dest, overlay, plane="user")
        if self.kind == "spgw":
            self.user_ready += p.gtp_settle_us
        vnf.user_ready_at = self.user_ready
        self.down_end = down_end
        self.outage = (self.stop_at, down_end)
        sim.schedule_at(down_end, self._back_up, target=self.kind, label="reachable")
        self.post_us = post_live_duration(p, self.kind, vnf.flavor.name)
        sim.schedule(self._finish, self.post_us, target=self.kind, label="post-live-done")
        self._pending = 2

    def _back_up(self):
        self.core.mark_up(self.kind, self.sim.now)
        self.core.flush(self.kind)
        self._maybe_done()

    def _finish(self):
        self.core.release(self.src, self.vnf.flavor)
        self.breakdown = VmMigrationBreakdown(
            self.pre_us, self.live_us, self.post_us, self.iterations,
            sum(b for _, b, _ in self.passes), self.stop_us, self.live_sync_us, list(self.passes),
        )
        self._maybe_done()

    def _maybe_done(self):
        self._pending -= 1
        if self._pending == 0:
            self.recovery_at = max(self.down_end, self.user_ready, self.sim.now)
            if self.on_done:
                self.on_done(self)


def migrate_vm(core, kind, dest_host, options=VmOptions(), on_done=None):
    m = VmMigration(core, kind, dest_host, options, on_done)
    m.start()
    return m
