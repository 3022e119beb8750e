import pytest
from hypothesis import given, strategies as st

from epcmig.epc import FLAVORS, EpcCore, HssState, MmeState, SpgwState, decode_app_state, encode_app_state
from epcmig.errors import CapacityError, PreconditionError
from epcmig.net import Fabric, Topology
from epcmig.sim import Simulator

from test_blob import hss_state, mme_state, spgw_state


def _core(profile, hosts=8):
    sim = Simulator()
    fabric = Fabric(sim, profile, Topology(hosts_per_rack=hosts))
    return sim, EpcCore(sim, fabric, profile)


def _bring_up(profile, ues=1):
    sim, core = _core(profile)
    for kind, host in (("hss", "rack1-h1"), ("mme", "rack1-h2"), ("spgw", "rack1-h3")):
        core.spawn_vnf(kind, "small", host)
    steps = []
    core.connect_hss(on_done=steps.append)
    core.associate_cu(on_done=steps.append)
    sim.run_to_completion()
    assert all(s.ok for s in steps)
    results = [core.attach_ue(i) for i in range(1, ues + 1)]
    sim.run_to_completion()
    return sim, core, results


def test_attach_installs_bearers(openroadm):
    sim, core, (res,) = _bring_up(openroadm)
    assert res.ok and res.delay_us > 0
    mme = core.vnfs["mme"].app_state
    spgw = core.vnfs["spgw"]
    assert set(mme.contexts) == {1}
    assert spgw.app_state.sessions[1].sgw_teid == res.sgw_teid
    assert [e.local_teid for e in spgw.tunnels.entries()] == [res.sgw_teid]
    assert core.ues[1].attached


def test_uplink_round_trips_through_tunnel(openroadm):
    sim, core, _ = _bring_up(openroadm)
    stream = core.generate_uplink(1, 84, 100_000)
    sim.run_until(sim.now + 1_000_000)
    stream.stop()
    assert len(stream.sent) >= 10
    assert set(stream.answered) == set(stream.sent[:len(stream.answered)])
    assert len(stream.answered) >= len(stream.sent) - 1


def test_teids_unique_across_ues(openroadm):
    _, core, results = _bring_up(openroadm, ues=5)
    assert all(r.ok for r in results)
    teids = [e.local_teid for e in core.vnfs["spgw"].tunnels.entries()]
    assert len(set(teids)) == 5


def test_attach_needs_full_deployment(openroadm):
    sim, core = _core(openroadm)
    core.spawn_vnf("hss", "small", "rack1-h1")
    with pytest.raises(PreconditionError):
        core.attach_ue(1)


def test_host_capacity_enforced(openroadm):
    sim, core = _core(openroadm)
    big = FLAVORS["medium"]
    fits = 0
    with pytest.raises(CapacityError):
        while True:
            core.reserve("rack2-h1", big)
            fits += 1
    assert fits >= 1
    core.release("rack2-h1", big)
    core.reserve("rack2-h1", big)


def test_double_spawn_rejected(openroadm):
    _, core = _core(openroadm)
    core.spawn_vnf("mme", "small", "rack1-h2")
    with pytest.raises(PreconditionError):
        core.spawn_vnf("mme", "small", "rack1-h3")


def test_spawn_is_deterministic(openroadm):
    a = _core(openroadm)[1].spawn_vnf("hss", "small", "rack1-h1").snapshot()
    b = _core(openroadm)[1].spawn_vnf("hss", "small", "rack1-h1").snapshot()
    assert a == b


@given(st.one_of(hss_state(), mme_state(), spgw_state()))
def test_app_state_codec(state):
    again = decode_app_state(encode_app_state(state))
    assert type(again) in (HssState, MmeState, SpgwState)
    assert again == state
