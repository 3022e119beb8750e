import struct

import pytest
from hypothesis import given, settings, strategies as st

from epcmig.blob import MAGIC, SECTION_ORDER, MetadataBlob, Section
from epcmig.container import ContainerOptions, build_blob, checkpoint, rebuild_process, restore
from epcmig.epc import (
    FLAVORS,
    Gtp0Device,
    GtpTunnelEntry,
    GtpTunnelTable,
    HssState,
    MmeState,
    PageSet,
    SpgwSession,
    SpgwState,
    SubscriberRecord,
    UeContext,
    VnfProcess,
)
from epcmig.errors import CorruptBlob, DecodeError
from epcmig.protocols import SctpAssociationState, TcpSocketState

u32 = st.integers(0, 2**32 - 1)
teid = st.integers(1, 2**32 - 1)
ipv4 = st.tuples(*[st.integers(0, 255)] * 4).map(lambda t: ".".join(map(str, t)))
endpoint = st.tuples(ipv4, st.integers(1, 65535)).map(lambda t: f"{t[0]}:{t[1]}")


def hss_state():
    rec = st.builds(SubscriberRecord, st.integers(0, 2**64 - 1), st.binary(min_size=16, max_size=16),
                    st.binary(min_size=16, max_size=16), st.integers(0, 2**64 - 1))
    return st.lists(rec, max_size=20, unique_by=lambda r: r.imsi).map(lambda rs: HssState({r.imsi: r for r in rs}))


def mme_state():
    ctx = st.builds(UeContext, u32, st.integers(0, 2**64 - 1), u32, u32, u32, u32, ipv4)
    return st.builds(lambda cs, n: MmeState({c.ue_id: c for c in cs}, n),
                     st.lists(ctx, max_size=20, unique_by=lambda c: c.ue_id), u32)


def spgw_state():
    s = st.builds(SpgwSession, u32, st.integers(0, 2**64 - 1), ipv4, u32, u32, ipv4)
    return st.builds(lambda ss, n: SpgwState({x.ue_id: x for x in ss}, n),
                     st.lists(s, max_size=20, unique_by=lambda x: x.ue_id), u32)


tcp_est = st.builds(TcpSocketState, endpoint, endpoint, st.just("established"), u32, u32, u32, st.just(True), st.just("h"))
tcp_listen = st.builds(TcpSocketState, endpoint, st.just("0.0.0.0:0"), st.just("listen"), u32, u32, u32, st.booleans(), st.just("h"))


@st.composite
def sctp_assoc(draw):
    n = draw(st.integers(1, 6))
    return SctpAssociationState(draw(endpoint), draw(endpoint), "one-to-one", "established", draw(teid), draw(teid),
                                draw(u32), draw(u32), n, draw(st.integers(1, 6)),
                                tuple(draw(st.lists(st.integers(0, 65535), min_size=n, max_size=n))), True, "h")


@st.composite
def processes(draw):
    kind = draw(st.sampled_from(["hss", "mme", "spgw"]))
    app = draw({"hss": hss_state, "mme": mme_state, "spgw": spgw_state}[kind]())
    resident = draw(st.integers(0, 10**6))
    pages = PageSet(resident, draw(st.integers(0, 10**6)))
    v = VnfProcess(kind, FLAVORS[draw(st.sampled_from(["small", "medium"]))], "rack1-h1", draw(ipv4), pages, app,
                   core_bytes=draw(st.integers(0, 2**40)), pid=draw(st.integers(1, 2**31)))
    v.tcp_sockets = draw(st.lists(st.one_of(tcp_est, tcp_listen), max_size=3))
    v.sctp_assocs = draw(st.lists(sctp_assoc(), max_size=2))
    v.sctp_listeners = draw(st.lists(endpoint, max_size=2))
    v.udp_ports = draw(st.lists(st.integers(0, 65535), max_size=4))
    if kind == "spgw":
        v.gtp0 = Gtp0Device(draw(ipv4), draw(st.integers(576, 9000)), "255.255.255.0",
                            tuple(draw(st.lists(st.sampled_from(["172.16.0.0/24", "10.45.0.0/16"]), max_size=2))),
                            draw(st.booleans()))
        entries = draw(st.lists(st.builds(GtpTunnelEntry, u32, teid, teid, ipv4, ipv4), max_size=10,
                                unique_by=lambda e: e.local_teid))
        v.tunnels = GtpTunnelTable(entries)
    return v


@settings(max_examples=1000)
@given(processes())
def test_checkpoint_restore_preserves_every_field(v):
    before = v.snapshot()
    blob, _ = checkpoint(v, ContainerOptions(), _Profile)
    data = blob.to_bytes()
    parsed = MetadataBlob.from_bytes(data)
    assert parsed == blob
    assert parsed.to_bytes() == data
    restored = rebuild_process(parsed, "rack2-h1")
    assert restored.snapshot() == before
    assert restored.host == "rack2-h1"
    assert restored.pages.wss == v.pages.wss


@settings(max_examples=1000)
@given(processes())
def test_blob_file_round_trip_is_byte_identical(tmp_path_factory, v):
    v.freeze()
    blob = build_blob(v)
    path = tmp_path_factory.mktemp("b") / "x.blob"
    blob.write(path)
    again = MetadataBlob.read(path)
    assert again == blob
    assert again.to_bytes() == path.read_bytes()
    assert again.total_bytes == blob.total_bytes


class _Profile:
    """Duck-typed profile with unit rates, enough for checkpoint()."""

    class _C:
        dump_rate = 10**6
        restore_rate = 10**6
        dump_overhead_us = 0
        restore_overhead_us = 0

    @classmethod
    def container_for(cls, kind, flavor):
        return cls._C


def _sample_blob():
    return MetadataBlob([Section.build("PSTREE", b"abc", 100), Section.build("PAGES", b"", 4096),
                         Section.build("CGROUP", b"x")])


def test_layout_is_byte_exact():
    data = _sample_blob().to_bytes()
    assert data[:8] == MAGIC
    assert data[8:12] == b"PSTR"
    assert struct.unpack_from("!Q", data, 12)[0] == 8 + 3
    assert _sample_blob().total_bytes == (100 + 11) + (4096 + 8) + (0 + 9)


def test_crc_mismatch_is_corrupt():
    data = bytearray(_sample_blob().to_bytes())
    data[25] ^= 1
    with pytest.raises(CorruptBlob):
        MetadataBlob.from_bytes(bytes(data))


def test_unknown_and_misordered_sections_refused():
    data = _sample_blob().to_bytes()
    with pytest.raises(DecodeError, match="unknown section"):
        MetadataBlob.from_bytes(data.replace(b"CGRP", b"XXXX"))
    with pytest.raises(ValueError):
        MetadataBlob([Section.build("PAGES"), Section.build("PSTREE")])
    swapped = MAGIC + _sample_blob().to_bytes()[8:].replace(b"PSTR", b"NTNS")
    with pytest.raises(DecodeError, match="order"):
        MetadataBlob.from_bytes(swapped)


def test_version_gate_and_truncation():
    data = _sample_blob().to_bytes()
    with pytest.raises(DecodeError, match="version"):
        MetadataBlob.from_bytes(b"CRMETA02" + data[8:])
    with pytest.raises(DecodeError, match="magic"):
        MetadataBlob.from_bytes(b"GARBAGE!" + data[8:])
    for cut in (10, 30, len(data) - 2):
        with pytest.raises(DecodeError):
            MetadataBlob.from_bytes(data[:cut])


def test_missing_mandatory_section():
    with pytest.raises(DecodeError, match="mandatory"):
        rebuild_process(_sample_blob(), "rack2-h1")


def test_section_order_constant():
    assert SECTION_ORDER[0] == "PSTREE" and SECTION_ORDER[-1] == "GTP-TUN"
