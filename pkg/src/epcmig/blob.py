"""Checkpoint metadata blob: a versioned, sectioned binary file.

Layout: the 8-byte magic ``CRMETA01`` followed by sections, each written as a
4-byte tag, an 8-byte big-endian payload length, the payload and a CRC32 of
the payload. Sections appear in a fixed order and unknown tags are refused.

Every payload opens with a u64 *extent*: bulk bytes (page contents, the core
image) that the dump carries but which the simulator does not materialize.
A section's logical size is ``extent + len(payload)``; the blob's
``total_bytes`` is the sum of those, which is what a transfer moves.
"""

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

from .errors import CorruptBlob, DecodeError

MAGIC = b"CRMETA01"
SECTION_ORDER = ("PSTREE", "PAGES", "SK-TCP", "SK-SCTP", "NETNS", "CGROUP", "GTP-DEV", "GTP-TUN")
TAG_CODES = {
    "PSTREE": b"PSTR",
    "PAGES": b"PAGE",
    "SK-TCP": b"SKTC",
    "SK-SCTP": b"SKSC",
    "NETNS": b"NTNS",
    "CGROUP": b"CGRP",
    "GTP-DEV": b"GTPD",
    "GTP-TUN": b"GTPT",
}
CODE_TAGS = {v: k for k, v in TAG_CODES.items()}
_HDR = struct.Struct("!4sQ")
_CRC = struct.Struct("!I")
_EXTENT = struct.Struct("!Q")


@dataclass(frozen=True)
class Section:
    tag: str
    payload: bytes

    def __post_init__(self):
        if self.tag not in TAG_CODES:
            raise ValueError(f"unknown section tag {self.tag!r}")
        if len(self.payload) < _EXTENT.size:
            raise ValueError("section payload must start with a u64 extent")

    @classmethod
    def build(cls, tag, body=b"", extent=0):
        return cls(tag, _EXTENT.pack(extent) + body)

    @property
    def extent(self):
        return _EXTENT.unpack_from(self.payload)[0]

    @property
    def body(self):
        return self.payload[_EXTENT.size:]

    @property
    def logical_size(self):
        return self.extent + len(self.payload)

    @property
    def crc(self):
        return zlib.crc32(self.payload)


class MetadataBlob:
    """Ordered sections of one checkpoint."""

    def __init__(self, sections):
        sections = tuple(sections)
        order = [SECTION_ORDER.index(s.tag) for s in sections]
        if order != sorted(set(order)):
            raise ValueError("sections must be unique and in canonical order")
        self.sections = sections

    @property
    def version(self):
        return int(MAGIC[-2:])

    @property
    def total_bytes(self):
        return sum(s.logical_size for s in self.sections)

    def tags(self):
        return [s.tag for s in self.sections]

    def has(self, tag):
        return any(s.tag == tag for s in self.sections)

    def get(self, tag):
        for s in self.sections:
            if s.tag == tag:
                return s
        raise KeyError(tag)

    def to_bytes(self):
        out = [MAGIC]
        for s in self.sections:
            out.append(_HDR.pack(TAG_CODES[s.tag], len(s.payload)))
            out.append(s.payload)
            out.append(_CRC.pack(s.crc))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if not data.startswith(MAGIC):
            if data[:6] == MAGIC[:6]:
                raise DecodeError(f"unsupported blob version {data[6:8]!r}")
            raise DecodeError("not a checkpoint blob (bad magic)")
        pos = len(MAGIC)
        sections = []
        last = -1
        while pos < len(data):
            if pos + _HDR.size > len(data):
                raise DecodeError(f"truncated section header at offset {pos}")
            code, length = _HDR.unpack_from(data, pos)
            pos += _HDR.size
            tag = CODE_TAGS.get(code)
            if tag is None:
                raise DecodeError(f"unknown section tag {code!r} at offset {pos - _HDR.size}")
            idx = SECTION_ORDER.index(tag)
            if idx <= last:
                raise DecodeError(f"section {tag} out of order or repeated")
            last = idx
            end = pos + length
            if end + _CRC.size > len(data):
                raise DecodeError(f"section {tag} truncated")
            payload = data[pos:end]
            (crc,) = _CRC.unpack_from(data, end)
            if zlib.crc32(payload) != crc:
                raise CorruptBlob(f"CRC mismatch in section {tag}")
            if len(payload) < _EXTENT.size:
                raise DecodeError(f"section {tag} lacks its extent field")
            sections.append(Section(tag, payload))
            pos = end + _CRC.size
        return cls(sections)

    def write(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path):
        return cls.from_bytes(Path(path).read_bytes())

    def describe(self):
        lines = [f"version {self.version}  sections {len(self.sections)}  total_bytes {self.total_bytes}"]
        for s in self.sections:
            lines.append(f"{s.tag:<8} extent={s.extent:<12} payload={len(s.payload):<8} crc=0x{s.crc:08x}")
        return "\n".join(lines)

    def __eq__(self, other):
        return isinstance(other, MetadataBlob) and self.sections == other.sections

    def __repr__(self):
        return f"MetadataBlob({self.tags()}, total_bytes={self.total_bytes})"
