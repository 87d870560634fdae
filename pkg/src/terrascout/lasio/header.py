"""LAS public header and VLR parsing for versions 1.2 through 1.4."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..errors import BadSignature, TruncatedHeader, UnsupportedVersion

LASZIP_USER_ID = b"laszip encoded"
LASZIP_RECORD_ID = 22204

ITEM_POINT10 = 6
ITEM_GPSTIME11 = 7
ITEM_RGB12 = 8

COMPRESSOR_POINTWISE_CHUNKED = 2

# minimum record length per point format (LAS 1.4 layouts)
MIN_RECORD_LENGTH = {0: 20, 1: 28, 2: 26, 3: 34, 4: 57, 5: 63,
                     6: 30, 7: 36, 8: 38, 9: 59, 10: 67}
COLOR_FORMATS = frozenset({2, 3, 5, 7, 8, 10})

VARIABLE_CHUNK_SIZE = 0xFFFFFFFF

_HEADER12 = struct.Struct("<4sHHIHH8sBB32s32sHHHIIBHI5I12d")


class InvalidHeader(TruncatedHeader):
    """Header parsed but violates a structural invariant."""


@dataclass
class Vlr:
    user_id: bytes
    record_id: int
    description: bytes
    data: bytes


@dataclass
class LaszipVlr:
    compressor: int
    coder: int
    version: tuple[int, int, int]
    options: int
    chunk_size: int
    items: list[tuple[int, int, int]]  # (type, size, version)

    @property
    def variable_chunks(self) -> bool:
        return self.chunk_size == VARIABLE_CHUNK_SIZE

    def to_bytes(self) -> bytes:
        out = struct.pack("<HHBBHIIqqH", self.compressor, self.coder,
                          self.version[0], self.version[1], self.version[2],
                          self.options, self.chunk_size, -1, -1,
                          len(self.items))
        for t, s, v in self.items:
            out += struct.pack("<HHH", t, s, v)
        return out

    @classmethod
    def from_bytes(cls, data: bytes) -> "LaszipVlr":
        if len(data) < 34:
            raise TruncatedHeader("LASzip VLR payload too short")
        (compressor, coder, vmaj, vmin, vrev, options, chunk_size,
         _n_evlrs, _off_evlrs, n_items) = struct.unpack_from("<HHBBHIIqqH",
                                                             data, 0)
        items = []
        off = 34
        for _ in range(n_items):
            items.append(struct.unpack_from("<HHH", data, off))
            off += 6
        return cls(compressor, coder, (vmaj, vmin, vrev), options,
                   chunk_size, items)


@dataclass
class LasHeader:
    version: tuple[int, int]
    point_data_offset: int
    point_record_format: int
    point_record_length: int
    point_count: int
    scale: tuple[float, float, float]
    offset: tuple[float, float, float]
    bbox_min: tuple[float, float, float]
    bbox_max: tuple[float, float, float]
    is_compressed: bool
    color_channels_present: bool
    header_size: int = 0
    vlrs: list[Vlr] = field(default_factory=list)
    laszip: LaszipVlr | None = None

    def validate(self):
        if any(a > b for a, b in zip(self.bbox_min, self.bbox_max)):
            raise InvalidHeader("bbox_min exceeds bbox_max")
        if any(s <= 0 for s in self.scale):
            raise InvalidHeader("non-positive scale factor")
        min_len = MIN_RECORD_LENGTH.get(self.point_record_format)
        if min_len is None:
            raise InvalidHeader(
                f"unknown point format {self.point_record_format}")
        if self.point_record_length < min_len:
            raise InvalidHeader("point record length below format minimum")


def parse_header(raw: bytes) -> LasHeader:
    """Parse the public header plus the VLR region from raw leading bytes.

    raw only needs to reach the end of the VLR region (point_data_offset),
    never any point data.
    """
    if len(raw) < 4:
        raise TruncatedHeader("file shorter than signature")
    if raw[:4] != b"LASF":
        raise BadSignature(f"bad signature {raw[:4]!r}")
    if len(raw) < _HEADER12.size:
        raise TruncatedHeader("file shorter than LAS 1.2 header")

    fields = _HEADER12.unpack_from(raw, 0)
    (_sig, _source, _genc, _g1, _g2, _g3, _g4, vmaj, vmin, _sys, _gen,
     _day, _year, header_size, point_data_offset, n_vlrs, fmt_raw,
     record_len, legacy_count) = fields[:19]
    by_return = fields[19:24]
    del by_return
    sx, sy, sz, ox, oy, oz, max_x, min_x, max_y, min_y, max_z, min_z = \
        fields[24:36]

    if vmaj != 1:
        raise UnsupportedVersion(f"LAS major version {vmaj}")
    if len(raw) < header_size:
        raise TruncatedHeader("declared header size exceeds file")

    point_count = legacy_count
    if vmin >= 4:
        if header_size < 375:
            raise TruncatedHeader("LAS 1.4 header shorter than 375 bytes")
        count14 = struct.unpack_from("<Q", raw, 247)[0]
        if count14:
            point_count = count14

    vlrs = []
    off = header_size
    for _ in range(n_vlrs):
        if off + 54 > len(raw):
            raise TruncatedHeader("VLR region truncated")
        _res, user_id, record_id, length = struct.unpack_from("<H16sHH",
                                                              raw, off)
        description = raw[off + 22:off + 54]
        payload = raw[off + 54:off + 54 + length]
        if len(payload) < length:
            raise TruncatedHeader("VLR payload truncated")
        vlrs.append(Vlr(user_id.rstrip(b"\0"), record_id,
                        description.rstrip(b"\0"), payload))
        off += 54 + length

    laszip = None
    for vlr in vlrs:
        if vlr.user_id == LASZIP_USER_ID and vlr.record_id == LASZIP_RECORD_ID:
            laszip = LaszipVlr.from_bytes(vlr.data)
            break

    fmt = fmt_raw & 0x7F
    header = LasHeader(
        version=(vmaj, vmin),
        point_data_offset=point_data_offset,
        point_record_format=fmt,
        point_record_length=record_len,
        point_count=point_count,
        scale=(sx, sy, sz),
        offset=(ox, oy, oz),
        bbox_min=(min_x, min_y, min_z),
        bbox_max=(max_x, max_y, max_z),
        is_compressed=laszip is not None,
        color_channels_present=fmt in COLOR_FORMATS,
        header_size=header_size,
        vlrs=vlrs,
        laszip=laszip,
    )
    header.validate()
    return header
