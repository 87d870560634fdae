"""LAS and chunked-LAZ writers for synthetic corpora.

The viewer pipeline never writes point clouds; these writers exist so the
test corpus can be generated in-repo (no third-party LAZ encoder is
available in this environment). The LAZ writer follows the published
LASzip chunked format: raw first record per chunk, LASzip VLR, entropy
coded chunk table.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import UnsupportedFormat
from .codec import ArithmeticEncoder, IntegerCompressor
from .header import (COMPRESSOR_POINTWISE_CHUNKED, ITEM_GPSTIME11,
                     ITEM_POINT10, ITEM_RGB12, LASZIP_RECORD_ID,
                     LASZIP_USER_ID, MIN_RECORD_LENGTH, VARIABLE_CHUNK_SIZE)
from .items import GpsTimeCodec, Point10Codec, RgbCodec
from .reader import DECODABLE_FORMATS
from .records import record_dtype


def _header_bytes(version: tuple[int, int], fmt_byte: int, record_len: int,
                  count: int, scale, offset, bbox_min, bbox_max,
                  vlr_blobs: list[bytes]) -> bytes:
    vmaj, vmin = version
    if vmaj != 1 or vmin not in (2, 4):
        raise UnsupportedFormat(f"writer supports LAS 1.2/1.4, not {version}")
    header_size = 227 if vmin == 2 else 375
    point_data_offset = header_size + sum(len(b) for b in vlr_blobs)
    legacy_count = count if count < 2**32 else 0

    out = struct.pack(
        "<4sHHIHH8sBB32s32sHHHIIBHI5I12d",
        b"LASF", 0, 0, 0, 0, 0, b"\0" * 8, vmaj, vmin,
        b"terrascout".ljust(32, b"\0"), b"terrascout".ljust(32, b"\0"),
        1, 2026, header_size, point_data_offset, len(vlr_blobs),
        fmt_byte, record_len, legacy_count, 0, 0, 0, 0, 0,
        scale[0], scale[1], scale[2], offset[0], offset[1], offset[2],
        bbox_max[0], bbox_min[0], bbox_max[1], bbox_min[1],
        bbox_max[2], bbox_min[2])
    if vmin == 4:
        out += struct.pack("<QQIQ", 0, 0, 0, count)
        out += struct.pack("<15Q", *([0] * 15))
    assert len(out) == header_size
    return out + b"".join(vlr_blobs)


def _vlr_bytes(user_id: bytes, record_id: int, data: bytes) -> bytes:
    return struct.pack("<H16sHH32s", 0, user_id.ljust(16, b"\0"), record_id,
                       len(data), b"\0" * 32) + data


def _bounds(records: np.ndarray, scale, offset):
    if len(records) == 0:
        return (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
    mins = []
    maxs = []
    for axis, s, o in zip("xyz", scale, offset):
        mins.append(records[axis].min() * s + o)
        maxs.append(records[axis].max() * s + o)
    return tuple(mins), tuple(maxs)


def write_las(path: str, records: np.ndarray, point_format: int,
              scale=(0.01, 0.01, 0.01), offset=(0.0, 0.0, 0.0),
              version=(1, 2)):
    """Write an uncompressed LAS file from raw records."""
    dtype = record_dtype(point_format, records.dtype.itemsize)
    if records.dtype != dtype:
        raise UnsupportedFormat("records dtype does not match point format")
    bbox_min, bbox_max = _bounds(records, scale, offset)
    head = _header_bytes(version, point_format, dtype.itemsize,
                         len(records), scale, offset, bbox_min, bbox_max, [])
    with open(path, "wb") as fp:
        fp.write(head)
        fp.write(records.tobytes())


def _encode_chunk(records: np.ndarray, fmt: int) -> bytes:
    """Encode one chunk: raw first record then the compressed remainder."""
    first = records[0]
    raw = bytes(memoryview(records[0:1]).cast("B"))

    enc = ArithmeticEncoder()
    point10 = Point10Codec(enc, encoding=True)
    p10_fields = ("x", "y", "z", "intensity", "bitfield", "classification",
                  "scan_angle", "user_data", "point_source_id")
    point10.init(tuple(int(first[f]) for f in p10_fields))
    gps = rgb = None
    if fmt in (1, 3):
        gps = GpsTimeCodec(enc, encoding=True)
        gps.init(int(first["gps_time"]))
    if fmt in (2, 3):
        rgb = RgbCodec(enc, encoding=True)
        rgb.init((int(first["red"]), int(first["green"]),
                  int(first["blue"])))

    for rec in records[1:]:
        point10.write(tuple(int(rec[f]) for f in p10_fields))
        if gps is not None:
            gps.write(int(rec["gps_time"]))
        if rgb is not None:
            rgb.write((int(rec["red"]), int(rec["green"]),
                       int(rec["blue"])))
    return raw + enc.done()


def _encode_chunk_table(sizes: list[int], counts: list[int] | None) -> bytes:
    out = struct.pack("<II", 0, len(sizes))
    if sizes:
        enc = ArithmeticEncoder()
        ic = IntegerCompressor(enc, 32, 2)
        prev_size = 0
        prev_count = 0
        for i, size in enumerate(sizes):
            if counts is not None:
                ic.compress(prev_count, counts[i], 0)
                prev_count = counts[i]
            ic.compress(prev_size, size, 1)
            prev_size = size
        out += enc.done()
    return out


def write_laz(path: str, records: np.ndarray, point_format: int,
              scale=(0.01, 0.01, 0.01), offset=(0.0, 0.0, 0.0),
              version=(1, 2), chunk_size: int = 50_000,
              chunk_sizes: list[int] | None = None):
    """Write a chunked LAZ file.

    chunk_sizes switches to LASzip variable chunking (the chunk table then
    carries per-chunk point counts).
    """
    if point_format not in DECODABLE_FORMATS:
        raise UnsupportedFormat(
            f"LAZ writer supports formats 0-3, not {point_format}")
    dtype = record_dtype(point_format)
    if records.dtype != dtype:
        raise UnsupportedFormat("records dtype does not match point format")

    items = [(ITEM_POINT10, 20, 2)]
    if point_format in (1, 3):
        items.append((ITEM_GPSTIME11, 8, 2))
    if point_format in (2, 3):
        items.append((ITEM_RGB12, 6, 2))

    if chunk_sizes is not None:
        if sum(chunk_sizes) != len(records):
            raise ValueError("chunk_sizes must sum to the record count")
        counts = list(chunk_sizes)
        vlr_chunk_size = VARIABLE_CHUNK_SIZE
    else:
        counts = []
        remaining = len(records)
        while remaining > 0:
            counts.append(min(chunk_size, remaining))
            remaining -= counts[-1]
        vlr_chunk_size = chunk_size

    laszip_payload = struct.pack(
        "<HHBBHIIqqH", COMPRESSOR_POINTWISE_CHUNKED, 0, 2, 2, 0, 0,
        vlr_chunk_size, -1, -1, len(items))
    for item in items:
        laszip_payload += struct.pack("<HHH", *item)
    vlr = _vlr_bytes(LASZIP_USER_ID, LASZIP_RECORD_ID, laszip_payload)

    bbox_min, bbox_max = _bounds(records, scale, offset)
    head = _header_bytes(version, point_format | 0x80,
                         MIN_RECORD_LENGTH[point_format], len(records),
                         scale, offset, bbox_min, bbox_max, [vlr])

    chunks = []
    start = 0
    for count in counts:
        chunks.append(_encode_chunk(records[start:start + count],
                                    point_format))
        start += count

    with open(path, "wb") as fp:
        fp.write(head)
        table_pointer_pos = fp.tell()
        fp.write(struct.pack("<q", 0))  # patched below
        for blob in chunks:
            fp.write(blob)
        table_pos = fp.tell()
        fp.write(_encode_chunk_table(
            [len(b) for b in chunks],
            counts if chunk_sizes is not None else None))
        fp.seek(table_pointer_pos)
        fp.write(struct.pack("<q", table_pos))
