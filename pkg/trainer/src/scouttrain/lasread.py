"""Minimal uncompressed-LAS reader for training scans (formats 0-3)."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_FIELDS10 = [("x", "<i4"), ("y", "<i4"), ("z", "<i4"),
             ("intensity", "<u2"), ("bitfield", "u1"),
             ("classification", "u1"), ("scan_angle", "u1"),
             ("user_data", "u1"), ("point_source_id", "<u2")]
_GPS = [("gps_time", "<u8")]
_RGB = [("red", "<u2"), ("green", "<u2"), ("blue", "<u2")]

FORMAT_FIELDS = {0: _FIELDS10, 1: _FIELDS10 + _GPS, 2: _FIELDS10 + _RGB,
                 3: _FIELDS10 + _GPS + _RGB}


@dataclass
class LasScan:
    path: str
    point_format: int
    point_count: int
    scale: tuple
    offset: tuple
    xyz: np.ndarray            # (N,3) float64 meters
    rgb: np.ndarray | None     # (N,3) float32 [0,1]


def read_las(path: str) -> LasScan:
    with open(path, "rb") as fp:
        head = fp.read(375)
        if head[:4] != b"LASF":
            raise ValueError(f"{path}: not a LAS file")
        fmt = head[104] & 0x7F
        if head[104] & 0x80:
            raise ValueError(f"{path}: compressed input not supported by "
                             "the trainer; decompress to LAS first")
        if fmt not in FORMAT_FIELDS:
            raise ValueError(f"{path}: unsupported point format {fmt}")
        record_len = struct.unpack_from("<H", head, 105)[0]
        count = struct.unpack_from("<I", head, 107)[0]
        vmin = head[25]
        if vmin >= 4:
            c14 = struct.unpack_from("<Q", head, 247)[0]
            if c14:
                count = c14
        data_offset = struct.unpack_from("<I", head, 96)[0]
        scale = struct.unpack_from("<3d", head, 131)
        offset = struct.unpack_from("<3d", head, 155)
        fp.seek(data_offset)
        raw = fp.read(count * record_len)

    fields = list(FORMAT_FIELDS[fmt])
    base = np.dtype(fields).itemsize
    if record_len > base:
        fields.append(("extra", f"V{record_len - base}"))
    rec = np.frombuffer(raw, dtype=np.dtype(fields), count=count)

    xyz = np.empty((count, 3))
    for i, (axis, s, o) in enumerate(zip("xyz", scale, offset)):
        xyz[:, i] = rec[axis] * s + o
    rgb = None
    if fmt in (2, 3):
        stacked = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
        div = 255.0 if len(stacked) and stacked.max() <= 255 else 65535.0
        rgb = (stacked / div).astype(np.float32)
    return LasScan(path=path, point_format=fmt, point_count=count,
                   scale=tuple(scale), offset=tuple(offset), xyz=xyz,
                   rgb=rgb)
