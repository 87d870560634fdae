"""Point record layouts (formats 0-10) and model-space conversion."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import UnsupportedFormat
from .header import MIN_RECORD_LENGTH, LasHeader

log = logging.getLogger(__name__)

_BASE10 = [("x", "<i4"), ("y", "<i4"), ("z", "<i4"), ("intensity", "<u2"),
           ("bitfield", "u1"), ("classification", "u1"), ("scan_angle", "u1"),
           ("user_data", "u1"), ("point_source_id", "<u2")]
_BASE14 = [("x", "<i4"), ("y", "<i4"), ("z", "<i4"), ("intensity", "<u2"),
           ("returns", "u1"), ("flags", "u1"), ("classification", "u1"),
           ("user_data", "u1"), ("scan_angle", "<i2"),
           ("point_source_id", "<u2"), ("gps_time", "<u8")]
_GPS = [("gps_time", "<u8")]
_RGB = [("red", "<u2"), ("green", "<u2"), ("blue", "<u2")]
_NIR = [("nir", "<u2")]
_WAVE = [("wave_desc", "u1"), ("wave_offset", "<u8"), ("wave_size", "<u4"),
         ("wave_return", "<f4"), ("wave_xt", "<f4"), ("wave_yt", "<f4"),
         ("wave_zt", "<f4")]

_FORMAT_FIELDS = {
    0: _BASE10,
    1: _BASE10 + _GPS,
    2: _BASE10 + _RGB,
    3: _BASE10 + _GPS + _RGB,
    4: _BASE10 + _GPS + _WAVE,
    5: _BASE10 + _GPS + _RGB + _WAVE,
    6: _BASE14,
    7: _BASE14 + _RGB,
    8: _BASE14 + _RGB + _NIR,
    9: _BASE14 + _WAVE,
    10: _BASE14 + _RGB + _NIR + _WAVE,
}


def record_dtype(point_format: int, record_length: int | None = None
                 ) -> np.dtype:
    fields = _FORMAT_FIELDS.get(point_format)
    if fields is None:
        raise UnsupportedFormat(f"point format {point_format}")
    min_len = MIN_RECORD_LENGTH[point_format]
    if record_length is None:
        record_length = min_len
    if record_length < min_len:
        raise UnsupportedFormat(
            f"record length {record_length} below format minimum {min_len}")
    fields = list(fields)
    if record_length > min_len:
        fields.append(("extra", f"V{record_length - min_len}"))
    dt = np.dtype(fields)
    assert dt.itemsize == record_length
    return dt


def positions(records: np.ndarray, header: LasHeader) -> np.ndarray:
    """Scaled/offset model-space coordinates, meters, float64, shape (N,3)."""
    out = np.empty((len(records), 3), dtype=np.float64)
    for i, (axis, s, o) in enumerate(zip("xyz", header.scale, header.offset)):
        out[:, i] = records[axis] * s + o
    return out


def colors(records: np.ndarray, header: LasHeader) -> np.ndarray | None:
    """Normalized [0,1] float32 colors, or None for colorless formats.

    LAS stores 16-bit channels, but many producers pack 8-bit values; when
    every channel of a batch is <= 255 the 8-bit convention is assumed.
    """
    if not header.color_channels_present or "red" not in \
            (records.dtype.names or ()):
        return None
    rgb = np.stack([records["red"], records["green"], records["blue"]],
                   axis=1)
    if len(rgb) and rgb.max() <= 255:
        divisor = 255.0
        log.debug("8-bit packed colors detected, normalizing by 255")
    else:
        divisor = 65535.0
    return (rgb / divisor).astype(np.float32)
