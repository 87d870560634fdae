"""LASzip 2.x item codecs for point formats 0-3.

Each codec pairs a reader and a writer over the shared arithmetic coder.
Points travel through here as plain tuples of raw record integers; bulk
conversion to numpy happens one layer up in reader.py/writer.py.
"""

from __future__ import annotations

import struct

from .codec import (ArithmeticBitModel, ArithmeticModel, IntegerCompressor,
                    i32_wrap, i64_wrap, u8_clamp, u8_fold)

# raw record field order used throughout:
# point10: (x, y, z, intensity, bitfield, classification, scan_angle,
#           user_data, point_source_id)
# gps appended as one u64 (IEEE-754 double bit pattern)
# rgb appended as (red, green, blue) u16

POINT10_STRUCT = struct.Struct("<iiiHBBBBH")
GPS_STRUCT = struct.Struct("<Q")
RGB_STRUCT = struct.Struct("<HHH")

NUMBER_RETURN_MAP = (
    (15, 14, 13, 12, 11, 10, 9, 8),
    (14, 0, 1, 3, 6, 10, 10, 9),
    (13, 1, 2, 4, 7, 11, 11, 10),
    (12, 3, 4, 5, 8, 12, 12, 11),
    (11, 6, 7, 8, 9, 13, 13, 12),
    (10, 10, 11, 12, 13, 14, 14, 13),
    (9, 10, 11, 12, 13, 14, 15, 14),
    (8, 9, 10, 11, 12, 13, 14, 15),
)

NUMBER_RETURN_LEVEL = (
    (0, 1, 2, 3, 4, 5, 6, 7),
    (1, 0, 1, 2, 3, 4, 5, 6),
    (2, 1, 0, 1, 2, 3, 4, 5),
    (3, 2, 1, 0, 1, 2, 3, 4),
    (4, 3, 2, 1, 0, 1, 2, 3),
    (5, 4, 3, 2, 1, 0, 1, 2),
    (6, 5, 4, 3, 2, 1, 0, 1),
    (7, 6, 5, 4, 3, 2, 1, 0),
)


class StreamingMedian5:
    """Running median of the last five inserted values."""

    __slots__ = ("values", "high")

    def __init__(self):
        self.values = [0, 0, 0, 0, 0]
        self.high = True

    def add(self, v):
        values = self.values
        if self.high:
            if v < values[2]:
                values[4] = values[3]
                values[3] = values[2]
                if v < values[0]:
                    values[2] = values[1]
                    values[1] = values[0]
                    values[0] = v
                elif v < values[1]:
                    values[2] = values[1]
                    values[1] = v
                else:
                    values[2] = v
            else:
                if v < values[3]:
                    values[4] = values[3]
                    values[3] = v
                else:
                    values[4] = v
                self.high = False
        else:
            if v > values[2]:
                values[0] = values[1]
                values[1] = values[2]
                if v > values[4]:
                    values[2] = values[3]
                    values[3] = values[4]
                    values[4] = v
                elif v > values[3]:
                    values[2] = values[3]
                    values[3] = v
                else:
                    values[2] = v
            else:
                if v > values[1]:
                    values[0] = values[1]
                    values[1] = v
                else:
                    values[0] = v
                self.high = True

    def get(self):
        return self.values[2]


def _zero_bit_0(n):
    return n & 0xFFFFFFFE


class Point10Codec:
    """POINT10 v2: predicts deltas from per-return-context running state."""

    def __init__(self, coder, encoding: bool):
        self.coder = coder
        self.encoding = encoding
        self.m_changed_values = ArithmeticModel(64, encoding)
        self.ic_intensity = IntegerCompressor(coder, 16, 4)
        self.m_scan_angle_rank = [ArithmeticModel(256, encoding),
                                  ArithmeticModel(256, encoding)]
        self.ic_point_source_id = IntegerCompressor(coder, 16)
        self.m_bit_byte = [None] * 256
        self.m_classification = [None] * 256
        self.m_user_data = [None] * 256
        self.ic_dx = IntegerCompressor(coder, 32, 2)
        self.ic_dy = IntegerCompressor(coder, 32, 22)
        self.ic_z = IntegerCompressor(coder, 32, 20)
        self.last_x_diff_median5 = [StreamingMedian5() for _ in range(16)]
        self.last_y_diff_median5 = [StreamingMedian5() for _ in range(16)]
        self.last_intensity = [0] * 16
        self.last_height = [0] * 8
        self.last = None

    def init(self, item):
        # fresh per-chunk state; models are created lazily and stay fresh
        # because one codec instance serves exactly one chunk
        self.last = list(item)
        self.last[3] = 0  # intensity starts at zero

    def _byte_model(self, table, value):
        m = table[value]
        if m is None:
            m = ArithmeticModel(256, self.encoding)
            table[value] = m
        return m

    def read(self):
        dec = self.coder
        last = self.last
        changed_values = dec.decode_symbol(self.m_changed_values)

        if changed_values & 0b100000:
            m = self._byte_model(self.m_bit_byte, last[4])
            last[4] = dec.decode_symbol(m)

        bitfield = last[4]
        r = bitfield & 0b111
        n = (bitfield >> 3) & 0b111
        m_ctx = NUMBER_RETURN_MAP[n][r]
        lvl = NUMBER_RETURN_LEVEL[n][r]

        if changed_values & 0b10000:
            ctx = m_ctx if m_ctx < 3 else 3
            last[3] = self.ic_intensity.decompress(
                self.last_intensity[m_ctx], ctx)
            self.last_intensity[m_ctx] = last[3]
        else:
            last[3] = self.last_intensity[m_ctx]

        if changed_values & 0b1000:
            m = self._byte_model(self.m_classification, last[5])
            last[5] = dec.decode_symbol(m)

        if changed_values & 0b100:
            f = (bitfield >> 6) & 1
            val = dec.decode_symbol(self.m_scan_angle_rank[f])
            last[6] = u8_fold(val + last[6])

        if changed_values & 0b10:
            m = self._byte_model(self.m_user_data, last[7])
            last[7] = dec.decode_symbol(m)

        if changed_values & 0b1:
            last[8] = self.ic_point_source_id.decompress(last[8])

        median = self.last_x_diff_median5[m_ctx].get()
        diff = self.ic_dx.decompress(median, 1 if n == 1 else 0)
        last[0] = i32_wrap(last[0] + diff)
        self.last_x_diff_median5[m_ctx].add(diff)

        median = self.last_y_diff_median5[m_ctx].get()
        k_bits = self.ic_dx.k
        ctx = (1 if n == 1 else 0) + \
            (_zero_bit_0(k_bits) if k_bits < 20 else 20)
        diff = self.ic_dy.decompress(median, ctx)
        last[1] = i32_wrap(last[1] + diff)
        self.last_y_diff_median5[m_ctx].add(diff)

        k_bits = (self.ic_dx.k + self.ic_dy.k) // 2
        ctx = (1 if n == 1 else 0) + \
            (_zero_bit_0(k_bits) if k_bits < 18 else 18)
        last[2] = self.ic_z.decompress(self.last_height[lvl], ctx)
        self.last_height[lvl] = last[2]

        return tuple(last)

    def write(self, item):
        enc = self.coder
        last = self.last
        x, y, z, intensity, bitfield, classification, scan_angle, \
            user_data, point_source_id = item

        r = bitfield & 0b111
        n = (bitfield >> 3) & 0b111
        m_ctx = NUMBER_RETURN_MAP[n][r]
        lvl = NUMBER_RETURN_LEVEL[n][r]

        changed_values = ((bitfield != last[4]) << 5) | \
            ((intensity != self.last_intensity[m_ctx]) << 4) | \
            ((classification != last[5]) << 3) | \
            ((scan_angle != last[6]) << 2) | \
            ((user_data != last[7]) << 1) | \
            (point_source_id != last[8])
        enc.encode_symbol(self.m_changed_values, changed_values)

        if changed_values & 0b100000:
            m = self._byte_model(self.m_bit_byte, last[4])
            enc.encode_symbol(m, bitfield)

        if changed_values & 0b10000:
            ctx = m_ctx if m_ctx < 3 else 3
            self.ic_intensity.compress(
                self.last_intensity[m_ctx], intensity, ctx)
            self.last_intensity[m_ctx] = intensity

        if changed_values & 0b1000:
            m = self._byte_model(self.m_classification, last[5])
            enc.encode_symbol(m, classification)

        if changed_values & 0b100:
            f = (bitfield >> 6) & 1
            enc.encode_symbol(self.m_scan_angle_rank[f],
                              u8_fold(scan_angle - last[6]))

        if changed_values & 0b10:
            m = self._byte_model(self.m_user_data, last[7])
            enc.encode_symbol(m, user_data)

        if changed_values & 0b1:
            self.ic_point_source_id.compress(last[8], point_source_id)

        median = self.last_x_diff_median5[m_ctx].get()
        diff = i32_wrap(x - last[0])
        self.ic_dx.compress(median, diff, 1 if n == 1 else 0)
        self.last_x_diff_median5[m_ctx].add(diff)

        median = self.last_y_diff_median5[m_ctx].get()
        k_bits = self.ic_dx.k
        ctx = (1 if n == 1 else 0) + \
            (_zero_bit_0(k_bits) if k_bits < 20 else 20)
        diff = i32_wrap(y - last[1])
        self.ic_dy.compress(median, diff, ctx)
        self.last_y_diff_median5[m_ctx].add(diff)

        k_bits = (self.ic_dx.k + self.ic_dy.k) // 2
        ctx = (1 if n == 1 else 0) + \
            (_zero_bit_0(k_bits) if k_bits < 18 else 18)
        self.ic_z.compress(self.last_height[lvl], z, ctx)
        self.last_height[lvl] = z

        self.last = [x, y, z, intensity, bitfield, classification,
                     scan_angle, user_data, point_source_id]


GPSTIME_MULTI = 500
GPSTIME_MULTI_MINUS = -10
GPSTIME_MULTI_TOTAL = GPSTIME_MULTI - GPSTIME_MULTI_MINUS + 6
GPSTIME_MULTI_UNCHANGED = GPSTIME_MULTI - GPSTIME_MULTI_MINUS + 1
GPSTIME_MULTI_CODE_FULL = GPSTIME_MULTI - GPSTIME_MULTI_MINUS + 2


def _i32_quantize(f):
    # round half away from zero, like the reference float path
    return int(f + 0.5) if f >= 0 else int(f - 0.5)


class GpsTimeCodec:
    """GPSTIME11 v2: four interleaved time sequences, integer-diff coded."""

    def __init__(self, coder, encoding: bool):
        self.coder = coder
        self.m_gpstime_multi = ArithmeticModel(GPSTIME_MULTI_TOTAL, encoding)
        self.m_gpstime_0diff = ArithmeticModel(6, encoding)
        self.ic_gpstime = IntegerCompressor(coder, 32, 9)
        self.last = 0
        self.next = 0
        self.last_gpstime = [0, 0, 0, 0]       # u64 bit patterns
        self.last_gpstime_diff = [0, 0, 0, 0]
        self.multi_extreme_counter = [0, 0, 0, 0]

    def init(self, gps_u64: int):
        self.last = 0
        self.next = 0
        self.last_gpstime = [gps_u64, 0, 0, 0]
        self.last_gpstime_diff = [0, 0, 0, 0]
        self.multi_extreme_counter = [0, 0, 0, 0]

    def _hi32(self, u64: int) -> int:
        return i32_wrap(u64 >> 32)

    def read(self) -> int:
        dec = self.coder
        if self.last_gpstime_diff[self.last] == 0:
            multi = dec.decode_symbol(self.m_gpstime_0diff)
            if multi == 1:
                val = self.ic_gpstime.decompress(0, 0)
                self.last_gpstime_diff[self.last] = val
                self.last_gpstime[self.last] = \
                    (self.last_gpstime[self.last] + val) & 0xFFFFFFFFFFFFFFFF
                self.multi_extreme_counter[self.last] = 0
            elif multi == 2:
                self.next = (self.next + 1) & 3
                val = self.ic_gpstime.decompress(
                    self._hi32(self.last_gpstime[self.last]), 8)
                full = ((val & 0xFFFFFFFF) << 32) | dec.read_int()
                self.last_gpstime[self.next] = full
                self.last = self.next
                self.last_gpstime_diff[self.last] = 0
                self.multi_extreme_counter[self.last] = 0
            elif multi > 2:
                self.last = (self.last + multi - 2) & 3
                return self.read()
        else:
            multi = dec.decode_symbol(self.m_gpstime_multi)
            if multi == 1:
                pred = self.last_gpstime_diff[self.last]
                val = self.ic_gpstime.decompress(pred, 1)
                self.last_gpstime[self.last] = \
                    (self.last_gpstime[self.last] + val) & 0xFFFFFFFFFFFFFFFF
                self.multi_extreme_counter[self.last] = 0
            elif multi < GPSTIME_MULTI_UNCHANGED:
                if multi == 0:
                    gpstime_diff = self.ic_gpstime.decompress(0, 7)
                    self.multi_extreme_counter[self.last] += 1
                    if self.multi_extreme_counter[self.last] > 3:
                        self.last_gpstime_diff[self.last] = gpstime_diff
                        self.multi_extreme_counter[self.last] = 0
                elif multi < GPSTIME_MULTI:
                    pred = i32_wrap(
                        multi * self.last_gpstime_diff[self.last])
                    ctx = 2 if multi < 10 else 3
                    gpstime_diff = self.ic_gpstime.decompress(pred, ctx)
                elif multi == GPSTIME_MULTI:
                    pred = i32_wrap(
                        GPSTIME_MULTI * self.last_gpstime_diff[self.last])
                    gpstime_diff = self.ic_gpstime.decompress(pred, 4)
                    self.multi_extreme_counter[self.last] += 1
                    if self.multi_extreme_counter[self.last] > 3:
                        self.last_gpstime_diff[self.last] = gpstime_diff
                        self.multi_extreme_counter[self.last] = 0
                else:
                    multi = GPSTIME_MULTI - multi
                    if multi > GPSTIME_MULTI_MINUS:
                        pred = i32_wrap(
                            multi * self.last_gpstime_diff[self.last])
                        gpstime_diff = self.ic_gpstime.decompress(pred, 5)
                    else:
                        pred = i32_wrap(GPSTIME_MULTI_MINUS *
                                        self.last_gpstime_diff[self.last])
                        gpstime_diff = self.ic_gpstime.decompress(pred, 6)
                        self.multi_extreme_counter[self.last] += 1
                        if self.multi_extreme_counter[self.last] > 3:
                            self.last_gpstime_diff[self.last] = gpstime_diff
                            self.multi_extreme_counter[self.last] = 0
                self.last_gpstime[self.last] = \
                    (self.last_gpstime[self.last] + gpstime_diff) \
                    & 0xFFFFFFFFFFFFFFFF
            elif multi == GPSTIME_MULTI_CODE_FULL:
                self.next = (self.next + 1) & 3
                val = self.ic_gpstime.decompress(
                    self._hi32(self.last_gpstime[self.last]), 8)
                full = ((val & 0xFFFFFFFF) << 32) | dec.read_int()
                self.last_gpstime[self.next] = full
                self.last = self.next
                self.last_gpstime_diff[self.last] = 0
                self.multi_extreme_counter[self.last] = 0
            elif multi > GPSTIME_MULTI_CODE_FULL:
                self.last = (self.last + multi - GPSTIME_MULTI_CODE_FULL) & 3
                return self.read()
        return self.last_gpstime[self.last]

    def write(self, gps_u64: int):
        enc = self.coder
        if self.last_gpstime_diff[self.last] == 0:
            if gps_u64 == self.last_gpstime[self.last]:
                enc.encode_symbol(self.m_gpstime_0diff, 0)
                return
            diff64 = i64_wrap(gps_u64 - self.last_gpstime[self.last])
            diff32 = i32_wrap(diff64)
            if diff64 == diff32:
                enc.encode_symbol(self.m_gpstime_0diff, 1)
                self.ic_gpstime.compress(0, diff32, 0)
                self.last_gpstime_diff[self.last] = diff32
                self.multi_extreme_counter[self.last] = 0
            else:
                for i in range(1, 4):
                    od = i64_wrap(
                        gps_u64 - self.last_gpstime[(self.last + i) & 3])
                    if od == i32_wrap(od):
                        enc.encode_symbol(self.m_gpstime_0diff, i + 2)
                        self.last = (self.last + i) & 3
                        self.write(gps_u64)
                        return
                enc.encode_symbol(self.m_gpstime_0diff, 2)
                self.ic_gpstime.compress(
                    self._hi32(self.last_gpstime[self.last]),
                    self._hi32(gps_u64), 8)
                enc.write_int(gps_u64 & 0xFFFFFFFF)
                self.next = (self.next + 1) & 3
                self.last = self.next
                self.last_gpstime_diff[self.last] = 0
                self.multi_extreme_counter[self.last] = 0
            self.last_gpstime[self.last] = gps_u64
        else:
            if gps_u64 == self.last_gpstime[self.last]:
                enc.encode_symbol(self.m_gpstime_multi,
                                  GPSTIME_MULTI_UNCHANGED)
                return
            diff64 = i64_wrap(gps_u64 - self.last_gpstime[self.last])
            diff32 = i32_wrap(diff64)
            if diff64 == diff32:
                import numpy as np
                multi_f = np.float32(diff32) / np.float32(
                    self.last_gpstime_diff[self.last])
                multi = _i32_quantize(float(multi_f))
                if multi == 1:
                    enc.encode_symbol(self.m_gpstime_multi, 1)
                    self.ic_gpstime.compress(
                        self.last_gpstime_diff[self.last], diff32, 1)
                    self.multi_extreme_counter[self.last] = 0
                elif multi > 0:
                    if multi < GPSTIME_MULTI:
                        enc.encode_symbol(self.m_gpstime_multi, multi)
                        pred = i32_wrap(
                            multi * self.last_gpstime_diff[self.last])
                        self.ic_gpstime.compress(
                            pred, diff32, 2 if multi < 10 else 3)
                    else:
                        enc.encode_symbol(self.m_gpstime_multi,
                                          GPSTIME_MULTI)
                        pred = i32_wrap(GPSTIME_MULTI *
                                        self.last_gpstime_diff[self.last])
                        self.ic_gpstime.compress(pred, diff32, 4)
                        self.multi_extreme_counter[self.last] += 1
                        if self.multi_extreme_counter[self.last] > 3:
                            self.last_gpstime_diff[self.last] = diff32
                            self.multi_extreme_counter[self.last] = 0
                elif multi < 0:
                    if multi > GPSTIME_MULTI_MINUS:
                        enc.encode_symbol(self.m_gpstime_multi,
                                          GPSTIME_MULTI - multi)
                        pred = i32_wrap(
                            multi * self.last_gpstime_diff[self.last])
                        self.ic_gpstime.compress(pred, diff32, 5)
                    else:
                        enc.encode_symbol(
                            self.m_gpstime_multi,
                            GPSTIME_MULTI - GPSTIME_MULTI_MINUS)
                        pred = i32_wrap(GPSTIME_MULTI_MINUS *
                                        self.last_gpstime_diff[self.last])
                        self.ic_gpstime.compress(pred, diff32, 6)
                        self.multi_extreme_counter[self.last] += 1
                        if self.multi_extreme_counter[self.last] > 3:
                            self.last_gpstime_diff[self.last] = diff32
                            self.multi_extreme_counter[self.last] = 0
                else:
                    enc.encode_symbol(self.m_gpstime_multi, 0)
                    self.ic_gpstime.compress(0, diff32, 7)
                    self.multi_extreme_counter[self.last] += 1
                    if self.multi_extreme_counter[self.last] > 3:
                        self.last_gpstime_diff[self.last] = diff32
                        self.multi_extreme_counter[self.last] = 0
            else:
                for i in range(1, 4):
                    od = i64_wrap(
                        gps_u64 - self.last_gpstime[(self.last + i) & 3])
                    if od == i32_wrap(od):
                        enc.encode_symbol(self.m_gpstime_multi,
                                          GPSTIME_MULTI_CODE_FULL + i)
                        self.last = (self.last + i) & 3
                        self.write(gps_u64)
                        return
                enc.encode_symbol(self.m_gpstime_multi,
                                  GPSTIME_MULTI_CODE_FULL)
                self.ic_gpstime.compress(
                    self._hi32(self.last_gpstime[self.last]),
                    self._hi32(gps_u64), 8)
                enc.write_int(gps_u64 & 0xFFFFFFFF)
                self.next = (self.next + 1) & 3
                self.last = self.next
                self.last_gpstime_diff[self.last] = 0
                self.multi_extreme_counter[self.last] = 0
            self.last_gpstime[self.last] = gps_u64


def _c_div2(v: int) -> int:
    # C integer division truncates toward zero
    return -((-v) >> 1) if v < 0 else v >> 1


class RgbCodec:
    """RGB12 v2: byte-wise delta coding with cross-channel prediction."""

    def __init__(self, coder, encoding: bool):
        self.coder = coder
        self.m_byte_used = ArithmeticModel(128, encoding)
        self.m_rgb_diff = [ArithmeticModel(256, encoding) for _ in range(6)]
        self.last = (0, 0, 0)

    def init(self, rgb):
        self.last = tuple(rgb)

    def read(self):
        dec = self.coder
        lr, lg, lb = self.last
        sym = dec.decode_symbol(self.m_byte_used)
        if sym & 1:
            corr = dec.decode_symbol(self.m_rgb_diff[0])
            r_l = u8_fold(corr + (lr & 0xFF))
        else:
            r_l = lr & 0xFF
        if sym & 2:
            corr = dec.decode_symbol(self.m_rgb_diff[1])
            r_h = u8_fold(corr + (lr >> 8))
        else:
            r_h = lr >> 8
        red = r_l | (r_h << 8)
        if sym & 64:
            diff = r_l - (lr & 0xFF)
            if sym & 4:
                corr = dec.decode_symbol(self.m_rgb_diff[2])
                g_l = u8_fold(corr + u8_clamp(diff + (lg & 0xFF)))
            else:
                g_l = lg & 0xFF
            if sym & 16:
                diff = _c_div2(diff + g_l - (lg & 0xFF))
                corr = dec.decode_symbol(self.m_rgb_diff[4])
                b_l = u8_fold(corr + u8_clamp(diff + (lb & 0xFF)))
            else:
                b_l = lb & 0xFF
            diff = r_h - (lr >> 8)
            if sym & 8:
                corr = dec.decode_symbol(self.m_rgb_diff[3])
                g_h = u8_fold(corr + u8_clamp(diff + (lg >> 8)))
            else:
                g_h = lg >> 8
            if sym & 32:
                diff = _c_div2(diff + g_h - (lg >> 8))
                corr = dec.decode_symbol(self.m_rgb_diff[5])
                b_h = u8_fold(corr + u8_clamp(diff + (lb >> 8)))
            else:
                b_h = lb >> 8
            green = g_l | (g_h << 8)
            blue = b_l | (b_h << 8)
        else:
            green = red
            blue = red
        self.last = (red, green, blue)
        return self.last

    def write(self, rgb):
        enc = self.coder
        red, green, blue = rgb
        lr, lg, lb = self.last
        sym = (((lr & 0x00FF) != (red & 0x00FF)) << 0) | \
              (((lr & 0xFF00) != (red & 0xFF00)) << 1) | \
              (((lg & 0x00FF) != (green & 0x00FF)) << 2) | \
              (((lg & 0xFF00) != (green & 0xFF00)) << 3) | \
              (((lb & 0x00FF) != (blue & 0x00FF)) << 4) | \
              (((lb & 0xFF00) != (blue & 0xFF00)) << 5)
        sym |= (((red & 0x00FF) != (green & 0x00FF)) or
                ((red & 0x00FF) != (blue & 0x00FF)) or
                ((red & 0xFF00) != (green & 0xFF00)) or
                ((red & 0xFF00) != (blue & 0xFF00))) << 6
        enc.encode_symbol(self.m_byte_used, sym)
        diff_l = 0
        diff_h = 0
        if sym & 1:
            diff_l = (red & 0xFF) - (lr & 0xFF)
            enc.encode_symbol(self.m_rgb_diff[0], u8_fold(diff_l))
        if sym & 2:
            diff_h = (red >> 8) - (lr >> 8)
            enc.encode_symbol(self.m_rgb_diff[1], u8_fold(diff_h))
        if sym & 64:
            if sym & 4:
                corr = (green & 0xFF) - u8_clamp(diff_l + (lg & 0xFF))
                enc.encode_symbol(self.m_rgb_diff[2], u8_fold(corr))
            if sym & 16:
                diff_l = _c_div2(diff_l + (green & 0xFF) - (lg & 0xFF))
                corr = (blue & 0xFF) - u8_clamp(diff_l + (lb & 0xFF))
                enc.encode_symbol(self.m_rgb_diff[4], u8_fold(corr))
            if sym & 8:
                corr = (green >> 8) - u8_clamp(diff_h + (lg >> 8))
                enc.encode_symbol(self.m_rgb_diff[3], u8_fold(corr))
            if sym & 32:
                diff_h = _c_div2(diff_h + (green >> 8) - (lg >> 8))
                corr = (blue >> 8) - u8_clamp(diff_h + (lb >> 8))
                enc.encode_symbol(self.m_rgb_diff[5], u8_fold(corr))
        self.last = (red, green, blue)
