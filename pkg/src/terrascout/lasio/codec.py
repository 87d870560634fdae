"""Adaptive arithmetic coder and integer compressor used by LASzip 2.x streams.

Decoder and encoder are exact mirrors: the encoder exists so synthetic
corpora can be chunk-compressed in-repo (there is no third-party LAZ
writer in this environment), and so round-trip tests can exercise the
decoder on freshly generated files. All arithmetic follows the published
LASzip algorithm bit for bit, including 32-bit wraparound behaviour.
"""

from __future__ import annotations

from ..errors import DecoderDesync

AC_MAX_LENGTH = 0xFFFFFFFF
AC_MIN_LENGTH = 0x01000000

BM_LENGTH_SHIFT = 13
BM_MAX_COUNT = 1 << BM_LENGTH_SHIFT

DM_LENGTH_SHIFT = 15
DM_MAX_COUNT = 1 << DM_LENGTH_SHIFT


def u8_fold(n: int) -> int:
    return n & 0xFF

def u8_clamp(n: int) -> int:
    if n <= 0:
        return 0
    if n >= 255:
        return 255
    return n

def i32_wrap(n: int) -> int:
    n &= 0xFFFFFFFF
    return n - 0x100000000 if n >= 0x80000000 else n

def i64_wrap(n: int) -> int:
    n &= 0xFFFFFFFFFFFFFFFF
    return n - 0x10000000000000000 if n >= 0x8000000000000000 else n


class ArithmeticBitModel:
    __slots__ = ("bit_0_count", "bit_count", "bit_0_prob",
                 "update_cycle", "bits_until_update")

    def __init__(self):
        self.init()

    def init(self):
        # equiprobable start, frequent early updates
        self.bit_0_count = 1
        self.bit_count = 2
        self.bit_0_prob = 1 << (BM_LENGTH_SHIFT - 1)
        self.update_cycle = self.bits_until_update = 4

    def update(self):
        self.bit_count += self.update_cycle
        if self.bit_count >= BM_MAX_COUNT:
            self.bit_count = (self.bit_count + 1) >> 1
            self.bit_0_count = (self.bit_0_count + 1) >> 1
            if self.bit_0_count == self.bit_count:
                self.bit_count += 1
        scale = 0x80000000 // self.bit_count
        self.bit_0_prob = (self.bit_0_count * scale) >> (31 - BM_LENGTH_SHIFT)
        self.update_cycle = min((5 * self.update_cycle) >> 2, 64)
        self.bits_until_update = self.update_cycle


class ArithmeticModel:
    """Adaptive frequency table over num_symbols symbols.

    Decoder-side models additionally build a lookup table for alphabets
    larger than 16 symbols. Fresh-model state depends only on
    (num_symbols, compress), so it is computed once and copied; short
    decodes (chunk tables) create many models and would otherwise spend
    their time in init loops.
    """

    __slots__ = ("num_symbols", "compress", "distribution", "decoder_table",
                 "symbol_count", "total_count", "update_cycle",
                 "symbols_until_update", "last_symbol", "table_size",
                 "table_shift")

    _fresh: dict = {}

    def __init__(self, num_symbols: int, compress: bool):
        if num_symbols < 2 or num_symbols > 2048:
            raise ValueError("invalid symbol count")
        self.num_symbols = num_symbols
        self.compress = compress
        self.last_symbol = num_symbols - 1
        if not compress and num_symbols > 16:
            table_bits = 3
            while num_symbols > (1 << (table_bits + 2)):
                table_bits += 1
            self.table_shift = DM_LENGTH_SHIFT - table_bits
            self.table_size = 1 << table_bits
            self.decoder_table = [0] * (self.table_size + 2)
        else:
            self.table_shift = self.table_size = 0
            self.decoder_table = None
        template = self._fresh.get((num_symbols, compress))
        if template is None:
            self.distribution = [0] * num_symbols
            self.symbol_count = [1] * num_symbols
            self.total_count = 0
            self.update_cycle = num_symbols
            self._update()
            self.symbols_until_update = self.update_cycle = \
                (num_symbols + 6) >> 1
            self._fresh[(num_symbols, compress)] = (
                self.distribution[:],
                self.decoder_table[:] if self.decoder_table else None,
                self.total_count, self.update_cycle)
        else:
            dist, table, total, cycle = template
            self.distribution = dist[:]
            if table is not None:
                self.decoder_table = table[:]
            self.symbol_count = [1] * num_symbols
            self.total_count = total
            self.update_cycle = cycle
            self.symbols_until_update = cycle

    def init(self):
        self.symbol_count = [1] * self.num_symbols
        self.total_count = 0
        self.update_cycle = self.num_symbols
        self._update()
        self.symbols_until_update = self.update_cycle = \
            (self.num_symbols + 6) >> 1

    def _update(self):
        self.total_count += self.update_cycle
        if self.total_count > DM_MAX_COUNT:
            self.total_count = 0
            counts = self.symbol_count
            for i in range(self.num_symbols):
                counts[i] = (counts[i] + 1) >> 1
                self.total_count += counts[i]
        scale = 0x80000000 // self.total_count
        shift = 31 - DM_LENGTH_SHIFT
        acc = 0
        if self.compress or self.table_size == 0:
            dist = self.distribution
            counts = self.symbol_count
            for k in range(self.num_symbols):
                dist[k] = (scale * acc) >> shift
                acc += counts[k]
        else:
            dist = self.distribution
            counts = self.symbol_count
            table = self.decoder_table
            s = 0
            tshift = self.table_shift
            for k in range(self.num_symbols):
                dist[k] = (scale * acc) >> shift
                acc += counts[k]
                w = dist[k] >> tshift
                while s < w:
                    s += 1
                    table[s] = k - 1
            table[0] = 0
            while s <= self.table_size:
                s += 1
                table[s] = self.num_symbols - 1
        self.update_cycle = min((5 * self.update_cycle) >> 2,
                                (self.num_symbols + 6) << 3)
        self.symbols_until_update = self.update_cycle


class ArithmeticDecoder:
    """Decodes symbols from an in-memory byte range."""

    __slots__ = ("buf", "pos", "end", "length", "value")

    def __init__(self, buf, pos: int = 0, end: int | None = None):
        self.buf = buf
        self.pos = pos
        self.end = len(buf) if end is None else end
        self.length = 0
        self.value = 0

    def start(self):
        if self.pos + 4 > self.end:
            raise DecoderDesync("not enough bytes to start decoder")
        b = self.buf
        p = self.pos
        self.value = (b[p] << 24) | (b[p + 1] << 16) | (b[p + 2] << 8) | b[p + 3]
        self.pos = p + 4
        self.length = AC_MAX_LENGTH

    def _renorm(self):
        buf, pos, end = self.buf, self.pos, self.end
        value, length = self.value, self.length
        while length < AC_MIN_LENGTH:
            if pos >= end:
                raise DecoderDesync("decoder ran past chunk extent")
            value = ((value << 8) | buf[pos]) & 0xFFFFFFFF
            pos += 1
            length <<= 8
        self.pos, self.value, self.length = pos, value, length

    def decode_bit(self, m: ArithmeticBitModel) -> int:
        x = m.bit_0_prob * (self.length >> BM_LENGTH_SHIFT)
        if self.value < x:
            sym = 0
            self.length = x
            m.bit_0_count += 1
        else:
            sym = 1
            self.value -= x
            self.length -= x
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.bits_until_update -= 1
        if m.bits_until_update == 0:
            m.update()
        return sym

    def decode_symbol(self, m: ArithmeticModel) -> int:
        y = self.length
        dist = m.distribution
        if m.decoder_table is not None:
            self.length = length = self.length >> DM_LENGTH_SHIFT
            dv = self.value // length
            t = dv >> m.table_shift
            table = m.decoder_table
            sym = table[t]
            n = table[t + 1] + 1
            while n > sym + 1:
                k = (sym + n) >> 1
                if dist[k] > dv:
                    n = k
                else:
                    sym = k
            x = dist[sym] * length
            if sym != m.last_symbol:
                y = dist[sym + 1] * length
        else:
            x = sym = 0
            self.length = length = self.length >> DM_LENGTH_SHIFT
            n = m.num_symbols
            k = n >> 1
            value = self.value
            while True:
                z = length * dist[k]
                if z > value:
                    n = k
                    y = z
                else:
                    sym = k
                    x = z
                k = (sym + n) >> 1
                if k == sym:
                    break
        self.value -= x
        self.length = y - x
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.symbol_count[sym] += 1
        m.symbols_until_update -= 1
        if m.symbols_until_update == 0:
            m._update()
        return sym

    def read_bits(self, bits: int) -> int:
        if bits > 19:
            lower = self.read_bits(16)
            upper = self.read_bits(bits - 16)
            return (upper << 16) | lower
        self.length = length = self.length >> bits
        sym = self.value // length
        self.value -= length * sym
        if length < AC_MIN_LENGTH:
            self._renorm()
        return sym

    def read_int(self) -> int:
        return self.read_bits(32)


class ArithmeticEncoder:
    """Encodes symbols into an in-memory buffer; one instance per chunk."""

    __slots__ = ("out", "base", "length")

    def __init__(self):
        self.out = bytearray()
        self.base = 0
        self.length = AC_MAX_LENGTH

    def _propagate_carry(self):
        out = self.out
        p = len(out) - 1
        while out[p] == 0xFF:
            out[p] = 0
            p -= 1
        out[p] += 1

    def _renorm(self):
        base, length, out = self.base, self.length, self.out
        while length < AC_MIN_LENGTH:
            out.append((base >> 24) & 0xFF)
            base = (base << 8) & 0xFFFFFFFF
            length = (length << 8) & 0xFFFFFFFF
        self.base, self.length = base, length

    def encode_bit(self, m: ArithmeticBitModel, bit: int):
        x = m.bit_0_prob * (self.length >> BM_LENGTH_SHIFT)
        if bit == 0:
            self.length = x
            m.bit_0_count += 1
        else:
            init_base = self.base
            self.base = (self.base + x) & 0xFFFFFFFF
            self.length -= x
            if init_base > self.base:
                self._propagate_carry()
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.bits_until_update -= 1
        if m.bits_until_update == 0:
            m.update()

    def encode_symbol(self, m: ArithmeticModel, sym: int):
        init_base = self.base
        dist = m.distribution
        if sym == m.last_symbol:
            x = dist[sym] * (self.length >> DM_LENGTH_SHIFT)
            self.base = (self.base + x) & 0xFFFFFFFF
            self.length -= x
        else:
            length = self.length >> DM_LENGTH_SHIFT
            x = dist[sym] * length
            self.base = (self.base + x) & 0xFFFFFFFF
            self.length = dist[sym + 1] * length - x
        if init_base > self.base:
            self._propagate_carry()
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.symbol_count[sym] += 1
        m.symbols_until_update -= 1
        if m.symbols_until_update == 0:
            m._update()

    def write_bits(self, bits: int, sym: int):
        if bits > 19:
            self.write_bits(16, sym & 0xFFFF)
            sym >>= 16
            bits -= 16
        init_base = self.base
        self.length = length = self.length >> bits
        self.base = (self.base + sym * length) & 0xFFFFFFFF
        if init_base > self.base:
            self._propagate_carry()
        if length < AC_MIN_LENGTH:
            self._renorm()

    def write_int(self, value: int):
        self.write_bits(32, value & 0xFFFFFFFF)

    def done(self) -> bytes:
        init_base = self.base
        if self.length > 2 * AC_MIN_LENGTH:
            self.base = (self.base + AC_MIN_LENGTH) & 0xFFFFFFFF
            self.length = AC_MIN_LENGTH >> 1
            another_byte = True
        else:
            self.base = (self.base + (AC_MIN_LENGTH >> 1)) & 0xFFFFFFFF
            self.length = AC_MIN_LENGTH >> 9
            another_byte = False
        if init_base > self.base:
            self._propagate_carry()
        self._renorm()
        # zero padding keeps encoder byte count equal to the decoder's
        # 4-byte lookahead at start()
        self.out.append(0)
        self.out.append(0)
        if another_byte:
            self.out.append(0)
        return bytes(self.out)


class IntegerCompressor:
    """Context-modelled variable-width integer codec.

    Correctors are coded as an interval index k plus an offset inside the
    interval. Context models are allocated lazily: short-lived instances
    (one per chunk table) only pay for the few k values they actually see.
    """

    __slots__ = ("dec", "enc", "bits", "contexts", "bits_high",
                 "corr_bits", "corr_range", "corr_min", "corr_max",
                 "m_bits", "m_corrector", "k")

    def __init__(self, coder, bits: int = 16, contexts: int = 1,
                 bits_high: int = 8):
        if isinstance(coder, ArithmeticDecoder):
            self.dec, self.enc = coder, None
        else:
            self.dec, self.enc = None, coder
        self.bits = bits
        self.contexts = contexts
        self.bits_high = bits_high
        if 0 < bits < 32:
            self.corr_bits = bits
            self.corr_range = 1 << bits
            self.corr_min = -(self.corr_range // 2)
            self.corr_max = self.corr_min + self.corr_range - 1
        else:
            self.corr_bits = 32
            self.corr_range = 0
            self.corr_min = -0x80000000
            self.corr_max = 0x7FFFFFFF
        self.m_bits = [None] * contexts
        self.m_corrector = [None] * self.corr_bits
        self.k = 0

    def _bits_model(self, context: int) -> ArithmeticModel:
        m = self.m_bits[context]
        if m is None:
            m = ArithmeticModel(self.corr_bits + 1, self.enc is not None)
            self.m_bits[context] = m
        return m

    def _corrector_model(self, k: int):
        m = self.m_corrector[k]
        if m is None:
            if k == 0:
                m = ArithmeticBitModel()
            else:
                m = ArithmeticModel(1 << min(k, self.bits_high),
                                    self.enc is not None)
            self.m_corrector[k] = m
        return m

    # decoding

    def decompress(self, pred: int, context: int = 0) -> int:
        real = pred + self._read_corrector(self._bits_model(context))
        if self.corr_range:
            if real < 0:
                real += self.corr_range
            elif real >= self.corr_range:
                real -= self.corr_range
        else:
            real = i32_wrap(real)
        return real

    def _read_corrector(self, m_bits: ArithmeticModel) -> int:
        dec = self.dec
        k = dec.decode_symbol(m_bits)
        self.k = k
        if k:
            if k < 32:
                if k <= self.bits_high:
                    c = dec.decode_symbol(self._corrector_model(k))
                else:
                    k1 = k - self.bits_high
                    c = dec.decode_symbol(self._corrector_model(k))
                    c1 = dec.read_bits(k1)
                    c = (c << k1) | c1
                if c >= (1 << (k - 1)):
                    c += 1
                else:
                    c -= (1 << k) - 1
            else:
                c = self.corr_min
        else:
            c = dec.decode_bit(self._corrector_model(0))
        return c

    # encoding

    def compress(self, pred: int, real: int, context: int = 0):
        corr = i32_wrap(real - pred)
        if self.corr_range:
            if corr < self.corr_min:
                corr += self.corr_range
            elif corr > self.corr_max:
                corr -= self.corr_range
        self._write_corrector(corr, self._bits_model(context))

    def _write_corrector(self, c: int, m_bits: ArithmeticModel):
        enc = self.enc
        k = 0
        c1 = -c if c <= 0 else c - 1
        while c1:
            c1 >>= 1
            k += 1
        self.k = k
        enc.encode_symbol(m_bits, k)
        if k:
            if k < 32:
                if c >= 0:
                    c -= 1
                else:
                    c += (1 << k) - 1
                if k <= self.bits_high:
                    enc.encode_symbol(self._corrector_model(k), c)
                else:
                    k1 = k - self.bits_high
                    enc.encode_symbol(self._corrector_model(k), c >> k1)
                    enc.write_bits(k1, c & ((1 << k1) - 1))
        else:
            enc.encode_bit(self._corrector_model(0), c)
