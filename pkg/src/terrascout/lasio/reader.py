"""Tile scanning, chunk tables, chunk points, and chunk decoding.

The design splits cheap metadata access (header-only scans, raw chunk
points) from the expensive arithmetic decode (single chunks or whole
tiles), so an overview of a huge dataset never touches the decoder.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import (CorruptChunkTable, DecoderDesync, OutOfBoundsRead,
                      UnsupportedFormat)
from .codec import ArithmeticDecoder, IntegerCompressor
from .header import (COMPRESSOR_POINTWISE_CHUNKED, ITEM_GPSTIME11,
                     ITEM_POINT10, ITEM_RGB12, LasHeader, parse_header)
from .items import (GPS_STRUCT, POINT10_STRUCT, RGB_STRUCT, GpsTimeCodec,
                    Point10Codec, RgbCodec)
from .records import colors, positions, record_dtype

DEFAULT_CHUNK_SIZE = 50_000
SECTOR = 4096

DECODABLE_FORMATS = frozenset({0, 1, 2, 3})


@dataclass
class ChunkRef:
    """Random-access handle for one compressed chunk."""
    byte_offset: int
    point_count: int
    chunk_index: int
    byte_size: int = 0


@dataclass
class GeoPoint:
    """One decoded point in model space."""
    position: tuple[float, float, float]
    rgb: tuple[float, float, float] | None
    source_tile: int


@dataclass
class TileMeta:
    tile_id: int
    path: str
    header: LasHeader
    chunk_refs: list[ChunkRef] | None = None
    chunk_point_range: tuple[int, int] | None = None
    file_size: int = 0

    @property
    def is_compressed(self) -> bool:
        return self.header.is_compressed

    @property
    def chunk_size(self) -> int:
        lz = self.header.laszip
        if lz is not None and not lz.variable_chunks:
            return lz.chunk_size
        return DEFAULT_CHUNK_SIZE

    def num_chunks(self) -> int:
        if self.chunk_refs is not None:
            return len(self.chunk_refs)
        cs = self.chunk_size
        return -(-self.header.point_count // cs)


@dataclass
class ScanResult:
    tiles: list[TileMeta]
    errors: list[tuple[str, Exception]] = field(default_factory=list)

    def dataset_bbox(self):
        if not self.tiles:
            return None
        mins = np.min([t.header.bbox_min for t in self.tiles], axis=0)
        maxs = np.max([t.header.bbox_max for t in self.tiles], axis=0)
        return mins, maxs


def _read_header_region(path: str) -> tuple[bytes, int]:
    """Read exactly the public header + VLR region of one file."""
    with open(path, "rb") as fp:
        head = fp.read(375)
        if len(head) < 227:
            return head, os.fstat(fp.fileno()).st_size
        point_data_offset = struct.unpack_from("<I", head, 96)[0]
        if point_data_offset > len(head):
            head += fp.read(point_data_offset - len(head))
        size = os.fstat(fp.fileno()).st_size
    return head, size


def scan_tile(path: str, tile_id: int) -> TileMeta:
    raw, size = _read_header_region(path)
    header = parse_header(raw)
    return TileMeta(tile_id=tile_id, path=path, header=header,
                    file_size=size)


def scan_dataset(paths: list[str], max_workers: int = 8) -> ScanResult:
    """Parse every file's header concurrently; header bytes only.

    Per-file failures are collected, never raised; output tiles keep the
    input ordering.
    """
    result = ScanResult(tiles=[])
    slots: list[TileMeta | None] = [None] * len(paths)

    def work(i_path):
        i, path = i_path
        try:
            slots[i] = scan_tile(path, i)
        except Exception as exc:  # noqa: BLE001 - per-file isolation
            result.errors.append((path, exc))

    if paths:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(work, enumerate(paths)))
    result.tiles = [t for t in slots if t is not None]
    return result


def read_chunk_table(tile: TileMeta) -> list[ChunkRef]:
    """Decode the LAZ chunk table into byte offsets and point counts."""
    fd = os.open(tile.path, os.O_RDONLY)
    try:
        return _read_chunk_table_fd(tile, fd, os.fstat(fd).st_size)
    finally:
        os.close(fd)


def _read_chunk_table_fd(tile: TileMeta, fd: int,
                         file_size: int) -> list[ChunkRef]:
    header = tile.header
    lz = header.laszip
    if lz is None:
        raise UnsupportedFormat("chunk tables exist only in LAZ files")
    if lz.compressor != COMPRESSOR_POINTWISE_CHUNKED:
        raise UnsupportedFormat(f"compressor {lz.compressor} not supported")

    raw = os.pread(fd, 8, header.point_data_offset)
    if len(raw) < 8:
        raise CorruptChunkTable("missing chunk table pointer")
    table_pos = struct.unpack("<q", raw)[0]
    chunks_start = header.point_data_offset + 8
    if table_pos == -1:
        # table appended by a non-seekable writer; real position is in
        # the final 8 bytes
        table_pos = struct.unpack("<q", os.pread(fd, 8, file_size - 8))[0]
    if not chunks_start <= table_pos <= file_size - 8:
        raise CorruptChunkTable(
            f"chunk table pointer {table_pos} outside file")
    table = os.pread(fd, file_size - table_pos, table_pos)

    version, n_chunks = struct.unpack_from("<II", table, 0)
    if version != 0:
        raise CorruptChunkTable(f"unknown chunk table version {version}")

    counts: list[int] = []
    sizes: list[int] = []
    if n_chunks > 0:
        dec = ArithmeticDecoder(table, pos=8)
        try:
            dec.start()
            ic = IntegerCompressor(dec, 32, 2)
            prev_count = 0
            prev_size = 0
            for _ in range(n_chunks):
                if lz.variable_chunks:
                    prev_count = ic.decompress(prev_count, 0)
                    counts.append(prev_count)
                prev_size = ic.decompress(prev_size, 1)
                sizes.append(prev_size)
        except DecoderDesync as exc:
            raise CorruptChunkTable(str(exc)) from exc

    if not lz.variable_chunks:
        cs = lz.chunk_size
        remaining = header.point_count
        for _ in range(n_chunks):
            counts.append(min(cs, remaining))
            remaining -= min(cs, remaining)

    if sum(counts) != header.point_count:
        raise CorruptChunkTable(
            f"chunk counts sum to {sum(counts)}, header says "
            f"{header.point_count}")

    refs = []
    offset = chunks_start
    for i, (count, size) in enumerate(zip(counts, sizes)):
        if size <= 0:
            raise CorruptChunkTable("non-positive chunk byte size")
        refs.append(ChunkRef(byte_offset=offset, point_count=count,
                             chunk_index=i, byte_size=size))
        offset += size
    if offset > table_pos:
        raise CorruptChunkTable("chunk extents overlap the chunk table")
    tile.chunk_refs = refs
    return refs


def _las_chunk_refs(tile: TileMeta, stride: int) -> list[ChunkRef]:
    header = tile.header
    refs = []
    remaining = header.point_count
    idx = 0
    while remaining > 0:
        count = min(stride, remaining)
        refs.append(ChunkRef(
            byte_offset=header.point_data_offset +
            idx * stride * header.point_record_length,
            point_count=count, chunk_index=idx,
            byte_size=count * header.point_record_length))
        remaining -= count
        idx += 1
    return refs


def ensure_chunk_refs(tile: TileMeta,
                      las_stride: int = DEFAULT_CHUNK_SIZE) -> list[ChunkRef]:
    if tile.chunk_refs is None:
        if tile.is_compressed:
            read_chunk_table(tile)
        else:
            tile.chunk_refs = _las_chunk_refs(tile, las_stride)
    return tile.chunk_refs


def _raw_record(buf: bytes, offset: int, fmt: int) -> tuple:
    """Unpack one raw point record starting at offset."""
    row = POINT10_STRUCT.unpack_from(buf, offset)
    offset += POINT10_STRUCT.size
    if fmt in (1, 3):
        row += GPS_STRUCT.unpack_from(buf, offset)
        offset += GPS_STRUCT.size
    if fmt in (2, 3):
        row += RGB_STRUCT.unpack_from(buf, offset)
    return row


def read_chunk_points(tile: TileMeta,
                      las_stride: int = DEFAULT_CHUNK_SIZE) -> np.ndarray:
    """Raw first record of every chunk, one 4 kB-aligned pread per chunk."""
    header = tile.header
    fmt = header.point_record_format
    if tile.is_compressed and fmt not in DECODABLE_FORMATS:
        raise UnsupportedFormat(
            f"compressed point format {fmt} not supported")
    rec_len = header.point_record_length
    rows = []
    fd = os.open(tile.path, os.O_RDONLY)
    try:
        size = os.fstat(fd).st_size
        if tile.chunk_refs is None:
            if tile.is_compressed:
                _read_chunk_table_fd(tile, fd, size)
            else:
                tile.chunk_refs = _las_chunk_refs(tile, las_stride)
        refs = tile.chunk_refs
        for ref in refs:
            if ref.byte_offset + rec_len > size:
                raise OutOfBoundsRead(
                    f"chunk {ref.chunk_index} offset beyond file end")
            aligned = (ref.byte_offset // SECTOR) * SECTOR
            span = ref.byte_offset - aligned + rec_len
            nread = ((span + SECTOR - 1) // SECTOR) * SECTOR
            buf = os.pread(fd, nread, aligned)
            rows.append(_raw_record(buf, ref.byte_offset - aligned, fmt))
    finally:
        os.close(fd)
    # extra per-record bytes of uncompressed files are not part of the
    # chunk-point payload
    return np.array(rows, dtype=record_dtype(fmt))


def decode_chunk(tile: TileMeta, chunk: ChunkRef) -> np.ndarray:
    """Decode one compressed chunk to raw records, bit-exact.

    Chunks are self-contained; calls for different chunks may run
    concurrently.
    """
    header = tile.header
    fmt = header.point_record_format
    if fmt not in DECODABLE_FORMATS:
        raise UnsupportedFormat(
            f"compressed point format {fmt} not supported")
    lz = header.laszip
    expected_items = [ITEM_POINT10]
    if fmt in (1, 3):
        expected_items.append(ITEM_GPSTIME11)
    if fmt in (2, 3):
        expected_items.append(ITEM_RGB12)
    got_items = [t for t, _s, _v in lz.items]
    if got_items != expected_items:
        raise UnsupportedFormat(
            f"unexpected LASzip item layout {lz.items}")
    for _t, _s, version in lz.items:
        if version != 2:
            raise UnsupportedFormat(
                f"LASzip item version {version}, only v2 is decodable")

    with open(tile.path, "rb") as fp:
        fp.seek(chunk.byte_offset)
        buf = fp.read(chunk.byte_size)
    if len(buf) < chunk.byte_size:
        raise OutOfBoundsRead("chunk extends beyond file end")

    rec_len = header.point_record_length
    first = _raw_record(buf, 0, fmt)
    rows = [first]

    dec = ArithmeticDecoder(buf, pos=rec_len)
    point10 = Point10Codec(dec, encoding=False)
    point10.init(first[:9])
    gps = rgb = None
    cursor = 9
    if fmt in (1, 3):
        gps = GpsTimeCodec(dec, encoding=False)
        gps.init(first[cursor])
        cursor += 1
    if fmt in (2, 3):
        rgb = RgbCodec(dec, encoding=False)
        rgb.init(first[cursor:cursor + 3])
    dec.start()

    for _ in range(chunk.point_count - 1):
        row = point10.read()
        if gps is not None:
            row += (gps.read(),)
        if rgb is not None:
            row += rgb.read()
        rows.append(row)

    return np.array(rows, dtype=record_dtype(fmt))


def load_tile_fullres(tile: TileMeta, max_workers: int = 4) -> np.ndarray:
    """Every record of the tile: chunk-parallel decode or one block read."""
    header = tile.header
    if not tile.is_compressed:
        fmt = header.point_record_format
        dtype = record_dtype(fmt, header.point_record_length)
        with open(tile.path, "rb") as fp:
            fp.seek(header.point_data_offset)
            buf = fp.read(header.point_count * dtype.itemsize)
        if len(buf) < header.point_count * dtype.itemsize:
            raise OutOfBoundsRead("point data truncated")
        return np.frombuffer(buf, dtype=dtype)
    refs = ensure_chunk_refs(tile)
    if not refs:
        return np.empty(0, dtype=record_dtype(header.point_record_format))
    if max_workers > 1 and len(refs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(lambda r: decode_chunk(tile, r), refs))
    else:
        parts = [decode_chunk(tile, r) for r in refs]
    return np.concatenate(parts)


def geo_points(records: np.ndarray, tile: TileMeta) -> list[GeoPoint]:
    """Record rows as GeoPoint objects (convenience for small batches)."""
    pos = positions(records, tile.header)
    cols = colors(records, tile.header)
    out = []
    for i in range(len(records)):
        rgb = tuple(cols[i]) if cols is not None else None
        out.append(GeoPoint(position=tuple(pos[i]), rgb=rgb,
                            source_tile=tile.tile_id))
    return out
