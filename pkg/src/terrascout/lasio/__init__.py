"""LAS/LAZ parsing: headers, chunk tables, chunk points, chunk decoding."""

from .header import LasHeader, LaszipVlr, parse_header
from .reader import (DEFAULT_CHUNK_SIZE, ChunkRef, GeoPoint, ScanResult,
                     TileMeta, decode_chunk, ensure_chunk_refs, geo_points,
                     load_tile_fullres, read_chunk_points, read_chunk_table,
                     scan_dataset, scan_tile)
from .records import colors, positions, record_dtype
from .writer import write_las, write_laz

__all__ = [
    "LasHeader", "LaszipVlr", "parse_header",
    "ChunkRef", "GeoPoint", "ScanResult", "TileMeta",
    "DEFAULT_CHUNK_SIZE", "decode_chunk", "ensure_chunk_refs", "geo_points",
    "load_tile_fullres", "read_chunk_points", "read_chunk_table",
    "scan_dataset", "scan_tile", "colors", "positions", "record_dtype",
    "write_las", "write_laz",
]
