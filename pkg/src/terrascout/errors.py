"""Exception types shared across the package."""


class TerrascoutError(Exception):
    """Base class for all package errors."""


class BadSignature(TerrascoutError):
    """File does not start with the LASF signature."""


class UnsupportedVersion(TerrascoutError):
    """LAS major version is not 1, or an unknown format revision."""


class TruncatedHeader(TerrascoutError):
    """File ends before the public header or VLRs are complete."""


class UnsupportedFormat(TerrascoutError):
    """Point record format outside the supported decoding set."""


class CorruptChunkTable(TerrascoutError):
    """Chunk table pointer or prefix sums inconsistent with the file."""


class DecoderDesync(TerrascoutError):
    """Arithmetic decoder consumed bytes beyond its chunk extent."""


class OutOfBoundsRead(TerrascoutError):
    """A computed file offset lies outside the file."""


class EmptyPatch(TerrascoutError):
    """No chunk points fall inside the padded patch square."""


class DegenerateTriangulation(TerrascoutError):
    """Fewer than 3 non-collinear points; no triangulation exists."""


class EmptySet(TerrascoutError):
    """Nearest-neighbor query against zero points."""


class ShapeMismatch(TerrascoutError):
    """Tensor shapes inconsistent with the architecture descriptor."""


class BadMagic(TerrascoutError):
    """Weight bundle file does not start with the expected magic."""


class NonFiniteActivation(TerrascoutError):
    """NaN or Inf appeared in a network output."""
