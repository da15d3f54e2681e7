"""Error taxonomy shared across the package.

Every failure mode surfaced by the public API is a subclass of
``SlidepipeError`` so callers can catch the whole family or match a
specific condition by name.
"""


class SlidepipeError(Exception):
    """Base class for all slidepipe errors."""


# --- slide I/O ---------------------------------------------------------------

class MalformedHeader(SlidepipeError):
    """File does not start with a valid TIFF header (byte order / magic)."""


class UnsupportedTag(SlidepipeError):
    """TIFF layout we do not handle: striped, non-RGB, unknown compression."""


class TruncatedFile(SlidepipeError):
    """A recorded offset or byte count points past the end of the file."""


class InvalidPyramid(SlidepipeError):
    """Level geometry is inconsistent (aspect, ordering, or tile counts)."""


class OutOfBounds(SlidepipeError):
    """Requested region exceeds the level bounds."""


class DecodeFailure(SlidepipeError):
    """A tile or PNG payload failed to decompress to the expected size."""


class IoFailure(SlidepipeError):
    """Filesystem write failed."""


# --- tissue mask -------------------------------------------------------------

class DegenerateHistogram(SlidepipeError):
    """Otsu cannot split the histogram: every threshold scores zero."""


class NotAPng(SlidepipeError):
    """Bytes do not start with the PNG signature."""


class WrongBitDepth(SlidepipeError):
    """PNG is not the expected bit depth / color type for a mask."""


# --- sampling ----------------------------------------------------------------

class NoTissue(SlidepipeError):
    """Mask contains zero tissue pixels, nothing to sample."""


class InvalidCode(SlidepipeError):
    """Dihedral code outside 0..7."""


class FoldedGrid(SlidepipeError):
    """Warp offsets flip a destination triangle (non-positive area)."""


# --- pipeline ----------------------------------------------------------------

class NoSlides(SlidepipeError):
    """Slide directory contains no openable slides."""


class EndOfStream(SlidepipeError):
    """All configured steps have been delivered."""


class WorkerFailure(SlidepipeError):
    """A pipeline worker raised; the stream is poisoned."""
