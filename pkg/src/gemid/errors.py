"""Exception types shared across the package."""


class GemidError(Exception):
    """Base class for input/contract errors raised by this package."""


class UnsupportedFormatError(GemidError):
    """Input file is not a classic Ethernet pcap."""


class PartialReadError(GemidError):
    """A capture record was truncated mid-file.

    Carries the number of packets that were successfully yielded before
    the truncation was hit.
    """

    def __init__(self, message: str, packets_read: int):
        super().__init__(message)
        self.packets_read = packets_read


class MalformedPacketError(GemidError):
    """Frame too short to contain the layer being dissected."""


class EmptySchemaError(GemidError):
    """Every descriptor was filtered; no active features remain."""


class SchemaMismatchError(GemidError):
    """Stored artifact was produced under a different feature schema."""


class LeakageError(GemidError):
    """Train and test sides of a context share record ids."""


class UsageError(GemidError):
    """Bad command-line arguments or unusable input files (exit code 2)."""
