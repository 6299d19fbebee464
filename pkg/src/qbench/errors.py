"""Exception taxonomy shared by the codec, benchmark, and CLI layers.

Each subtree maps onto one process exit code so the CLI can translate any
raised error into a stable status without inspecting messages:

    UsageError  -> 2   bad flags, unknown scheme names, malformed config
    IoError     -> 3   unreadable paths, truncated files, short writes
    CodecError  -> 4   corrupt containers, bad magic, CRC mismatch, layout
                       violations, non-finite inputs to an encoder
    DataError   -> 5   shape mismatches, empty tensors, invalid counters
"""


class QbenchError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class UsageError(QbenchError):
    """Invalid command-line usage or malformed run configuration."""

    exit_code = 2


class IoError(QbenchError):
    """Filesystem-level failure while reading or writing an artifact."""

    exit_code = 3


class CodecError(QbenchError):
    """Encoded payload or encoder input violates the format contract."""

    exit_code = 4


class DataError(QbenchError):
    """In-memory data fails a shape, range, or accounting invariant."""

    exit_code = 5


class ResourceError(QbenchError):
    """The host ran out of a resource (memory, address space) mid-run.

    Raised instead of letting a bare MemoryError escape so callers can
    distinguish "this workload does not fit" from a toolkit bug.
    """

    exit_code = 1


class CapabilityError(QbenchError):
    """The platform cannot perform an optional measurement.

    Benchmarks degrade gracefully when this is raised: predicted values
    are still reported, only the measured counterpart is omitted.
    """

    exit_code = 1
