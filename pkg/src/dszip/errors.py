"""Exception hierarchy shared across the package.

Every error that can surface through the CLI carries a process exit code so
that scripts driving the tool can distinguish failure classes.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_INTEGRITY = 3
EXIT_DIVERGENCE = 4
EXIT_USAGE = 5


class DszipError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class FormatError(DszipError):
    """Container is structurally invalid (bad magic, version, truncated header)."""

    exit_code = EXIT_FORMAT


class IntegrityError(DszipError):
    """Stored checksums do not match, or a bitstream is internally inconsistent."""

    exit_code = EXIT_INTEGRITY


class CorruptionError(IntegrityError):
    """A bitstream produced an impossible decode state.

    Carries the stream index and step at which decoding failed so the fault
    can be localized.
    """

    def __init__(self, stream: int, step: int, detail: str = ""):
        self.stream = stream
        self.step = step
        msg = f"corrupt bitstream: stream {stream}, step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ModelDivergenceError(DszipError):
    """The predictor produced a non-finite value; compression cannot continue."""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"model diverged at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UsageError(DszipError):
    """Invalid configuration or command-line arguments."""

    exit_code = EXIT_USAGE
