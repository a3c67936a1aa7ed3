"""Shared exception base for the engine.

Every module-specific exception derives from EngineError so the CLI can map
any engine failure to a single exit code and a readable message.
"""


class EngineError(Exception):
    """Base class for all errors raised by rtlforge."""
