"""Error taxonomy for the ingest adapter.

Everything the adapter raises on purpose derives from AdapterError so
callers (and the CLI) can separate data problems from genuine bugs.
"""


class AdapterError(Exception):
    """Base class for all adapter failures."""


class UnknownLayout(AdapterError):
    """The declared archive layout is unsupported or the files do not match it."""


class MissingLabel(AdapterError):
    """A slide in the archive has no entry in the label table."""


class DimMismatch(AdapterError):
    """Feature or coordinate arrays disagree in shape across slides."""


class EncoderUnavailable(AdapterError):
    """No encoder is registered under the requested identifier."""


class NoPatches(AdapterError):
    """A patch directory contains no readable patch images."""
