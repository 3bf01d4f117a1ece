"""Exception hierarchy.  Everything the CLI maps to exit code 2 derives from DataError."""


class DataError(Exception):
    """Bad input data: malformed files, unresolved links, invalid shapes."""


class FormatError(DataError):
    """A binary file does not match its declared layout."""


class ManifestError(DataError):
    """A manifest line is malformed or inconsistent with the embeddings."""


class ShapeError(DataError, ValueError):
    """Matrix dimensions do not agree."""


class MiningError(DataError):
    """An anchor has no eligible negative in its mini-batch."""
