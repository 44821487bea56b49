"""Exception types shared across the package."""


class TopoLensError(Exception):
    """Base class for user-facing errors (bad input, bad file, bad config)."""


class InvalidInputError(TopoLensError):
    """Input data violates a documented precondition."""


class ShapeError(TopoLensError):
    """Array shapes are incompatible with the requested operation."""


class SizeCapError(TopoLensError):
    """Input exceeds the size cap of a reference (cubic-cost) algorithm."""


class ParseError(TopoLensError):
    """Malformed file. Carries the position (line or byte offset) of the problem."""

    def __init__(self, message, *, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte {offset}")
        prefix = ": ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.offset = offset
