"""Exception hierarchy.

Everything raised on purpose derives from :class:`AgrimapError`. The CLI maps
:class:`FormatError` (bad input files) to exit code 2 and every other
:class:`AgrimapError` to exit code 1.
"""


class AgrimapError(Exception):
    """Base class for domain errors."""


# geometry
class NonPositiveDepth(AgrimapError):
    pass


class DegenerateBaseline(AgrimapError):
    pass


class NegativeDepth(AgrimapError):
    pass


class DegenerateGeometry(AgrimapError):
    pass


# two-view
class InsufficientCorrespondences(AgrimapError):
    pass


class DegenerateConfiguration(AgrimapError):
    pass


class ZeroScores(AgrimapError):
    pass


class CheiralityAmbiguous(AgrimapError):
    pass


# depth filter / synthesis
class InvalidRange(AgrimapError):
    pass


class NoVisiblePoints(AgrimapError):
    pass


# evaluation
class NoOverlap(AgrimapError):
    pass


class ZeroSpread(DegenerateGeometry):
    pass


class NoValidPixels(AgrimapError):
    pass


class ZeroMedian(AgrimapError):
    pass


# map post-processing
class InvalidGeodetic(AgrimapError):
    pass


class TooFewPoints(AgrimapError):
    pass


class ZeroRadius(AgrimapError):
    pass


class EmptyInput(AgrimapError):
    pass


# file formats
class FormatError(AgrimapError):
    """Malformed or unsupported input file.

    ``line`` is the 1-based line number (text formats) and ``offset`` the byte
    offset (binary formats) where the problem was detected, when known.
    """

    def __init__(self, message, path=None, line=None, offset=None):
        self.path = path
        self.line = line
        self.offset = offset
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte {offset}")
        super().__init__(f"{': '.join([', '.join(loc), message]) if loc else message}")


class ParseError(FormatError):
    pass


class NonMonotonicTimestamps(FormatError):
    pass


class MalformedHeader(FormatError):
    pass


class UnsupportedFormat(FormatError):
    pass


class ConfigError(AgrimapError):
    pass
