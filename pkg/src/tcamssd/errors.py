"""Exception hierarchy shared by every layer of the simulator."""


class TcamSsdError(Exception):
    pass


# flash array
class FlashError(TcamSsdError):
    pass


class ProgramOnRowTwice(FlashError):
    pass


class RowOutOfRange(FlashError):
    pass


class ElementTooLong(FlashError):
    pass


class StoredDontCare(ElementTooLong):
    """X may appear in search keys only; cells never store it."""


class RegionOverflow(FlashError):
    pass


class WrongMode(FlashError):
    pass


class KeyTooLong(FlashError):
    pass


class PositionOutOfRange(FlashError):
    pass


# backend
class AddressOutOfRange(TcamSsdError):
    pass


class OffsetOutOfRange(TcamSsdError):
    pass


class ConfigError(TcamSsdError):
    pass


# firmware
class CapacityExhausted(TcamSsdError):
    pass


class ElementWiderThanSupported(TcamSsdError):
    pass


class UnknownRegion(TcamSsdError):
    pass


class WidthMismatch(TcamSsdError):
    pass


class KeyTooWide(TcamSsdError):
    pass


class NonNumericEntries(TcamSsdError):
    pass


# command layer
class MalformedCommand(TcamSsdError):
    pass


class StaleContinuation(TcamSsdError):
    pass


# workloads
class MalformedInput(TcamSsdError):
    """Raised by the streaming readers; message carries path and line number."""


class MalformedTrace(MalformedInput):
    pass


class VertexIdOverflow(TcamSsdError):
    pass


class UnknownVertex(TcamSsdError):
    pass
