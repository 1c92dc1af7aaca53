"""Exception hierarchy shared by every dockchain module."""


class DockChainError(Exception):
    pass


class ProtocolError(DockChainError):
    """An event was refused by the adapter connect/remove protocol."""


class RootOccupied(ProtocolError):
    pass


class NoEmptySocket(ProtocolError):
    pass


class AuthFailure(ProtocolError):
    pass


class NoSuchAdapter(ProtocolError):
    pass


class NotTerminal(ProtocolError):
    pass


class NotMid(ProtocolError):
    pass


class DuplicateId(ProtocolError):
    pass


class InvariantViolation(DockChainError):
    pass


class NoSamples(DockChainError):
    def __init__(self, adapter_id, socket):
        super().__init__(f"adapter {adapter_id!r} socket {socket} was never activated")
        self.adapter_id = adapter_id
        self.socket = socket


class TooLarge(DockChainError):
    pass


class DegenerateChain(DockChainError):
    pass


class ZeroWeight(DockChainError):
    pass


class ParseError(DockChainError):
    def __init__(self, message, *, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class ValidationError(DockChainError):
    pass


class SimulationError(DockChainError):
    """A protocol error raised while replaying a scenario timeline."""

    def __init__(self, time, cause):
        super().__init__(f"t={time:g}: {cause}")
        self.time = time
        self.cause = cause
