"""Exception types raised by the relay, the ledger and the tooling around them."""


class RelayError(Exception):
    pass


class EmptyBlock(RelayError):
    pass


class NotInBlock(RelayError):
    pass


class UnknownHeader(RelayError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoSuchChild(RelayError):
    pass


class HeaderIntegrity(RelayError):
    pass


class InsufficientStake(RelayError):
    pass


class InsufficientFunds(RelayError):
    pass


class NoLockedStake(RelayError):
    pass


class LedgerDesync(RelayError):
    """A relay operation referenced stake the ledger does not hold."""


class NoVerifications(RelayError, ValueError):
    pass


class BadStream(RelayError):
    pass


class BadScenario(RelayError, ValueError):
    pass


class ParseError(RelayError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
