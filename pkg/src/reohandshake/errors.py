"""Exception hierarchy shared by all modules.

Every domain error carries its class name as ``code`` so the command line
front end can print ``<code>: <message>`` and pick an exit status.
"""


class ReoError(Exception):
    """Base class for all domain errors raised by this package."""

    @property
    def code(self):
        return type(self).__name__


# automata
class AlphabetOverlap(ReoError):
    pass


class BadSyncMap(ReoError):
    pass


class UnknownAction(ReoError):
    pass


class AlphabetMismatch(ReoError):
    pass


class InvalidAutomaton(ReoError):
    pass


# circuit
class ReoSyntaxError(ReoError):
    """Malformed circuit text. ``line`` and ``column`` are 1-based."""

    def __init__(self, message, line=0, column=0):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class ArityError(ReoError):
    pass


class DanglingPort(ReoError):
    pass


class RegionTooLarge(ReoError):
    pass


# semantics
class StateExplosion(ReoError):
    pass


# handshake
class UnsupportedKind(ReoError):
    pass


class MissingTemplate(ReoError):
    pass


# sim
class StuckSite(ReoError):
    pass


class UnbalancedBlocks(ReoError):
    pass


class BranchExplosion(ReoError):
    pass


class ScenarioError(ReoError):
    pass
