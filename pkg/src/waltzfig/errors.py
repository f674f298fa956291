"""Exception types raised across the package.

Input problems (bad files, bad labels, bad configuration) derive from
``InputError``; failures of a computation on otherwise valid input derive
from ``PipelineError``.  The CLI maps the two families to distinct exit codes.
"""


class WaltzfigError(Exception):
    pass


class InputError(WaltzfigError, ValueError):
    pass


class PipelineError(WaltzfigError, RuntimeError):
    pass


class UnknownLabel(InputError):
    pass


class InvalidProbVector(InputError):
    pass


class MalformedRow(InputError):
    pass


class NonMonotonicTime(InputError):
    pass


class MissingAxis(InputError):
    pass


class InsufficientData(InputError):
    pass


class EmptyWindow(InputError):
    pass


class ImpossibleTransitionInData(InputError):
    def __init__(self, dance_id, position, pair):
        self.dance_id = dance_id
        self.position = position
        self.pair = pair
        super().__init__(
            f"dance {dance_id!r}: transition {pair[0]} -> {pair[1]} at position "
            f"{position} is outside the transition support"
        )


class TooFewDances(InputError):
    pass


class LengthMismatch(InputError):
    pass


class ConfigError(InputError):
    pass


class SchemaError(InputError):
    pass


class DegenerateFit(PipelineError):
    pass
