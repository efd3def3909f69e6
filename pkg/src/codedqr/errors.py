"""Exception hierarchy shared by every module in the package."""


class CodedQRError(Exception):
    """Base class for all errors raised by :mod:`codedqr`."""


# -- configuration / precondition failures (CLI exit code 2) -----------------


class ConfigError(CodedQRError):
    pass


class BadDimensions(ConfigError):
    pass


class DimensionMismatch(BadDimensions):
    pass


class BlockMismatch(BadDimensions):
    pass


class BadFailureBudget(ConfigError):
    pass


class IndivisibleLoad(ConfigError):
    pass


class EnumerationTooLarge(ConfigError):
    pass


# -- numerical failures (CLI exit code 3) ------------------------------------


class NumericalError(CodedQRError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularTriangular(NumericalError):
    pass


class ConditionViolated(NumericalError):
    pass


class SingularRecovery(NumericalError):
    pass


# -- fault-injection failures (CLI exit code 4) ------------------------------


class FaultError(CodedQRError):
    pass


class TooManyFailures(FaultError):
    pass


class UnrecoverableFailure(TooManyFailures):
    pass


class DeadParticipant(FaultError):
    pass
