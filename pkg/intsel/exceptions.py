"""
Exception hierarchy for the workbench.

Every error raised on purpose derives from IntselError and carries the exit
code the CLI returns for it.
"""


class IntselError(Exception):
    """Base class for workbench errors"""

    exit_code = 1


class ConfigError(IntselError):
    """Invalid or inconsistent configuration"""

    exit_code = 2


class DataError(IntselError):
    """Missing, malformed or mismatched data artifacts"""

    exit_code = 3


class NumericError(IntselError):
    """Non-finite values during training or gradient computation"""

    exit_code = 4


class ParseError(DataError, ValueError):
    """Syntax error in an infix or prefix expression"""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownFunctionError(ParseError):
    """Function name outside the supported inventory"""


class UnboundVariableError(DataError, KeyError):
    """eval_numeric met a variable without a binding"""

    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


class EvaluationDomainError(DataError, ArithmeticError):
    """Numeric evaluation left the real domain (ln of a non-positive, 1/0, ...)"""

    def __init__(self, subexpr, reason: str):
        super().__init__(f"{reason}: {subexpr}")
        self.subexpr = subexpr
        self.reason = reason


class InconclusiveDomainError(DataError):
    """verify_pair could not find valid sample points"""


class GenerationError(DataError):
    """A generator could not produce a pair within its attempt limit"""
