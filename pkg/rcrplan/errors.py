#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.errors

exception hierarchy shared by all pipeline stages.

Every error carries structured context and can be rendered as the
machine-readable json payload the cli writes to stderr.
"""
from __future__ import annotations

import logging
from typing import Any

__all__ = [
    "RcrplanError",
    "ArtifactError",
    "UnknownObjectError",
    "InvalidPrimitiveError",
    "ConfigurationInfeasibleError",
    "EmptyInputError",
    "EmptySignatureError",
    "InconsistentClusterError",
    "PDDLSyntaxError",
    "UnsupportedRequirementError",
    "TypeMismatchError",
    "SampleFailure",
    "MotionFailure",
    "InvalidInputError",
]

_log = logging.getLogger(__name__)


class RcrplanError(Exception):
    """rcrplan base error"""

    #: cli exit status when this error escapes a subcommand
    exit_code: int = 1
    _log_level: int = logging.ERROR

    def __init__(self, message: str, **context: Any) -> None:
        self.context = context
        for key, value in context.items():
            setattr(self, key, value)
        super().__init__(message)
        _log.log(self._log_level, f"{type(self).__name__}: {self}")

    def to_dict(self) -> dict[str, Any]:
        """machine readable representation"""
        return {"error": type(self).__name__, "message": str(self), **self.context}

    def __repr__(self):
        ctx = "".join(f", {k}={v!r}" for k, v in self.context.items())
        return f"{type(self).__name__}({str(self)!r}{ctx})"


class ArtifactError(RcrplanError):
    """missing or unreadable input file"""

    exit_code = 2


class InvalidInputError(RcrplanError):
    """input violates a documented precondition"""

    exit_code = 2


class UnknownObjectError(RcrplanError):
    """object id not present in a state"""


class InvalidPrimitiveError(RcrplanError):
    """primitive action exceeds its bounds"""


class ConfigurationInfeasibleError(RcrplanError):
    """world placement failed"""


class EmptyInputError(RcrplanError):
    """nothing to learn from"""


class EmptySignatureError(RcrplanError):
    """transition between identical abstract states"""


class InconsistentClusterError(RcrplanError):
    """learned schema does not reproduce one of its members"""


class PDDLSyntaxError(RcrplanError):
    """pddl text could not be parsed"""

    exit_code = 2

    def __init__(self, message: str, line: int, column: int, **context: Any) -> None:
        super().__init__(
            f"{message} (line {line}, column {column})",
            line=line,
            column=column,
            **context,
        )


class UnsupportedRequirementError(RcrplanError):
    """pddl requirement or construct outside the supported fragment"""

    exit_code = 2


class TypeMismatchError(RcrplanError):
    """object or argument does not match the declared type"""


class SampleFailure(RcrplanError):
    """pose generator exhausted its sample budget"""

    _log_level = logging.DEBUG


class MotionFailure(RcrplanError):
    """straight line motion is in collision"""

    _log_level = logging.DEBUG
