"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class BanditError(Exception):
    """Base class for package errors."""


class InvalidArgument(BanditError, ValueError):
    pass


class NotFound(BanditError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DegenerateContext(InvalidArgument):
    """Context carries no mass (all zeros), so the weighted Beta is undefined."""


class UnsupportedMode(BanditError):
    pass


class ResponderError(BanditError):
    pass


class AlreadyResolved(BanditError):
    pass


class LoadError(BanditError):
    pass
