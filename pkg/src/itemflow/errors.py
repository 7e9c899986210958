"""Exception hierarchy with stable machine-readable codes.

Every error that can cross the wire carries a ``code`` the server maps
into responses and the CLI maps into exit states.
"""

from __future__ import annotations


class KernelError(Exception):
    """Base class for all kernel errors."""

    code = "KernelError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# --- item-core ---------------------------------------------------------------

class DuplicateId(KernelError):
    code = "DuplicateId"


class DuplicateName(KernelError):
    code = "DuplicateName"


class ImmutableProperty(KernelError):
    code = "ImmutableProperty"


class IllegalTransition(KernelError):
    code = "IllegalTransition"


class SchemaValidationFailed(KernelError):
    code = "SchemaValidationFailed"

    def __init__(self, message: str = "", violations: list[str] | None = None):
        self.violations = violations or []
        detail = message
        if self.violations:
            detail = (message + ": " if message else "") + "; ".join(self.violations)
        super().__init__(detail)


class NoSuchView(KernelError):
    code = "NoSuchView"


class ReservedViewName(KernelError):
    code = "ReservedViewName"


class SlotOccupied(KernelError):
    code = "SlotOccupied"


class SlotEmpty(KernelError):
    code = "SlotEmpty"


class TypeMismatch(KernelError):
    code = "TypeMismatch"

    def __init__(self, message: str = "", constraint: tuple[str, str] | None = None):
        self.constraint = constraint
        if constraint and not message:
            message = f"constraint {constraint[0]}={constraint[1]} not satisfied"
        super().__init__(message)


# --- workflow -----------------------------------------------------------------

class InvalidGraph(KernelError):
    code = "InvalidGraph"

    def __init__(self, message: str = "", defects: list[str] | None = None):
        self.defects = defects or []
        if self.defects and not message:
            message = "; ".join(self.defects)
        super().__init__(message)


class GraphDefect(InvalidGraph):
    code = "GraphDefect"


class NoSuchActivity(KernelError):
    code = "NoSuchActivity"


class DecisionScriptFailed(KernelError):
    code = "DecisionScriptFailed"


# --- descriptions ---------------------------------------------------------------

class NoSuchDescription(KernelError):
    code = "NoSuchDescription"


class NoSuchVersion(KernelError):
    code = "NoSuchVersion"


class DanglingChildReference(KernelError):
    code = "DanglingChildReference"


class InvalidSnapshot(KernelError):
    code = "InvalidSnapshot"


class InvalidDescription(KernelError):
    code = "InvalidDescription"


class MalformedSchema(KernelError):
    code = "MalformedSchema"


# --- scripting -----------------------------------------------------------------

class EvaluationError(KernelError):
    code = "EvaluationError"


class UnknownBranchLabel(KernelError):
    code = "UnknownBranchLabel"


class NoEngine(KernelError):
    code = "NoEngine"


class ScriptFailed(KernelError):
    code = "ScriptFailed"


# --- execution / server ----------------------------------------------------------

class Unauthorized(KernelError):
    code = "Unauthorized"


class AuthFailed(KernelError):
    code = "AuthFailed"


# --- storage ---------------------------------------------------------------------

class StorageError(KernelError):
    code = "StorageError"


class FragmentOverwrite(StorageError):
    code = "FragmentOverwrite"


class HistoryOverwrite(FragmentOverwrite):
    code = "HistoryOverwrite"


class NotFound(KernelError):
    code = "NotFound"


class CorruptHistory(KernelError):
    code = "CorruptHistory"


class PartialBootstrapDetected(KernelError):
    code = "PartialBootstrapDetected"


_BY_CODE: dict[str, type[KernelError]] = {}


def _register_all() -> None:
    stack: list[type[KernelError]] = [KernelError]
    while stack:
        cls = stack.pop()
        _BY_CODE[cls.code] = cls
        stack.extend(cls.__subclasses__())


_register_all()


def error_for_code(code: str, message: str = "") -> KernelError:
    """Rehydrate a kernel error from its wire code (client side)."""
    cls = _BY_CODE.get(code, KernelError)
    err = cls(message)
    err.code = code
    return err
