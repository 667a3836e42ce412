from typing import Any, Dict, List, Union

from rest_framework.exceptions import ValidationError

from . import error_codes as EC


class VstapError(Exception):
    """
    Raise this (or a subclass) when you want a specific errorCode in reports.
    Example:
        raise InvalidInput(
            code=EC.MARG_INVALID_INPUT,
            message="probability must lie in (0, 1)",
            context={"p": p},
        )
    """
    default_code = EC.GEN_INTERNAL_ERROR

    def __init__(self, message: str, *, code: int | None = None, context: dict | None = None):
        super().__init__(message)
        self.message = message
        self.app_code = code if code is not None else self.default_code
        self.context = dict(context or {})

    def with_context(self, **extra) -> "VstapError":
        self.context.update(extra)
        return self


class InvalidInput(VstapError):
    default_code = EC.GEN_INVALID_CONFIG


class InsufficientData(VstapError):
    default_code = EC.MARG_INSUFFICIENT_DATA


class DegenerateRegion(VstapError):
    default_code = EC.BVN_DEGENERATE_REGION


class DegenerateInput(VstapError):
    default_code = EC.SOLV_DEGENERATE_INPUT


class InfeasibleCorrelation(VstapError):
    default_code = EC.PIPE_INFEASIBLE_CORRELATION


class NumericallySingular(VstapError):
    default_code = EC.VAR_NUMERICALLY_SINGULAR


class NonStationary(VstapError):
    default_code = EC.VAR_NON_STATIONARY


class RepairFailed(VstapError):
    default_code = EC.LAG_REPAIR_FAILED

    def __init__(self, message: str, *, best=None, rounds: int = 0, **kwargs):
        super().__init__(message, **kwargs)
        self.best = best
        self.rounds = rounds


class InsufficientAcceptance(VstapError):
    default_code = EC.ORC_INSUFFICIENT_ACCEPTANCE


class ModelFileInvalid(VstapError):
    default_code = EC.CLI_MODEL_FILE_INVALID


def _flatten_errors(data: Union[Dict[str, Any], List[Any], str]) -> str:
    if isinstance(data, str):
        return data
    if isinstance(data, list):
        parts = [_flatten_errors(x) for x in data if x is not None]
        return "; ".join([p for p in parts if p])
    if isinstance(data, dict):
        parts = []
        for k, v in data.items():
            msg = _flatten_errors(v)
            if msg:
                parts.append(f"{k}: {msg}")
        return "; ".join(parts)
    return str(data)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def render_error(exc: BaseException) -> dict:
    """
    Structured error object used by every report and by the CLI exit path:
    {"errorCode": int, "errorMessage": str, "context": {...}}
    """
    if isinstance(exc, VstapError):
        return {
            "errorCode": exc.app_code,
            "errorMessage": exc.message,
            "context": _jsonable(exc.context),
        }

    if isinstance(exc, ValidationError):
        return {
            "errorCode": EC.GEN_INVALID_CONFIG,
            "errorMessage": _flatten_errors(exc.detail) or "Invalid configuration",
            "context": {},
        }

    if isinstance(exc, FileNotFoundError):
        return {
            "errorCode": EC.GEN_FILE_NOT_FOUND,
            "errorMessage": str(exc),
            "context": {},
        }

    # Any other unhandled exception
    return {
        "errorCode": EC.GEN_INTERNAL_ERROR,
        "errorMessage": f"Internal error: {exc}",
        "context": {},
    }
