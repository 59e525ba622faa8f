"""Error hierarchy shared by all platform components.

Every error carries a stable ``code`` so the gateway and CLI can map it to a
wire response without string matching.
"""

from __future__ import annotations


class OaasError(Exception):
    code = "INTERNAL"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__

    def to_wire(self) -> dict:
        return {"code": self.code, "message": self.message}


# --- class model ---------------------------------------------------------


class PackageSyntaxError(OaasError):
    code = "SYNTAX"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        at = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{at}")
        self.line = line
        self.column = column


class SchemaError(OaasError):
    code = "SCHEMA"

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class UnknownClass(OaasError):
    code = "UNKNOWN_CLASS"

    def __init__(self, name: str):
        super().__init__(f"class {name!r} is not deployed")
        self.name = name


class InheritanceCycle(OaasError):
    code = "INHERITANCE_CYCLE"

    def __init__(self, names: list[str]):
        super().__init__(f"inheritance cycle through {{{', '.join(sorted(names))}}}")
        self.names = sorted(names)


class UnknownFunction(OaasError):
    code = "UNKNOWN_FUNCTION"

    def __init__(self, fn: str, cls: str):
        super().__init__(f"class {cls!r} has no function {fn!r}")
        self.fn = fn
        self.cls = cls


class CycleError(OaasError):
    code = "DATAFLOW_CYCLE"

    def __init__(self, aliases: list[str]):
        super().__init__(f"dataflow references form a cycle through {{{', '.join(sorted(aliases))}}}")
        self.aliases = sorted(aliases)


class UnknownStep(OaasError):
    code = "UNKNOWN_STEP"

    def __init__(self, alias: str):
        super().__init__(f"dataflow references unknown step {alias!r}")
        self.alias = alias


# --- state store ----------------------------------------------------------


class NotFound(OaasError):
    code = "NOT_FOUND"

    def __init__(self, what: str):
        super().__init__(f"{what} not found")
        self.what = what


class VersionConflict(OaasError):
    code = "VERSION_CONFLICT"

    def __init__(self, current_version: int):
        super().__init__(f"stored version is {current_version}; re-read and retry")
        self.current_version = current_version


class TokenReused(OaasError):
    code = "TOKEN_REUSED"

    def __init__(self):
        super().__init__("transition token already used or aborted")


class UnknownKey(OaasError):
    code = "UNKNOWN_KEY"

    def __init__(self, key: str, cls: str):
        super().__init__(f"class {cls!r} declares no blob key {key!r}")
        self.key = key
        self.cls = cls


class Forbidden(OaasError):
    code = "FORBIDDEN"

    def __init__(self, reason: str = "signature rejected"):
        super().__init__(reason)


class StoreUnavailable(OaasError):
    code = "STORE_UNAVAILABLE"

    def __init__(self, message: str = "durable store unavailable"):
        super().__init__(message)


class StateTooLarge(OaasError):
    code = "STATE_TOO_LARGE"

    def __init__(self, size: int, limit: int):
        super().__init__(f"state document is {size} bytes; limit is {limit}")
        self.size = size
        self.limit = limit


# --- dht cache ------------------------------------------------------------


class RingEmpty(OaasError):
    code = "RING_EMPTY"

    def __init__(self):
        super().__init__("hash ring has no nodes")


class NotOwner(OaasError):
    code = "NOT_OWNER"

    def __init__(self, node: str, owner: str):
        super().__init__(f"node {node!r} asked to serve a key owned by {owner!r}")
        self.node = node
        self.owner = owner


# --- invocation engine ----------------------------------------------------


class RuntimeUnreachable(OaasError):
    code = "RUNTIME_UNREACHABLE"

    def __init__(self, endpoint: str, cause: str = ""):
        detail = f": {cause}" if cause else ""
        super().__init__(f"function runtime {endpoint} unreachable{detail}")
        self.endpoint = endpoint


class RuntimeTimeout(OaasError):
    code = "RUNTIME_TIMEOUT"

    def __init__(self, endpoint: str, deadline_ms: int):
        super().__init__(f"function runtime {endpoint} exceeded {deadline_ms} ms deadline")
        self.endpoint = endpoint
        self.deadline_ms = deadline_ms


class MalformedResult(OaasError):
    code = "MALFORMED_RESULT"

    def __init__(self, reason: str):
        super().__init__(f"function runtime returned a malformed result: {reason}")
        self.reason = reason


class ConflictRetriesExhausted(OaasError):
    code = "CONFLICT_RETRIES_EXHAUSTED"

    def __init__(self, attempts: int):
        super().__init__(f"gave up after {attempts} conflicting commit attempts")
        self.attempts = attempts


class FunctionFailed(OaasError):
    code = "FUNCTION_FAILED"

    def __init__(self, fn_code: str, fn_message: str):
        super().__init__(f"function reported {fn_code}: {fn_message}")
        self.fn_code = fn_code
        self.fn_message = fn_message


class StepFailed(OaasError):
    code = "STEP_FAILED"

    def __init__(self, alias: str, cause: Exception):
        super().__init__(f"dataflow step {alias!r} failed: {cause}")
        self.alias = alias
        self.cause = cause


class UnresolvedImage(OaasError):
    code = "UNRESOLVED_IMAGE"

    def __init__(self, image: str):
        super().__init__(f"no runtime endpoint registered for image {image!r}")
        self.image = image


# --- runtime manager ------------------------------------------------------


class DuplicatePriority(OaasError):
    code = "DUPLICATE_PRIORITY"

    def __init__(self, priority: int, existing: str):
        super().__init__(f"priority {priority} already used by template {existing!r}")
        self.priority = priority


class NoMatchingTemplate(OaasError):
    code = "NO_MATCHING_TEMPLATE"

    def __init__(self, cls: str):
        super().__init__(f"no runtime template matches class {cls!r} (catalog lacks a catch-all)")
        self.cls = cls


class Saturated(OaasError):
    code = "SATURATED"

    def __init__(self, cls: str, retry_after_s: float = 1.0):
        super().__init__(f"class runtime for {cls!r} is saturated")
        self.cls = cls
        self.retry_after_s = retry_after_s


# --- deploy ----------------------------------------------------------------


class DeployRejected(OaasError):
    code = "DEPLOY_REJECTED"

    def __init__(self, report):
        errors = getattr(report, "errors", [])
        super().__init__(f"package rejected with {len(errors)} error(s)")
        self.report = report
