class EngineError(Exception):
    """Base class for every error raised by the engine."""


class InvalidTimeError(EngineError, ValueError):
    pass


class InvalidEnumError(EngineError, ValueError):
    pass


class InvalidIntentError(EngineError, ValueError):
    pass


class EdgeValidationError(EngineError, ValueError):
    pass


class FrameValidationError(EngineError, ValueError):
    pass


class UtteranceValidationError(EngineError, ValueError):
    pass


class CaptionOrderError(EngineError, ValueError):
    pass


class BenchmarkError(EngineError, ValueError):
    """Benchmark file unreadable or an item violates MCQ invariants."""

    def __init__(self, message, qid=None):
        super().__init__(message if qid is None else f"{qid}: {message}")
        self.qid = qid


class ExtractionError(EngineError):
    def __init__(self, doc_id, message):
        super().__init__(f"extraction failed for {doc_id}: {message}")
        self.doc_id = doc_id


class PlanningError(EngineError):
    pass


class ClientError(EngineError):
    pass


class ClientTransportError(ClientError):
    pass


class MissingFixtureError(ClientError):
    def __init__(self, call_kind, request_hash):
        super().__init__(f"no scripted fixture for {call_kind} request {request_hash}")
        self.call_kind = call_kind
        self.request_hash = request_hash


class ReplayMissError(ClientError):
    def __init__(self, call_kind, request_hash):
        super().__init__(f"cassette has no {call_kind} response for {request_hash}")
        self.call_kind = call_kind
        self.request_hash = request_hash


class UnknownCallKindError(ClientError, InvalidEnumError):
    pass
