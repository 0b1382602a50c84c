"""
The single seam between the engine and any language, vision or embedding model.

Every model call in the pipeline is a ClientRequest of one of ten call kinds.
Payloads per kind:

    fuse                   {doc_id, day, start_t, end_t, caption, utterances}
    extract                {doc_id, text, allowed_nodes, allowed_relationships}
    annotate               {doc_id, caption, relationships, transcripts}
    embed_text             {text, dim}
    plan                   {question, candidates, query_time, tools, max_steps}
    rewrite_visual         {task, query_time, memory, day_search}
    transcript_llm_search  {task, memory, day, transcripts}
    analyze                {task, tool, question, items, memory, images}
    grade                  {question, plan, completed, remaining, memory}
    answer                 {question, candidates, memory}
"""
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import wraps
from time import sleep
from typing import Any, Dict, List, Optional, Sequence

from django.conf import settings

from apps.core.exceptions import ClientTransportError, UnknownCallKindError

logger = logging.getLogger(__name__)


class CallKind(str, Enum):
    FUSE = 'fuse'
    EXTRACT = 'extract'
    ANNOTATE = 'annotate'
    EMBED_TEXT = 'embed_text'
    PLAN = 'plan'
    REWRITE_VISUAL = 'rewrite_visual'
    TRANSCRIPT_LLM_SEARCH = 'transcript_llm_search'
    ANALYZE = 'analyze'
    GRADE = 'grade'
    ANSWER = 'answer'

    @classmethod
    def parse(cls, value: Any) -> 'CallKind':
        try:
            return cls(value)
        except ValueError:
            raise UnknownCallKindError(f"unknown call kind: {value!r}") from None


def canonicalize(value: Any) -> Any:
    """Sorted keys, collapsed whitespace, tuples as lists."""
    if isinstance(value, dict):
        return {str(k): canonicalize(value[k]) for k in sorted(value, key=str)}
    if isinstance(value, (list, tuple)):
        return [canonicalize(v) for v in value]
    if isinstance(value, str):
        return ' '.join(value.split())
    if isinstance(value, Enum):
        return canonicalize(value.value)
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(canonicalize(value), sort_keys=True, separators=(',', ':'), ensure_ascii=True)


def compute_request_hash(call_kind: 'CallKind', payload: Dict[str, Any]) -> str:
    digest = hashlib.sha256()
    digest.update(call_kind.value.encode('utf-8'))
    digest.update(b'\n')
    digest.update(canonical_json(payload).encode('utf-8'))
    return digest.hexdigest()


@dataclass(frozen=True)
class ClientRequest:
    call_kind: CallKind
    payload: Dict[str, Any]
    request_hash: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'call_kind', CallKind.parse(self.call_kind))
        object.__setattr__(self, 'request_hash', compute_request_hash(self.call_kind, self.payload))


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    image_count: int = 0
    estimated: bool = False

    def __post_init__(self):
        if min(self.prompt_tokens, self.completion_tokens, self.image_count) < 0:
            raise ValueError("usage counts must be non-negative")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'Usage':
        data = data or {}
        return cls(
            prompt_tokens=int(data.get('prompt_tokens', 0)),
            completion_tokens=int(data.get('completion_tokens', 0)),
            image_count=int(data.get('image_count', 0)),
            estimated=bool(data.get('estimated', False)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'prompt_tokens': self.prompt_tokens,
            'completion_tokens': self.completion_tokens,
            'image_count': self.image_count,
            'estimated': self.estimated,
        }


@dataclass(frozen=True)
class ClientResponse:
    output: Any
    usage: Usage = field(default_factory=Usage)

    @property
    def text(self) -> str:
        if isinstance(self.output, str):
            return self.output
        return json.dumps(self.output, sort_keys=True)


def estimate_tokens(text: str) -> int:
    """Whitespace-token count / 4, used when a backend reports no usage."""
    words = len((text or '').split())
    return int(math.ceil(words / 4)) if words else 0


def estimate_usage(request: ClientRequest, output: Any) -> Usage:
    completion = output if isinstance(output, str) else json.dumps(output, sort_keys=True)
    return Usage(
        prompt_tokens=estimate_tokens(canonical_json(request.payload)),
        completion_tokens=estimate_tokens(completion),
        image_count=len(request.payload.get('images') or []),
        estimated=True,
    )


def retry_on_failure(max_retries=3, delay=1, retry_on=(ClientTransportError,)):
    """Decorator to retry model calls on failure with exponential backoff."""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            last_exception = None
            for attempt in range(max_retries):
                try:
                    return func(*args, **kwargs)
                except retry_on as e:
                    last_exception = e
                    if attempt < max_retries - 1:
                        sleep_time = delay * (2 ** attempt)
                        logger.warning(
                            f"Attempt {attempt + 1} failed for {func.__name__}. "
                            f"Retrying in {sleep_time} seconds... Error: {str(e)}"
                        )
                        sleep(sleep_time)

            logger.error(
                f"All {max_retries} attempts failed for {func.__name__}. "
                f"Final error: {str(last_exception)}"
            )
            raise last_exception
        return wrapper
    return decorator


class ModelClient:
    """
    Contract every backend implements. Implementations must be safe for
    concurrent calls.
    """

    def call(self, request: ClientRequest) -> ClientResponse:
        raise NotImplementedError

    def request(self, call_kind, payload: Dict[str, Any]) -> ClientResponse:
        return self.call(ClientRequest(CallKind.parse(call_kind), payload))

    def call_many(self, requests: Sequence[ClientRequest], max_workers: int = 1) -> List[ClientResponse]:
        """Concurrent fan-out under the retry policy; responses come back in request order."""
        def one(request):
            return call_with_retries(self, request)

        if max_workers <= 1 or len(requests) <= 1:
            return [one(request) for request in requests]
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            return list(executor.map(one, requests))


def call_with_retries(client: ModelClient, request: ClientRequest) -> ClientResponse:
    """One call under the configured transport retry policy."""
    config = settings.MODEL_CLIENT_CONFIG

    @retry_on_failure(max_retries=config['max_retries'], delay=config['retry_delay'])
    def attempt():
        return client.call(request)

    return attempt()
