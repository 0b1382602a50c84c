"""
Per-question agent state: the plan, append-only working memory, the token
ledger and the ordered trace that together make up an AnswerTrace.
"""
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from apps.core.types import AnalysisNote, DayTime, ToolName
from apps.llm.client import CallKind, ClientRequest, ClientResponse, ModelClient, Usage

LETTERS = 'ABCD'


@dataclass(frozen=True)
class SubTask:
    index: int
    description: str
    tool: ToolName
    args: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {'index': self.index, 'description': self.description, 'tool': self.tool.value, 'args': self.args}


@dataclass(frozen=True)
class LedgerEntry:
    call_kind: CallKind
    prompt_tokens: int
    completion_tokens: int
    image_count: int
    estimated: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'call_kind': self.call_kind.value,
            'prompt_tokens': self.prompt_tokens,
            'completion_tokens': self.completion_tokens,
            'image_count': self.image_count,
            'estimated': self.estimated,
        }


class TokenLedger:
    """Image tokens are image_count x image_token_rate; totals are always recomputed from entries."""

    def __init__(self, image_token_rate: int = 85):
        self.image_token_rate = image_token_rate
        self.entries: List[LedgerEntry] = []
        self._lock = threading.Lock()

    def record(self, call_kind: CallKind, usage: Usage) -> None:
        with self._lock:
            self.entries.append(LedgerEntry(
                call_kind=call_kind,
                prompt_tokens=usage.prompt_tokens,
                completion_tokens=usage.completion_tokens,
                image_count=usage.image_count,
                estimated=usage.estimated,
            ))

    @property
    def prompt_tokens(self) -> int:
        return sum(e.prompt_tokens for e in self.entries)

    @property
    def completion_tokens(self) -> int:
        return sum(e.completion_tokens for e in self.entries)

    @property
    def image_count(self) -> int:
        return sum(e.image_count for e in self.entries)

    @property
    def image_tokens(self) -> int:
        return self.image_count * self.image_token_rate

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens + self.image_tokens

    def totals(self) -> Dict[str, Any]:
        return {
            'prompt_tokens': self.prompt_tokens,
            'completion_tokens': self.completion_tokens,
            'image_count': self.image_count,
            'image_tokens': self.image_tokens,
            'total_tokens': self.total_tokens,
            'estimated': any(e.estimated for e in self.entries),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'image_token_rate': self.image_token_rate,
            'entries': [e.to_dict() for e in self.entries],
            'totals': self.totals(),
        }


class LedgerClient(ModelClient):
    """Wraps a client and books every successful call into a ledger, in request order."""

    def __init__(self, inner: ModelClient, ledger: TokenLedger):
        self.inner = inner
        self.ledger = ledger

    def call(self, request: ClientRequest) -> ClientResponse:
        response = self.inner.call(request)
        self.ledger.record(request.call_kind, response.usage)
        return response

    def call_many(self, requests: Sequence[ClientRequest], max_workers: int = 1) -> List[ClientResponse]:
        responses = self.inner.call_many(requests, max_workers=max_workers)
        for request, response in zip(requests, responses):
            self.ledger.record(request.call_kind, response.usage)
        return responses


@dataclass
class AgentState:
    question: str
    candidates: Tuple[str, ...]
    query_time: DayTime
    ledger: TokenLedger
    plan: List[SubTask] = field(default_factory=list)
    current: int = 0
    working_memory: List[AnalysisNote] = field(default_factory=list)
    answer: Optional[int] = None
    trace: List[Dict[str, Any]] = field(default_factory=list)

    def log(self, phase: str, event: str, **detail) -> None:
        self.trace.append({'phase': phase, 'event': event, **detail})

    def remember(self, note: AnalysisNote) -> None:
        self.working_memory.append(note)

    def memory_text(self) -> str:
        return '\n'.join(note.render() for note in self.working_memory)

    @property
    def remaining(self) -> List[SubTask]:
        return self.plan[self.current:]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'question': self.question,
            'candidates': list(self.candidates),
            'query_time': self.query_time.format(),
            'plan': [s.to_dict() for s in self.plan],
            'current': self.current,
            'working_memory': [n.to_dict() for n in self.working_memory],
            'answer': self.answer,
            'trace': self.trace,
        }


@dataclass
class AnswerTrace:
    qid: str
    choice: int
    fallback: bool
    state: AgentState
    timings: Dict[str, float] = field(default_factory=dict)
    tools: Tuple[ToolName, ...] = ()

    @property
    def letter(self) -> str:
        return LETTERS[self.choice]

    @property
    def ledger(self) -> TokenLedger:
        return self.state.ledger

    def notes_for(self, tool: ToolName) -> List[AnalysisNote]:
        return [n for n in self.state.working_memory if n.tool == tool]

    def selected_timestamps(self, tool: Optional[ToolName] = None) -> List[DayTime]:
        notes = self.state.working_memory if tool is None else self.notes_for(tool)
        return [t for note in notes for t in note.cited_timestamps]

    def retrieved_timestamps(self, tool: Optional[ToolName] = None) -> List[DayTime]:
        notes = self.state.working_memory if tool is None else self.notes_for(tool)
        return [t for note in notes for t in note.retrieved_timestamps]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'qid': self.qid,
            'choice': self.choice,
            'letter': self.letter,
            'fallback': self.fallback,
            'tools': [t.value for t in self.tools],
            'state': self.state.to_dict(),
            'timings': {phase: round(seconds, 6) for phase, seconds in sorted(self.timings.items())},
            'tokens': self.ledger.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)
