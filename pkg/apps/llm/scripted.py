"""
Deterministic fixture-backed model client.

Fixture files are JSON lists (or {"responses": [...]}) of entries:

    {"kind": "plan", "hash": "<request hash>", "response": {...}, "usage": {...}}
    {"kind": "extract", "match": {"doc_id": "d3"}, "response": {...}}
    {"kind": "grade", "response": "incomplete"}

Lookup order is exact hash, then the first entry whose "match" is a subset of
the payload, then a kind-wide entry with neither key, then the built-in
default for the kind. Strict clients raise instead of using built-in defaults.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from apps.core.exceptions import ClientTransportError, MissingFixtureError
from apps.llm.client import (
    CallKind, ClientRequest, ClientResponse, ModelClient, Usage, canonicalize, estimate_usage,
)

logger = logging.getLogger(__name__)

DEFAULT_ANALYZE_CITATIONS = 3


def _longest_word(text: str) -> str:
    words = [w.strip('.,;:?!()"\'') for w in (text or '').split()]
    words = [w for w in words if w]
    return max(words, key=len) if words else ''


def _matches(expected: Any, actual: Any) -> bool:
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            return False
        return all(k in actual and _matches(v, actual[k]) for k, v in expected.items())
    return canonicalize(expected) == canonicalize(actual)


def default_output(request: ClientRequest) -> Any:
    """Kind-specific deterministic output used when no fixture applies."""
    kind = request.call_kind
    payload = request.payload

    if kind == CallKind.FUSE:
        lines = [payload.get('caption', '')]
        for utt in payload.get('utterances', []):
            speaker = f"{utt['speaker']}: " if utt.get('speaker') else ''
            lines.append(f"[{utt['start_t']:06d}-{utt['end_t']:06d}] {speaker}{utt['text']}")
        return {'text': '\n'.join(line for line in lines if line)}

    if kind == CallKind.EXTRACT:
        return {'nodes': [], 'relationships': []}

    if kind == CallKind.ANNOTATE:
        return {'annotations': []}

    if kind == CallKind.EMBED_TEXT:
        seed = int(request.request_hash[:16], 16)
        vector = np.random.default_rng(seed).standard_normal(int(payload['dim']))
        vector /= np.linalg.norm(vector)
        return {'vector': vector.tolist()}

    if kind == CallKind.PLAN:
        question = payload.get('question', '')
        steps = []
        for tool in payload.get('tools', ['eg', 'visual', 'audio']):
            args = {'evidence_substring': _longest_word(question)} if tool == 'eg' else {}
            steps.append({'description': question, 'tool': tool, 'args': args})
        return {'steps': steps}

    if kind == CallKind.REWRITE_VISUAL:
        searches = []
        for day, (start_t, end_t) in sorted(payload.get('day_search', {}).items(), key=lambda kv: int(kv[0])):
            searches.append({
                'day': int(day), 'start_t': start_t, 'end_t': end_t,
                'queries': [payload.get('task', '')],
            })
        return {'searches': searches}

    if kind == CallKind.TRANSCRIPT_LLM_SEARCH:
        return {'analysis': 'No relevant transcripts selected.', 'timestamps': []}

    if kind == CallKind.ANALYZE:
        items = payload.get('items', [])[:DEFAULT_ANALYZE_CITATIONS]
        return {
            'summary': ' | '.join(item.get('text', '') for item in items),
            'cited_timestamps': [item['when'] for item in items if item.get('when')],
            'cited_edges': [item['ref'] for item in items if payload.get('tool') == 'eg' and 'ref' in item],
        }

    if kind == CallKind.GRADE:
        return 'incomplete'

    if kind == CallKind.ANSWER:
        return 'A'

    raise MissingFixtureError(kind.value, request.request_hash)


class ScriptedModelClient(ModelClient):
    """Read-only after construction; safe to share between threads."""

    def __init__(self, entries: Optional[List[Dict[str, Any]]] = None, strict: bool = False):
        self.strict = strict
        self._by_hash: Dict[str, Dict[str, Any]] = {}
        self._matchers: Dict[str, List[Dict[str, Any]]] = {}
        self._kind_defaults: Dict[str, Dict[str, Any]] = {}
        for entry in entries or []:
            self._register(entry)

    @classmethod
    def from_path(cls, path: Union[str, Path], strict: bool = False) -> 'ScriptedModelClient':
        path = Path(path)
        files = sorted(path.glob('*.json')) if path.is_dir() else [path]
        entries: List[Dict[str, Any]] = []
        for file in files:
            data = json.loads(file.read_text(encoding='utf-8'))
            entries.extend(data['responses'] if isinstance(data, dict) else data)
        logger.info(f"Loaded {len(entries)} scripted responses from {path}")
        return cls(entries, strict=strict)

    def _register(self, entry: Dict[str, Any]) -> None:
        kind = CallKind.parse(entry['kind']).value
        if 'hash' in entry:
            self._by_hash[entry['hash']] = entry
        elif 'match' in entry:
            self._matchers.setdefault(kind, []).append(entry)
        else:
            self._kind_defaults.setdefault(kind, entry)

    def _lookup(self, request: ClientRequest) -> Optional[Dict[str, Any]]:
        entry = self._by_hash.get(request.request_hash)
        if entry is not None and entry['kind'] == request.call_kind.value:
            return entry
        for candidate in self._matchers.get(request.call_kind.value, []):
            if _matches(candidate['match'], request.payload):
                return candidate
        return self._kind_defaults.get(request.call_kind.value)

    def call(self, request: ClientRequest) -> ClientResponse:
        entry = self._lookup(request)
        if entry is None:
            if self.strict:
                raise MissingFixtureError(request.call_kind.value, request.request_hash)
            output = default_output(request)
            return ClientResponse(output=output, usage=estimate_usage(request, output))

        if 'error' in entry:
            raise ClientTransportError(entry['error'])
        output = entry['response']
        usage = Usage.from_dict(entry['usage']) if 'usage' in entry else estimate_usage(request, output)
        return ClientResponse(output=output, usage=usage)
