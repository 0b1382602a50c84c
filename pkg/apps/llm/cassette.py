"""
Record / replay of model traffic.

A cassette is JSONL, one {hash, kind, response, usage} object per line.
"""
import json
import logging
import threading
from pathlib import Path
from typing import Dict, Tuple, Union

from apps.core.exceptions import ReplayMissError
from apps.llm.client import ClientRequest, ClientResponse, ModelClient, Usage

logger = logging.getLogger(__name__)


class RecordingModelClient(ModelClient):
    """Forwards to an inner client and appends every exchange to the cassette."""

    def __init__(self, inner: ModelClient, cassette_path: Union[str, Path]):
        self.inner = inner
        self.cassette_path = Path(cassette_path)
        self.cassette_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._recorded = set()
        if self.cassette_path.exists():
            self._recorded = set(load_cassette(self.cassette_path))

    def call(self, request: ClientRequest) -> ClientResponse:
        response = self.inner.call(request)
        with self._lock:
            if request.request_hash not in self._recorded:
                line = json.dumps({
                    'hash': request.request_hash,
                    'kind': request.call_kind.value,
                    'response': response.output,
                    'usage': response.usage.to_dict(),
                }, sort_keys=True)
                with self.cassette_path.open('a', encoding='utf-8') as fh:
                    fh.write(line + '\n')
                self._recorded.add(request.request_hash)
        return response


def load_cassette(path: Union[str, Path]) -> Dict[str, Tuple[str, object, Usage]]:
    entries: Dict[str, Tuple[str, object, Usage]] = {}
    for line in Path(path).read_text(encoding='utf-8').splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        entries[row['hash']] = (row['kind'], row['response'], Usage.from_dict(row.get('usage')))
    return entries


class ReplayModelClient(ModelClient):
    """Serves only from the cassette; any miss is an error."""

    def __init__(self, cassette_path: Union[str, Path]):
        self.cassette_path = Path(cassette_path)
        self._entries = load_cassette(self.cassette_path) if self.cassette_path.exists() else {}
        logger.info(f"Replay cassette {self.cassette_path} holds {len(self._entries)} responses")

    def __len__(self):
        return len(self._entries)

    def call(self, request: ClientRequest) -> ClientResponse:
        entry = self._entries.get(request.request_hash)
        if entry is None or entry[0] != request.call_kind.value:
            raise ReplayMissError(request.call_kind.value, request.request_hash)
        _, output, usage = entry
        return ClientResponse(output=output, usage=usage)
