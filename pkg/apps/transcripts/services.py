import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from django.conf import settings
from django.db import transaction

from apps.core.exceptions import InvalidIntentError, UtteranceValidationError
from apps.core.types import AnalysisNote, DayTime, TimeInterval, ToolName, find_timestamps
from apps.llm.client import CallKind, ClientRequest, ModelClient
from apps.transcripts.bm25 import BM25Index, tokenize
from apps.transcripts.models import UtteranceRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    when: TimeInterval
    text: str
    speaker: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.utt_id, str) or not self.utt_id.strip():
            raise UtteranceValidationError("utterance id must be a non-empty string")
        if not isinstance(self.text, str) or not self.text.strip():
            raise UtteranceValidationError(f"utterance {self.utt_id} has empty text")
        if not isinstance(self.when, TimeInterval):
            raise UtteranceValidationError(f"utterance {self.utt_id} needs a TimeInterval")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Utterance':
        try:
            return cls(
                utt_id=data['utt_id'],
                when=TimeInterval.on_day(int(data['day']), int(data['start_t']), int(data['end_t'])),
                text=data['text'],
                speaker=data.get('speaker') or None,
            )
        except KeyError as e:
            raise UtteranceValidationError(f"missing field {e.args[0]!r}") from None
        except UtteranceValidationError:
            raise
        except (TypeError, ValueError) as e:
            raise UtteranceValidationError(f"utterance {data.get('utt_id')}: {e}") from e

    @classmethod
    def from_record(cls, record: UtteranceRecord) -> 'Utterance':
        return cls(
            utt_id=record.utt_id,
            when=TimeInterval.on_day(record.day, record.start_t, record.end_t),
            text=record.text,
            speaker=record.speaker or None,
        )

    @property
    def sort_key(self) -> Tuple:
        return (self.when.start, self.when.end, self.utt_id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'utt_id': self.utt_id,
            'speaker': self.speaker,
            'day': self.when.day,
            'start_t': self.when.start_t,
            'end_t': self.when.end_t,
            'text': self.text,
        }

    def to_prompt_item(self) -> Dict[str, Any]:
        return {
            'utt_id': self.utt_id,
            'when': self.when.start.format(),
            'speaker': self.speaker or '',
            'text': self.text,
        }


@dataclass(frozen=True)
class LexicalHit:
    utterance: Utterance
    score: float
    context: Tuple[Utterance, ...] = ()


@dataclass
class _Snapshot:
    utterances: List[Utterance]
    index: BM25Index
    positions: Dict[str, int] = field(default_factory=dict)


class TranscriptSearch:
    """
    Utterance store with two retrieval variants: BM25 over utterances and a
    model-mediated read of whole-day transcripts.
    """
    _write_lock = threading.Lock()

    def __init__(self, k1: float = None, b: float = None, context: int = None):
        config = settings.EGOGRAPH_CONFIG
        self.k1 = config['bm25_k1'] if k1 is None else k1
        self.b = config['bm25_b'] if b is None else b
        self.context = config['bm25_context'] if context is None else context
        self._snapshot: Optional[_Snapshot] = None
        self._snapshot_lock = threading.Lock()

    def add_utterances(self, utterances: Iterable[Union[Utterance, Mapping[str, Any]]],
                       skip_existing: bool = False) -> int:
        """
        All-or-nothing. With skip_existing, utterances already stored with
        identical content are left alone, which makes re-ingesting a file a
        no-op; a stored id with different content is still an error.
        """
        batch: Dict[str, Utterance] = {}
        for item in utterances:
            utterance = item if isinstance(item, Utterance) else Utterance.from_dict(item)
            if utterance.utt_id in batch:
                raise UtteranceValidationError(f"duplicate utterance id {utterance.utt_id}")
            batch[utterance.utt_id] = utterance

        with self._write_lock, transaction.atomic():
            existing = {
                record.utt_id: Utterance.from_record(record)
                for record in UtteranceRecord.objects.filter(utt_id__in=list(batch))
            }
            for utt_id, stored in existing.items():
                if not skip_existing or stored != batch[utt_id]:
                    raise UtteranceValidationError(f"duplicate utterance id {utt_id}")

            new = [u for utt_id, u in batch.items() if utt_id not in existing]
            UtteranceRecord.objects.bulk_create([
                UtteranceRecord(
                    utt_id=u.utt_id, speaker=u.speaker, day=u.when.day,
                    start_t=u.when.start_t, end_t=u.when.end_t, text=u.text,
                )
                for u in new
            ], batch_size=500)

        with self._snapshot_lock:
            self._snapshot = None
        logger.info(f"Added {len(new)} utterances ({len(existing)} already stored)")
        return len(new)

    def _load(self) -> _Snapshot:
        with self._snapshot_lock:
            if self._snapshot is None:
                utterances = sorted(
                    (Utterance.from_record(r) for r in UtteranceRecord.objects.all().iterator()),
                    key=lambda u: u.sort_key,
                )
                self._snapshot = _Snapshot(
                    utterances=utterances,
                    index=BM25Index([u.text for u in utterances], k1=self.k1, b=self.b),
                    positions={u.utt_id: i for i, u in enumerate(utterances)},
                )
            return self._snapshot

    def __len__(self):
        return len(self._load().utterances)

    def bm25_search(self, query: str, time_range: Optional[Tuple[DayTime, DayTime]] = None,
                    k: int = 10) -> List[LexicalHit]:
        """Only utterances sharing a term with the query are returned."""
        if k < 1:
            raise InvalidIntentError(f"k must be >= 1, got {k}")
        tokens = tokenize(query)
        if not tokens:
            raise InvalidIntentError(f"query has no searchable terms: {query!r}")

        snapshot = self._load()
        candidates = None
        if time_range is not None:
            start, end = time_range
            candidates = [
                i for i, u in enumerate(snapshot.utterances) if u.when.intersects(start, end)
            ]

        scores = snapshot.index.search(tokens, candidates)
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], snapshot.utterances[kv[0]].sort_key))
        return [
            LexicalHit(
                utterance=snapshot.utterances[position],
                score=score,
                context=tuple(self._neighbours(snapshot, position, self.context)),
            )
            for position, score in ranked[:k]
        ]

    @staticmethod
    def _neighbours(snapshot: _Snapshot, position: int, n: int) -> List[Utterance]:
        day = snapshot.utterances[position].when.day
        lo, hi = max(0, position - n), min(len(snapshot.utterances), position + n + 1)
        return [u for u in snapshot.utterances[lo:hi] if u.when.day == day]

    def context_window(self, utt_id: str, n: int = None) -> List[Utterance]:
        """The utterance with up to n same-day neighbours on either side, in time order."""
        snapshot = self._load()
        if utt_id not in snapshot.positions:
            raise UtteranceValidationError(f"unknown utterance id {utt_id}")
        return self._neighbours(snapshot, snapshot.positions[utt_id], self.context if n is None else n)

    def day_transcript(self, day: int, before: Optional[DayTime] = None) -> List[Utterance]:
        return [
            u for u in self._load().utterances
            if u.when.day == day and (before is None or u.when.start <= before)
        ]

    def get(self, utt_ids: Sequence[str]) -> List[Utterance]:
        snapshot = self._load()
        return [snapshot.utterances[snapshot.positions[i]] for i in utt_ids if i in snapshot.positions]

    def all_utterances(self) -> List[Utterance]:
        return list(self._load().utterances)

    def llm_search(self, task: str, memory: str, days: Union[int, Sequence[int]], client: ModelClient,
                   subtask_index: int = 0, before: Optional[DayTime] = None,
                   max_workers: int = None) -> AnalysisNote:
        """
        One transcript_llm_search call per day, fanned out concurrently and
        merged in day order. Timestamps come from the response's "timestamps"
        list and from the analysis prose; anything unparseable is ignored.
        """
        days = sorted({int(days)} if isinstance(days, int) else {int(d) for d in days})
        if not days:
            raise InvalidIntentError("llm_search needs at least one day")
        if max_workers is None:
            max_workers = settings.EGOGRAPH_CONFIG['max_inflight_calls']

        transcripts = {day: self.day_transcript(day, before=before) for day in days}
        requests = [
            ClientRequest(CallKind.TRANSCRIPT_LLM_SEARCH, {
                'task': task,
                'memory': memory,
                'day': day,
                'transcripts': [u.to_prompt_item() for u in transcripts[day]],
            })
            for day in days
        ]
        responses = client.call_many(requests, max_workers=max_workers)

        summaries, cited = [], []
        for day, response in zip(days, responses):
            analysis, stamps = parse_transcript_analysis(response.output, day)
            summaries.append(f"[D{day}] {analysis}")
            for moment in stamps:
                if before is not None and moment > before:
                    logger.debug(f"Dropping citation {moment} after {before}")
                elif moment not in cited:
                    cited.append(moment)

        retrieved = [u.when.start for day in days for u in transcripts[day]]
        logger.debug(f"llm_search over days {days} cited {len(cited)} timestamps")
        return AnalysisNote(
            subtask_index=subtask_index,
            tool=ToolName.AUDIO,
            summary='\n'.join(summaries),
            cited_timestamps=tuple(cited),
            retrieved_count=len(retrieved),
            retrieved_timestamps=tuple(retrieved),
        )


def parse_transcript_analysis(output: Any, day: int) -> Tuple[str, List[DayTime]]:
    if isinstance(output, dict):
        analysis = str(output.get('analysis') or '')
        raw_stamps = output.get('timestamps') or []
        if not isinstance(raw_stamps, list):
            raw_stamps = [raw_stamps]
    else:
        analysis = str(output or '')
        raw_stamps = []

    stamps: List[DayTime] = []
    for text in [str(s) for s in raw_stamps] + [analysis]:
        for moment in find_timestamps(text, default_day=day):
            if moment not in stamps:
                stamps.append(moment)
    return analysis, stamps
