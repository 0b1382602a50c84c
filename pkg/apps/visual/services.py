"""
Exact cosine kNN over 1 FPS frame embeddings with attribute filters.

The index keeps an in-memory numpy snapshot of every frame sorted by
(day, t, frame_id). Writes build a new snapshot; searches always read one
complete snapshot.
"""
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings
from django.db import transaction

from apps.core.exceptions import FrameValidationError, InvalidIntentError
from apps.core.serializers import first_error
from apps.core.timecode import validate_code
from apps.core.types import DayTime
from apps.llm.client import CallKind, ClientRequest, ModelClient, call_with_retries
from apps.visual.models import FrameRecordModel
from apps.visual.serializers import FrameHeaderSerializer, FrameRowSerializer

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-6
MAX_QUERIES = 3


@dataclass(frozen=True, eq=False)
class FrameRecord:
    frame_id: str
    when: DayTime
    embedding: np.ndarray
    location: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.frame_id, str) or not self.frame_id.strip():
            raise FrameValidationError("frame id must be a non-empty string")
        vector = np.asarray(self.embedding, dtype=np.float32)
        if vector.ndim != 1 or not vector.size:
            raise FrameValidationError(f"frame {self.frame_id}: embedding must be a non-empty vector")
        if not np.all(np.isfinite(vector)):
            raise FrameValidationError(f"frame {self.frame_id}: embedding has non-finite values")
        vector.setflags(write=False)
        object.__setattr__(self, 'embedding', vector)

    @property
    def dim(self) -> int:
        return int(self.embedding.shape[0])

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'FrameRecord':
        return cls(
            frame_id=data['frame_id'],
            when=DayTime(int(data['day']), int(data['t'])),
            embedding=np.asarray(data['embedding'], dtype=np.float32),
            location=data.get('location') or None,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {'frame_id': self.frame_id, 'when': self.when.format(), 'location': self.location}


@dataclass(frozen=True)
class FrameFilter:
    day: Optional[int] = None
    time_range: Optional[Tuple[int, int]] = None
    location: Optional[str] = None
    before: Optional[DayTime] = None

    def __post_init__(self):
        if self.time_range is not None:
            lo, hi = (validate_code(int(v)) for v in self.time_range)
            if lo > hi:
                raise InvalidIntentError(f"time range start after end: {lo:06d} > {hi:06d}")
            object.__setattr__(self, 'time_range', (lo, hi))
        if self.location is not None and not str(self.location).strip():
            object.__setattr__(self, 'location', None)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'day': self.day,
            'time_range': list(self.time_range) if self.time_range else None,
            'location': self.location,
            'before': self.before.format() if self.before else None,
        }


@dataclass(frozen=True)
class FrameHit:
    frame: FrameRecord
    score: float


@dataclass(frozen=True)
class _Snapshot:
    frames: Tuple[FrameRecord, ...]
    matrix: np.ndarray  # (n, dim) float64
    days: np.ndarray
    times: np.ndarray
    locations: np.ndarray  # lowercased, '' when untagged
    positions: Dict[str, int]

    @classmethod
    def build(cls, frames: Sequence[FrameRecord], dim: Optional[int]) -> '_Snapshot':
        frames = tuple(sorted(frames, key=lambda f: (f.when, f.frame_id)))
        width = dim or (frames[0].dim if frames else 0)
        matrix = (
            np.vstack([f.embedding for f in frames]).astype(np.float64)
            if frames else np.zeros((0, width), dtype=np.float64)
        )
        return cls(
            frames=frames,
            matrix=matrix,
            days=np.array([f.when.day for f in frames], dtype=np.int64),
            times=np.array([f.when.time_hhmmss for f in frames], dtype=np.int64),
            locations=np.array([(f.location or '').strip().lower() for f in frames], dtype=object),
            positions={f.frame_id: i for i, f in enumerate(frames)},
        )

    def mask(self, frame_filter: Optional[FrameFilter]) -> np.ndarray:
        mask = np.ones(len(self.frames), dtype=bool)
        if frame_filter is None:
            return mask
        if frame_filter.day is not None:
            mask &= self.days == frame_filter.day
        if frame_filter.time_range is not None:
            lo, hi = frame_filter.time_range
            mask &= (self.times >= lo) & (self.times <= hi)
        if frame_filter.location is not None:
            mask &= self.locations == frame_filter.location.strip().lower()
        if frame_filter.before is not None:
            cap = frame_filter.before
            mask &= (self.days < cap.day) | ((self.days == cap.day) & (self.times <= cap.time_hhmmss))
        return mask


def _record_to_frame(record: FrameRecordModel) -> FrameRecord:
    return FrameRecord(
        frame_id=record.frame_id,
        when=DayTime(record.day, record.t),
        embedding=np.frombuffer(bytes(record.embedding), dtype='<f4'),
        location=record.location or None,
    )


def _unit(vector: Any, dim: int) -> np.ndarray:
    query = np.asarray(vector, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != dim:
        raise FrameValidationError(f"query has dimension {query.shape}, index has {dim}")
    norm = np.linalg.norm(query)
    if not np.isfinite(norm) or norm == 0:
        raise FrameValidationError("query vector must be finite and non-zero")
    return query / norm


class VisualIndex:
    _write_lock = threading.Lock()

    def __init__(self, dim: Optional[int] = None):
        self._dim = dim or settings.EGOGRAPH_CONFIG.get('frame_dim')
        self._snapshot: Optional[_Snapshot] = None
        self._load_lock = threading.Lock()

    @property
    def dim(self) -> Optional[int]:
        if self._dim is None:
            stored = FrameRecordModel.objects.values_list('dim', flat=True).first()
            self._dim = stored
        return self._dim

    def _load(self) -> _Snapshot:
        with self._load_lock:
            if self._snapshot is None:
                frames = [_record_to_frame(r) for r in FrameRecordModel.objects.all().iterator()]
                self._snapshot = _Snapshot.build(frames, self.dim)
            return self._snapshot

    def __len__(self):
        return len(self._load().frames)

    def add_frames(self, records: Iterable[FrameRecord], skip_existing: bool = False) -> int:
        """
        All-or-nothing. Duplicate frame ids are rejected unless skip_existing,
        in which case ids already stored are left alone.
        """
        records = list(records)
        dim = self.dim or (records[0].dim if records else None)
        seen = set()
        for record in records:
            if record.dim != dim:
                raise FrameValidationError(f"frame {record.frame_id}: dimension {record.dim}, index has {dim}")
            norm = float(np.linalg.norm(record.embedding.astype(np.float64)))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise FrameValidationError(f"frame {record.frame_id}: embedding norm {norm:.6f} is not 1")
            if record.frame_id in seen:
                raise FrameValidationError(f"duplicate frame id {record.frame_id}")
            seen.add(record.frame_id)

        with self._write_lock, transaction.atomic():
            existing = set(
                FrameRecordModel.objects.filter(frame_id__in=list(seen)).values_list('frame_id', flat=True)
            )
            if existing and not skip_existing:
                raise FrameValidationError(f"duplicate frame id {sorted(existing)[0]}")
            new = [r for r in records if r.frame_id not in existing]
            FrameRecordModel.objects.bulk_create([
                FrameRecordModel(
                    frame_id=r.frame_id, day=r.when.day, t=r.when.time_hhmmss, location=r.location,
                    dim=r.dim, embedding=r.embedding.astype('<f4').tobytes(),
                )
                for r in new
            ], batch_size=500)

        self._dim = dim
        with self._load_lock:
            self._snapshot = None
        logger.info(f"Indexed {len(new)} frames ({len(existing)} already present)")
        return len(new)

    def search(self, query_vec: Any, frame_filter: Optional[FrameFilter] = None, k: int = 10) -> List[FrameHit]:
        """Top-k by cosine; ties go to the earlier (day, t), then the smaller frame id."""
        if k < 1:
            raise InvalidIntentError(f"k must be >= 1, got {k}")
        snapshot = self._load()
        if not snapshot.frames:
            return []
        query = _unit(query_vec, snapshot.matrix.shape[1])

        candidates = np.flatnonzero(snapshot.mask(frame_filter))
        if not candidates.size:
            return []
        # Row-wise sums give identical rows identical scores
        scores = (snapshot.matrix[candidates] * query).sum(axis=1)
        # Snapshot order is already (day, t, frame_id), so position breaks ties
        order = np.lexsort((candidates, -scores))[:k]
        return [FrameHit(snapshot.frames[candidates[i]], float(scores[i])) for i in order]

    def multi_query_search(self, queries: Sequence[Any], windows: Optional[Sequence[FrameFilter]] = None,
                           k_total: int = 50) -> List[FrameHit]:
        """
        Run every query over every window and keep each frame's best score,
        then the k_total best frames.
        """
        if not 1 <= len(queries) <= MAX_QUERIES:
            raise InvalidIntentError(f"expected 1 to {MAX_QUERIES} queries, got {len(queries)}")
        if k_total < 1:
            raise InvalidIntentError(f"k_total must be >= 1, got {k_total}")
        windows = list(windows or []) or [FrameFilter()]

        snapshot = self._load()
        best: Dict[str, FrameHit] = {}
        for query in queries:
            for window in windows:
                for hit in self.search(query, window, k_total):
                    current = best.get(hit.frame.frame_id)
                    if current is None or hit.score > current.score:
                        best[hit.frame.frame_id] = hit

        merged = sorted(best.values(), key=lambda h: (-h.score, snapshot.positions[h.frame.frame_id]))
        return merged[:k_total]

    def frames_in(self, frame_filter: Optional[FrameFilter] = None, limit: Optional[int] = None) -> List[FrameRecord]:
        """Frames passing the filter in chronological order, unranked."""
        snapshot = self._load()
        frames = [snapshot.frames[i] for i in np.flatnonzero(snapshot.mask(frame_filter))]
        return frames if limit is None else frames[:limit]

    def get(self, frame_ids: Iterable[str]) -> List[FrameRecord]:
        snapshot = self._load()
        return [snapshot.frames[snapshot.positions[i]] for i in frame_ids if i in snapshot.positions]


def sample_uniform(frames: Sequence[Any], n: int) -> List[Any]:
    """n evenly spaced items, first and last included; everything when there are fewer."""
    if n < 1:
        return []
    if len(frames) <= n:
        return list(frames)
    picks = np.unique(np.linspace(0, len(frames) - 1, n).round().astype(int))
    return [frames[i] for i in picks]


def embed_text(client: ModelClient, text: str, dim: int) -> np.ndarray:
    """Text-side embedding of a visual query through the model client."""
    output = call_with_retries(client, ClientRequest(CallKind.EMBED_TEXT, {'text': text, 'dim': dim})).output
    vector = output.get('vector') if isinstance(output, dict) else output
    return _unit(vector, dim)


def read_frames(path: Union[str, Path], dim: Optional[int] = None) -> Tuple[int, List[FrameRecord]]:
    """
    Load a frame file: JSONL whose first line is a {"dim": D} header, or a
    columnar .npz with frame_id, day, t, location and embedding arrays.
    Returns (dim, records); errors name the offending line or row.
    """
    path = Path(path)
    if path.suffix == '.npz':
        return _read_npz(path, dim)

    lines = path.read_text(encoding='utf-8').splitlines()
    records: List[FrameRecord] = []
    header_dim = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise FrameValidationError(f"line {lineno}: invalid JSON ({e.msg})") from None

        if header_dim is None:
            header = FrameHeaderSerializer(data=row)
            if not header.is_valid():
                raise FrameValidationError(f"line {lineno}: header must be {{\"dim\": D}}")
            header_dim = header.validated_data['dim']
            if dim is not None and dim != header_dim:
                raise FrameValidationError(f"line {lineno}: header dim {header_dim} but --dim {dim}")
            continue

        serializer = FrameRowSerializer(data=row, context={'dim': header_dim})
        if not serializer.is_valid():
            raise FrameValidationError(f"line {lineno}: {first_error(serializer.errors)}")
        try:
            records.append(FrameRecord.from_dict(serializer.validated_data))
        except (FrameValidationError, ValueError) as e:
            raise FrameValidationError(f"line {lineno}: {e}") from None

    if header_dim is None:
        raise FrameValidationError("frame file has no header line")
    return header_dim, records


def _read_npz(path: Path, dim: Optional[int]) -> Tuple[int, List[FrameRecord]]:
    with np.load(path, allow_pickle=False) as data:
        matrix = np.asarray(data['embedding'], dtype=np.float32)
        if matrix.ndim != 2:
            raise FrameValidationError("embedding array must be 2-dimensional")
        if dim is not None and matrix.shape[1] != dim:
            raise FrameValidationError(f"file dim {matrix.shape[1]} but --dim {dim}")
        locations = data['location'] if 'location' in data.files else [''] * len(matrix)
        records = []
        for row, (frame_id, day, t, location) in enumerate(zip(data['frame_id'], data['day'], data['t'], locations)):
            try:
                records.append(FrameRecord(
                    frame_id=str(frame_id),
                    when=DayTime(int(day), int(t)),
                    embedding=matrix[row],
                    location=str(location) or None,
                ))
            except ValueError as e:
                raise FrameValidationError(f"row {row}: {e}") from None
    return int(matrix.shape[1]), records
