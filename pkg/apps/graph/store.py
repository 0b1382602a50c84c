"""
Entity graph store.

The graph lives in one flat relation table (entity_graph_table). Lookups go
through a fixed strict-to-relaxed ladder:

    A_Strict             every constraint the intent sets
    B_RelaxTime          A without the time range
    C_RelaxDay           B without the day (the query-time day cap stays)
    D_SubstringEntities  entity ids reduced to their longest token, substring match
    E_RelaxRelType       only the target (or source) substring plus evidence

The first stage that returns rows wins.
"""
import json
import logging
import re
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

from django.db import transaction
from django.db.models import Count, Q

from apps.core.exceptions import EdgeValidationError, InvalidIntentError
from apps.core.serializers import first_error
from apps.core.timecode import validate_code
from apps.core.types import DayTime, EntityRef, EntityType, RelationType, TimeInterval, normalize_id
from apps.graph.models import RelationEdgeRecord
from apps.graph.serializers import EdgeRowSerializer

logger = logging.getLogger(__name__)

DEFAULT_MAX_ROWS = 50

# Column order of the dedup key; RelationEdge.key follows it
KEY_COLUMNS = (
    'day', 'start_t', 'end_t', 'transcript',
    'source_id', 'source_type', 'target_id', 'target_type', 'rel_type',
)


@dataclass(frozen=True)
class RelationEdge:
    source: EntityRef
    target: EntityRef
    rel: RelationType
    interval: TimeInterval
    evidence: str = ''
    row_id: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.source, EntityRef) or not isinstance(self.target, EntityRef):
            raise EdgeValidationError("edge endpoints must be entity references")
        if not isinstance(self.interval, TimeInterval):
            raise EdgeValidationError("edge interval must be a TimeInterval")
        if not isinstance(self.evidence, str):
            raise EdgeValidationError("edge evidence must be text")
        object.__setattr__(self, 'rel', RelationType.parse(self.rel))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'RelationEdge':
        """Build from a row keyed by the table's column names."""
        try:
            return cls(
                source=EntityRef(data['source_id'], data['source_type']),
                target=EntityRef(data['target_id'], data['target_type']),
                rel=data['rel_type'],
                interval=TimeInterval.on_day(int(data['day']), int(data['start_t']), int(data['end_t'])),
                evidence=data.get('transcript') or '',
                row_id=data.get('id'),
            )
        except KeyError as e:
            raise EdgeValidationError(f"missing field {e.args[0]!r}") from None
        except (AttributeError, TypeError, ValueError) as e:
            raise EdgeValidationError(str(e)) from e

    @classmethod
    def from_record(cls, record: RelationEdgeRecord) -> 'RelationEdge':
        return cls(
            source=EntityRef(record.source_id, record.source_type),
            target=EntityRef(record.target_id, record.target_type),
            rel=record.rel_type,
            interval=TimeInterval.on_day(record.day, record.start_t, record.end_t),
            evidence=record.transcript,
            row_id=record.id,
        )

    @property
    def key(self) -> Tuple:
        return (
            self.interval.day, self.interval.start_t, self.interval.end_t, self.evidence,
            self.source.id, self.source.etype.value, self.target.id, self.target.etype.value,
            self.rel.value,
        )

    def to_row(self) -> Dict[str, Any]:
        return dict(zip(KEY_COLUMNS, self.key))

    def to_record(self) -> RelationEdgeRecord:
        return RelationEdgeRecord(
            **self.to_row(),
            source_key=normalize_id(self.source.id),
            target_key=normalize_id(self.target.id),
            transcript_key=self.evidence.lower(),
        )

    def to_dict(self) -> Dict[str, Any]:
        row = self.to_row()
        row['id'] = self.row_id
        return row

    def describe(self) -> str:
        text = (
            f"{self.interval.format()} {self.source.id} ({self.source.etype.value}) "
            f"{self.rel.value} {self.target.id} ({self.target.etype.value})"
        )
        return f"{text}: \"{self.evidence}\"" if self.evidence else text


def _clean(value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    value = str(value).strip()
    return value or None


@dataclass(frozen=True)
class GraphQueryIntent:
    """What the caller wants from the graph. query_time caps the searchable days."""
    query_time: DayTime
    day: Optional[int] = None
    time_range: Optional[Tuple[int, int]] = None
    source_id: Optional[str] = None
    source_type: Optional[EntityType] = None
    target_id: Optional[str] = None
    target_type: Optional[EntityType] = None
    rel: Optional[RelationType] = None
    evidence_substring: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.query_time, DayTime):
            raise InvalidIntentError("intent needs a query_time")
        if self.day is not None:
            if isinstance(self.day, bool) or not str(self.day).strip().isdigit() or int(self.day) < 1:
                raise InvalidIntentError(f"day must be an integer >= 1, got {self.day!r}")
            object.__setattr__(self, 'day', int(self.day))
        if self.time_range is not None:
            if len(self.time_range) != 2:
                raise InvalidIntentError("time_range is (start_t_ge, end_t_le)")
            lo, hi = (validate_code(int(v)) for v in self.time_range)
            object.__setattr__(self, 'time_range', (lo, hi))
        for name in ('source_id', 'target_id', 'evidence_substring'):
            object.__setattr__(self, name, _clean(getattr(self, name)))
        for name in ('source_type', 'target_type'):
            value = getattr(self, name)
            object.__setattr__(self, name, EntityType.parse(value) if value else None)
        if self.rel:
            object.__setattr__(self, 'rel', RelationType.parse(self.rel))
        else:
            object.__setattr__(self, 'rel', None)
        if not any((self.target_id, self.source_id, self.rel, self.evidence_substring)):
            raise InvalidIntentError(
                "intent needs at least one of target_id, source_id, rel or evidence_substring"
            )

    @classmethod
    def from_args(cls, args: Mapping[str, Any], query_time: DayTime) -> 'GraphQueryIntent':
        """Lower planner arguments; accepts table column names as aliases."""
        time_range = args.get('time_range')
        if time_range is None and (args.get('start_t') is not None or args.get('end_t') is not None):
            end_t = args.get('end_t')
            time_range = (args.get('start_t') or 0, 235959 if end_t is None else end_t)
        return cls(
            query_time=query_time,
            day=args.get('day'),
            time_range=tuple(time_range) if time_range is not None else None,
            source_id=args.get('source_id'),
            source_type=args.get('source_type'),
            target_id=args.get('target_id'),
            target_type=args.get('target_type'),
            rel=args.get('rel') or args.get('rel_type'),
            evidence_substring=args.get('evidence_substring') or args.get('transcript'),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'query_time': self.query_time.to_dict(),
            'day': self.day,
            'time_range': list(self.time_range) if self.time_range else None,
            'source_id': self.source_id,
            'source_type': self.source_type.value if self.source_type else None,
            'target_id': self.target_id,
            'target_type': self.target_type.value if self.target_type else None,
            'rel': self.rel.value if self.rel else None,
            'evidence_substring': self.evidence_substring,
        }


class LadderStage(str, Enum):
    A_STRICT = 'A_Strict'
    B_RELAX_TIME = 'B_RelaxTime'
    C_RELAX_DAY = 'C_RelaxDay'
    D_SUBSTRING_ENTITIES = 'D_SubstringEntities'
    E_RELAX_REL_TYPE = 'E_RelaxRelType'


@dataclass(frozen=True)
class StagePredicate:
    """An intent as evaluated at one ladder stage."""
    day_cap: int
    day: Optional[int] = None
    time_range: Optional[Tuple[int, int]] = None
    source_id: Optional[str] = None
    source_type: Optional[EntityType] = None
    target_id: Optional[str] = None
    target_type: Optional[EntityType] = None
    rel: Optional[RelationType] = None
    evidence_substring: Optional[str] = None
    substring_entities: bool = False

    @property
    def is_unconstrained(self) -> bool:
        return not any((self.source_id, self.target_id, self.rel, self.evidence_substring))


@dataclass
class LadderResult:
    stage_used: LadderStage
    rows: List[RelationEdge]
    queries_issued: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'stage_used': self.stage_used.value,
            'rows': [row.to_dict() for row in self.rows],
            'queries_issued': list(self.queries_issued),
        }


@dataclass
class InsertReport:
    inserted: int = 0
    duplicates: int = 0
    rejected: List[Tuple[int, str]] = field(default_factory=list)


@dataclass
class GraphStats:
    total_edges: int = 0
    edges_per_day: Dict[int, int] = field(default_factory=dict)
    edges_per_rel: Dict[RelationType, int] = field(default_factory=dict)
    source_type_counts: Dict[EntityType, int] = field(default_factory=dict)
    target_type_counts: Dict[EntityType, int] = field(default_factory=dict)
    source_target_type_pairs: Dict[Tuple[EntityType, EntityType], int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'total_edges': self.total_edges,
            'edges_per_day': {str(day): n for day, n in sorted(self.edges_per_day.items())},
            'edges_per_rel': {rel.value: n for rel, n in self.edges_per_rel.items()},
            'source_type_counts': {t.value: n for t, n in self.source_type_counts.items()},
            'target_type_counts': {t.value: n for t, n in self.target_type_counts.items()},
            'source_target_type_pairs': {
                f"{s.value}->{t.value}": n for (s, t), n in self.source_target_type_pairs.items()
            },
        }


def longest_token(value: str) -> str:
    tokens = value.split()
    return max(tokens, key=len) if tokens else value


def stage_predicates(intent: GraphQueryIntent) -> List[Tuple[LadderStage, StagePredicate]]:
    """The ladder schedule for an intent, strictest first."""
    strict = StagePredicate(
        day_cap=intent.query_time.day,
        day=intent.day,
        time_range=intent.time_range,
        source_id=intent.source_id,
        source_type=intent.source_type,
        target_id=intent.target_id,
        target_type=intent.target_type,
        rel=intent.rel,
        evidence_substring=intent.evidence_substring,
    )
    relax_time = replace(strict, time_range=None)
    relax_day = replace(relax_time, day=None)
    substring = replace(
        relax_day,
        source_id=longest_token(intent.source_id) if intent.source_id else None,
        target_id=longest_token(intent.target_id) if intent.target_id else None,
        substring_entities=True,
    )
    # Last resort keeps a single entity, the target when there is one
    relax_rel = StagePredicate(
        day_cap=strict.day_cap,
        target_id=substring.target_id,
        source_id=None if substring.target_id else substring.source_id,
        evidence_substring=strict.evidence_substring,
        substring_entities=True,
    )

    stages = [
        (LadderStage.A_STRICT, strict),
        (LadderStage.B_RELAX_TIME, relax_time),
        (LadderStage.C_RELAX_DAY, relax_day),
        (LadderStage.D_SUBSTRING_ENTITIES, substring),
    ]
    if not relax_rel.is_unconstrained:
        stages.append((LadderStage.E_RELAX_REL_TYPE, relax_rel))
    return stages


def _quote(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def render_predicate(predicate: StagePredicate) -> str:
    """Canonical SQL-style text of a stage predicate, for traces only."""
    clauses = [f"day <= {predicate.day_cap}"]
    if predicate.day is not None:
        clauses.append(f"day = {predicate.day}")
    if predicate.time_range is not None:
        clauses.append(f"start_t >= {predicate.time_range[0]}")
        clauses.append(f"end_t <= {predicate.time_range[1]}")
    for column, value, etype in (
        ('source', predicate.source_id, predicate.source_type),
        ('target', predicate.target_id, predicate.target_type),
    ):
        if value:
            needle = normalize_id(value)
            if predicate.substring_entities:
                clauses.append(f"LOWER(TRIM({column}_id)) LIKE {_quote('%' + needle + '%')}")
            else:
                clauses.append(f"LOWER(TRIM({column}_id)) = {_quote(needle)}")
        if etype:
            clauses.append(f"{column}_type = {_quote(etype.value)}")
    if predicate.rel:
        clauses.append(f"rel_type = {_quote(predicate.rel.value)}")
    if predicate.evidence_substring:
        clauses.append(f"LOWER(transcript) LIKE {_quote('%' + predicate.evidence_substring.lower() + '%')}")
    return f"SELECT * FROM entity_graph_table WHERE {' AND '.join(clauses)} ORDER BY day, start_t, id"


_AND_RE = re.compile(r'\s+AND\s+', re.IGNORECASE)
_PREFIX_RE = re.compile(r'^\s*SELECT\b.*?\bWHERE\b', re.IGNORECASE | re.DOTALL)
_SUFFIX_RE = re.compile(r'\s*(?:\bORDER\s+BY\b|\bLIMIT\b|;).*$', re.IGNORECASE | re.DOTALL)
_DAY_RE = re.compile(r'^day\s*(=|<=)\s*(\d+)$', re.IGNORECASE)
_RANGE_RE = re.compile(r'^(start_t\s*>=|end_t\s*<=)\s*(\d+)$', re.IGNORECASE)
_TEXT_RE = re.compile(
    r"^(?:LOWER\s*\(\s*)?(?:TRIM\s*\(\s*)?(source_id|target_id|transcript)\s*\)?\s*\)?\s+(=|LIKE)\s+'((?:[^']|'')*)'$",
    re.IGNORECASE,
)
_ENUM_RE = re.compile(r"^(source_type|target_type|rel_type)\s*=\s*'((?:[^']|'')*)'$", re.IGNORECASE)


def _split_conjunction(where: str) -> List[str]:
    parts, start, i, in_quote = [], 0, 0, False
    while i < len(where):
        if where[i] == "'":
            if in_quote and where[i + 1:i + 2] == "'":
                i += 2
                continue
            in_quote = not in_quote
        elif not in_quote:
            match = _AND_RE.match(where, i)
            if match:
                parts.append(where[start:i])
                start = i = match.end()
                continue
        i += 1
    parts.append(where[start:])
    return [part.strip().strip('()').strip() for part in parts if part.strip()]


def intent_from_predicate(text: str, query_time: DayTime) -> GraphQueryIntent:
    """
    Lower a conjunctive WHERE predicate over entity_graph_table (as rendered by
    render_predicate or written by a model) into an intent. The day cap always
    comes from query_time; any other clause shape is rejected.
    """
    where = _SUFFIX_RE.sub('', _PREFIX_RE.sub('', text or '', count=1)).strip()
    if not where:
        raise InvalidIntentError("empty predicate")

    args: Dict[str, Any] = {}
    for clause in _split_conjunction(where):
        if match := _DAY_RE.match(clause):
            if match.group(1) == '=':
                args['day'] = int(match.group(2))
        elif match := _RANGE_RE.match(clause):
            key = 'start_t' if match.group(1).lower().startswith('start') else 'end_t'
            args[key] = int(match.group(2))
        elif match := _TEXT_RE.match(clause):
            column = match.group(1).lower()
            value = match.group(3).replace("''", "'")
            if match.group(2).upper() == 'LIKE':
                value = value.strip('%')
            args['evidence_substring' if column == 'transcript' else column] = value
        elif match := _ENUM_RE.match(clause):
            args[match.group(1).lower()] = match.group(2).replace("''", "'")
        else:
            raise InvalidIntentError(f"unsupported predicate clause: {clause!r}")

    return GraphQueryIntent.from_args(args, query_time)


class GraphStore:
    """
    ORM-backed relation table. Reads run concurrently; each insert batch
    commits atomically through one process-wide writer lock.
    """
    _write_lock = threading.Lock()

    def insert_edges(self, edges: Iterable[Union[RelationEdge, Mapping[str, Any]]]) -> InsertReport:
        report = InsertReport()
        batch: Dict[Tuple, RelationEdge] = {}
        valid = 0
        for position, item in enumerate(edges):
            try:
                edge = item if isinstance(item, RelationEdge) else RelationEdge.from_dict(item)
            except (EdgeValidationError, ValueError) as e:
                logger.warning(f"Rejected edge #{position}: {e}")
                report.rejected.append((position, str(e)))
                continue
            valid += 1
            batch.setdefault(edge.key, edge)

        with self._write_lock, transaction.atomic():
            existing = self._existing_keys({key[0] for key in batch})
            new_edges = [edge for key, edge in batch.items() if key not in existing]
            RelationEdgeRecord.objects.bulk_create(
                [edge.to_record() for edge in new_edges],
                batch_size=500,
            )

        report.inserted = len(new_edges)
        report.duplicates = valid - report.inserted
        logger.info(
            f"Inserted {report.inserted} edges "
            f"({report.duplicates} duplicates, {len(report.rejected)} rejected)"
        )
        return report

    def _existing_keys(self, days: Set[int]) -> Set[Tuple]:
        if not days:
            return set()
        return set(RelationEdgeRecord.objects.filter(day__in=days).values_list(*KEY_COLUMNS))

    def query(self, intent: GraphQueryIntent) -> List[RelationEdge]:
        """Exact (case-insensitive) match on every field the intent sets."""
        return self.execute(stage_predicates(intent)[0][1])

    def execute(self, predicate: StagePredicate, limit: Optional[int] = None) -> List[RelationEdge]:
        queryset = (
            RelationEdgeRecord.objects
            .filter(self._conditions(predicate))
            .order_by('day', 'start_t', 'id')
        )
        if limit is not None:
            queryset = queryset[:limit]
        return [RelationEdge.from_record(record) for record in queryset]

    @staticmethod
    def _conditions(predicate: StagePredicate) -> Q:
        conditions = Q(day__lte=predicate.day_cap)
        if predicate.day is not None:
            conditions &= Q(day=predicate.day)
        if predicate.time_range is not None:
            conditions &= Q(start_t__gte=predicate.time_range[0], end_t__lte=predicate.time_range[1])
        lookup = 'contains' if predicate.substring_entities else 'exact'
        if predicate.source_id:
            conditions &= Q(**{f'source_key__{lookup}': normalize_id(predicate.source_id)})
        if predicate.target_id:
            conditions &= Q(**{f'target_key__{lookup}': normalize_id(predicate.target_id)})
        if predicate.source_type:
            conditions &= Q(source_type=predicate.source_type.value)
        if predicate.target_type:
            conditions &= Q(target_type=predicate.target_type.value)
        if predicate.rel:
            conditions &= Q(rel_type=predicate.rel.value)
        if predicate.evidence_substring:
            conditions &= Q(transcript_key__contains=predicate.evidence_substring.lower())
        return conditions

    def run_ladder(self, intent: GraphQueryIntent, max_rows: int = DEFAULT_MAX_ROWS) -> LadderResult:
        if max_rows < 1:
            raise InvalidIntentError(f"max_rows must be >= 1, got {max_rows}")

        issued: List[str] = []
        stage = LadderStage.A_STRICT
        for stage, predicate in stage_predicates(intent):
            issued.append(f"{stage.value}: {render_predicate(predicate)}")
            rows = self.execute(predicate, limit=max_rows)
            if rows:
                logger.debug(f"Ladder hit at {stage.value} with {len(rows)} rows")
                return LadderResult(stage, rows, issued)

        logger.debug(f"Ladder exhausted after {len(issued)} stages")
        return LadderResult(stage, [], issued)

    def existing_ids(self, row_ids: Iterable[int]) -> Set[int]:
        ids = {int(row_id) for row_id in row_ids}
        if not ids:
            return set()
        return set(RelationEdgeRecord.objects.filter(id__in=ids).values_list('id', flat=True))

    def stats(self) -> GraphStats:
        records = RelationEdgeRecord.objects.order_by()
        stats = GraphStats(
            edges_per_rel={rel: 0 for rel in RelationType},
            source_type_counts={etype: 0 for etype in EntityType},
            target_type_counts={etype: 0 for etype in EntityType},
        )
        stats.total_edges = records.count()
        stats.edges_per_day = {
            day: n for day, n in records.values_list('day').annotate(n=Count('id')).order_by('day')
        }
        for rel, n in records.values_list('rel_type').annotate(n=Count('id')):
            stats.edges_per_rel[RelationType.parse(rel)] += n
        for source_type, target_type, n in (
            records.values_list('source_type', 'target_type').annotate(n=Count('id'))
        ):
            source_type, target_type = EntityType.parse(source_type), EntityType.parse(target_type)
            stats.source_type_counts[source_type] += n
            stats.target_type_counts[target_type] += n
            pair = (source_type, target_type)
            stats.source_target_type_pairs[pair] = stats.source_target_type_pairs.get(pair, 0) + n
        stats.source_target_type_pairs = dict(sorted(
            stats.source_target_type_pairs.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value),
        ))
        return stats

    def export_jsonl(self, path: Union[str, Path]) -> int:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with path.open('w', encoding='utf-8') as fh:
            for record in RelationEdgeRecord.objects.order_by('day', 'start_t', 'id').iterator():
                fh.write(json.dumps(RelationEdge.from_record(record).to_dict(), ensure_ascii=False) + '\n')
                count += 1
        logger.info(f"Exported {count} edges to {path}")
        return count

    def import_jsonl(self, path: Union[str, Path]) -> InsertReport:
        """Rejections in the report carry 1-based line numbers."""
        rows, line_numbers, rejected = [], [], []
        for lineno, line in enumerate(Path(path).read_text(encoding='utf-8').splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise EdgeValidationError(f"line {lineno}: invalid JSON ({e.msg})") from None
            serializer = EdgeRowSerializer(data=row)
            if not serializer.is_valid():
                rejected.append((lineno, first_error(serializer.errors)))
                continue
            rows.append(serializer.validated_data)
            line_numbers.append(lineno)

        report = self.insert_edges(rows)
        report.rejected = rejected + [(line_numbers[position], reason) for position, reason in report.rejected]
        report.rejected.sort()
        return report
