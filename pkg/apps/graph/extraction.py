"""
Entity graph construction.

captions + utterances --fuse--> documents --extract--> nodes / raw edges
--annotate--> temporally grounded RelationEdges --> GraphStore

With the transcript source, documents are fixed windows of speech alone and
the fuse step is skipped.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from django.conf import settings
from django.db import transaction

from apps.core.config import EXTRACTION_SOURCES
from apps.core.exceptions import (
    CaptionOrderError, ClientError, EngineError, ExtractionError, InvalidEnumError,
)
from apps.core.timecode import code_to_seconds, seconds_to_code
from apps.core.types import EntityRef, EntityType, RelationType, TimeInterval, hull
from apps.graph.models import CaptionRecord, DocumentRecord
from apps.graph.store import GraphStats, GraphStore, RelationEdge
from apps.llm.client import CallKind, ClientRequest, ModelClient, call_with_retries
from apps.transcripts.services import Utterance

logger = logging.getLogger(__name__)

BATCHING_MODES = ('hour', 'video')
TRANSCRIPT_DOC_PREFIX = 'transcript:'
LAST_SECOND = 86399


@dataclass(frozen=True)
class Caption:
    doc_id: str
    interval: TimeInterval
    text: str

    @classmethod
    def from_record(cls, record: CaptionRecord) -> 'Caption':
        return cls(record.doc_id, TimeInterval.on_day(record.day, record.start_t, record.end_t), record.text)


@dataclass(frozen=True)
class Document:
    doc_id: str
    interval: TimeInterval
    caption_text: str
    utterance_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'utterance_ids', tuple(self.utterance_ids))

    @property
    def day(self) -> int:
        return self.interval.day

    @classmethod
    def from_record(cls, record: DocumentRecord) -> 'Document':
        return cls(
            doc_id=record.doc_id,
            interval=TimeInterval.on_day(record.day, record.start_t, record.end_t),
            caption_text=record.caption_text,
            utterance_ids=tuple(record.utterance_ids),
        )


@dataclass(frozen=True)
class RawEdge:
    source: EntityRef
    target: EntityRef
    rel: RelationType


@dataclass(frozen=True)
class ExtractionResult:
    nodes: Tuple[EntityRef, ...] = ()
    raw_edges: Tuple[RawEdge, ...] = ()


@dataclass
class BuildReport:
    stats: GraphStats
    documents: int = 0
    inserted: int = 0
    rejected: int = 0
    failures: Dict[str, str] = field(default_factory=dict)


def belongs_to_window(when: TimeInterval, window: TimeInterval) -> bool:
    """
    Half-open membership: an utterance ending exactly where a window starts
    is not in it. A zero-length utterance belongs to the window holding its
    instant.
    """
    if when.start == when.end:
        return window.start <= when.start < window.end
    return when.intersects_half_open(window)


def _check_caption_order(captions: Sequence[Caption]) -> None:
    for previous, current in zip(captions, captions[1:]):
        if current.interval.start < previous.interval.start:
            raise CaptionOrderError(f"captions out of order at {current.doc_id}")
        if current.interval.day == previous.interval.day and current.interval.start < previous.interval.end:
            raise CaptionOrderError(f"caption {current.doc_id} overlaps {previous.doc_id}")


def _transcript_lines(utterances: Sequence[Utterance]) -> List[str]:
    lines = []
    for u in utterances:
        speaker = f"{u.speaker}: " if u.speaker else ''
        lines.append(f"[{u.when.start_t:06d}-{u.when.end_t:06d}] {speaker}{u.text}")
    return lines


def _fallback_fusion(caption: Caption, utterances: Sequence[Utterance]) -> str:
    return '\n'.join(line for line in [caption.text, *_transcript_lines(utterances)] if line)


def transcript_documents(utterances: Iterable[Utterance], window_s: int = None) -> List[Document]:
    """
    Graph source without captions: utterances grouped into fixed windows of
    the day, one Document per window that has speech. No model calls. An
    utterance running across a window edge belongs to every window it touches.
    """
    window_s = window_s or settings.EGOGRAPH_CONFIG['caption_window_s']
    if window_s < 1:
        raise InvalidEnumError(f"window must be a positive number of seconds, got {window_s}")

    windows: Dict[Tuple[int, int], List[Utterance]] = {}
    for u in sorted(utterances, key=lambda u: u.sort_key):
        start_s, end_s = code_to_seconds(u.when.start_t), code_to_seconds(u.when.end_t)
        for index in range(start_s // window_s, max(start_s, end_s - 1) // window_s + 1):
            windows.setdefault((u.when.day, index), []).append(u)

    docs = []
    for (day, index), members in sorted(windows.items()):
        start_t = seconds_to_code(index * window_s)
        end_t = seconds_to_code(min((index + 1) * window_s, LAST_SECOND))
        docs.append(Document(
            doc_id=f"{TRANSCRIPT_DOC_PREFIX}D{day}-{start_t:06d}",
            interval=TimeInterval.on_day(day, start_t, end_t),
            caption_text='\n'.join(_transcript_lines(members)),
            utterance_ids=tuple(u.utt_id for u in members),
        ))
    return docs


def fuse_captions(captions: Sequence[Caption], utterances: Iterable[Utterance], client: ModelClient,
                  max_workers: int = None) -> List[Document]:
    """One Document per caption window, carrying the utterances that overlap it."""
    captions = list(captions)
    _check_caption_order(captions)
    ordered = sorted(utterances, key=lambda u: u.sort_key)
    max_workers = max_workers or settings.EGOGRAPH_CONFIG['max_inflight_calls']

    members = [[u for u in ordered if belongs_to_window(u.when, c.interval)] for c in captions]

    def fuse_one(pair):
        caption, window_utterances = pair
        request = ClientRequest(CallKind.FUSE, {
            'doc_id': caption.doc_id,
            'day': caption.interval.day,
            'start_t': caption.interval.start_t,
            'end_t': caption.interval.end_t,
            'caption': caption.text,
            'utterances': [
                {'utt_id': u.utt_id, 'speaker': u.speaker or '', 'start_t': u.when.start_t,
                 'end_t': u.when.end_t, 'text': u.text}
                for u in window_utterances
            ],
        })
        try:
            output = call_with_retries(client, request).output
        except ClientError as e:
            logger.warning(f"Fusion failed for {caption.doc_id}, concatenating locally: {e}")
            return _fallback_fusion(caption, window_utterances)
        if isinstance(output, dict):
            output = output.get('text')
        return output if isinstance(output, str) and output.strip() else _fallback_fusion(caption, window_utterances)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        texts = list(executor.map(fuse_one, zip(captions, members)))

    return [
        Document(
            doc_id=caption.doc_id,
            interval=caption.interval,
            caption_text=text,
            utterance_ids=tuple(u.utt_id for u in window_utterances),
        )
        for caption, window_utterances, text in zip(captions, members, texts)
    ]


def _as_list(value: Any) -> List[Any]:
    return value if isinstance(value, list) else []


def _parse_entity(data: Any, id_key: str = 'id', type_key: str = 'type') -> EntityRef:
    if not isinstance(data, Mapping):
        raise ValueError(f"expected an entity object, got {data!r}")
    return EntityRef(data.get(id_key), data.get(type_key))


def _parse_endpoint(item: Mapping[str, Any], side: str) -> EntityRef:
    # Nested {"source": {"id", "type"}} or flat {"source_id", "source_type"}
    if isinstance(item.get(side), Mapping):
        return _parse_entity(item[side])
    return EntityRef(item.get(f'{side}_id', item.get(side)), item.get(f'{side}_type'))


def parse_extraction(doc_id: str, output: Any) -> ExtractionResult:
    """Keep only what fits the closed enums; everything else is logged and dropped."""
    if not isinstance(output, Mapping):
        logger.warning(f"Extractor returned no object for {doc_id}, ignoring output")
        return ExtractionResult()

    nodes: List[EntityRef] = []
    for item in _as_list(output.get('nodes')):
        try:
            node = _parse_entity(item)
        except (EngineError, ValueError) as e:
            logger.warning(f"{doc_id}: dropped node {item!r}: {e}")
            continue
        if node not in nodes:
            nodes.append(node)

    edges: List[RawEdge] = []
    for item in _as_list(output.get('relationships')):
        try:
            if not isinstance(item, Mapping):
                raise ValueError("relationship is not an object")
            edge = RawEdge(
                source=_parse_endpoint(item, 'source'),
                target=_parse_endpoint(item, 'target'),
                rel=RelationType.parse(item.get('type', item.get('rel_type', item.get('rel')))),
            )
        except (EngineError, ValueError) as e:
            logger.warning(f"{doc_id}: dropped relationship {item!r}: {e}")
            continue
        for endpoint in (edge.source, edge.target):
            if endpoint not in nodes:
                nodes.append(endpoint)
        if edge not in edges:
            edges.append(edge)

    return ExtractionResult(nodes=tuple(nodes), raw_edges=tuple(edges))


def extract_document_graph(doc: Document, client: ModelClient) -> ExtractionResult:
    request = ClientRequest(CallKind.EXTRACT, {
        'doc_id': doc.doc_id,
        'text': doc.caption_text,
        'allowed_nodes': [t.value for t in EntityType],
        'allowed_relationships': [r.value for r in RelationType],
    })
    try:
        response = call_with_retries(client, request)
    except ClientError as e:
        raise ExtractionError(doc.doc_id, str(e)) from e
    return parse_extraction(doc.doc_id, response.output)


def _contiguous_runs(positions: List[int]) -> List[List[int]]:
    runs: List[List[int]] = []
    for position in sorted(set(positions)):
        if runs and position == runs[-1][-1] + 1:
            runs[-1].append(position)
        else:
            runs.append([position])
    return runs


def _annotation_citations(output: Any, edge_count: int) -> Dict[int, List[str]]:
    citations: Dict[int, List[str]] = {}
    if not isinstance(output, Mapping):
        return citations
    for item in _as_list(output.get('annotations')):
        if not isinstance(item, Mapping):
            continue
        index = item.get('index', item.get('relationship_id'))
        if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < edge_count:
            continue
        cited = item.get('utt_ids', item.get('utterance_ids')) or []
        if isinstance(cited, str):
            cited = [cited]
        citations.setdefault(index, []).extend(str(c) for c in cited)
    return citations


def annotate_temporal(res: ExtractionResult, doc: Document, utterances: Iterable[Utterance],
                      client: ModelClient) -> List[RelationEdge]:
    """
    Ground each raw edge in time. Cited utterances that sit next to each other
    in the document become one edge spanning their hull; a raw edge with no
    usable citation gets the caption window and empty evidence.
    """
    if not res.raw_edges:
        return []

    by_id = {u.utt_id: u for u in utterances}
    doc_utterances = [by_id[i] for i in doc.utterance_ids if i in by_id]
    order = {u.utt_id: position for position, u in enumerate(doc_utterances)}

    request = ClientRequest(CallKind.ANNOTATE, {
        'doc_id': doc.doc_id,
        'caption': doc.caption_text,
        'relationships': [
            {'index': i, 'source': e.source.id, 'source_type': e.source.etype.value,
             'target': e.target.id, 'target_type': e.target.etype.value, 'rel': e.rel.value}
            for i, e in enumerate(res.raw_edges)
        ],
        'transcripts': [
            {'utt_id': u.utt_id, 'speaker': u.speaker or '', 'start_t': u.when.start_t,
             'end_t': u.when.end_t, 'text': u.text}
            for u in doc_utterances
        ],
    })
    try:
        output = call_with_retries(client, request).output
    except ClientError as e:
        logger.warning(f"Temporal annotation failed for {doc.doc_id}, using caption windows: {e}")
        output = None

    citations = _annotation_citations(output, len(res.raw_edges))
    edges: List[RelationEdge] = []
    for index, raw in enumerate(res.raw_edges):
        positions = []
        for utt_id in citations.get(index, []):
            if utt_id in order:
                positions.append(order[utt_id])
            else:
                logger.warning(f"{doc.doc_id}: ignoring citation of unknown utterance {utt_id}")

        if not positions:
            edges.append(RelationEdge(raw.source, raw.target, raw.rel, doc.interval, ''))
            continue

        for run in _contiguous_runs(positions):
            cited = [doc_utterances[p] for p in run]
            edges.append(RelationEdge(
                source=raw.source,
                target=raw.target,
                rel=raw.rel,
                interval=hull([u.when for u in cited]),
                evidence=' '.join(u.text.strip() for u in cited),
            ))
    return edges


def _process_document(doc: Document, utterance_lookup: Mapping[str, Utterance],
                      client: ModelClient) -> List[RelationEdge]:
    result = extract_document_graph(doc, client)
    utterances = [utterance_lookup[i] for i in doc.utterance_ids if i in utterance_lookup]
    return annotate_temporal(result, doc, utterances, client)


def build_graph(docs: Sequence[Document], client: ModelClient, store: GraphStore = None,
                utterance_lookup: Optional[Mapping[str, Utterance]] = None,
                max_workers: int = None) -> BuildReport:
    """
    Extract and annotate every document with bounded parallelism, then insert
    through the store's single writer. A failing document is reported and
    skipped. Re-running on the same documents inserts nothing new.
    """
    store = store or GraphStore()
    max_workers = max_workers or settings.EGOGRAPH_CONFIG['max_inflight_calls']
    if utterance_lookup is None:
        from apps.transcripts.services import TranscriptSearch
        utterance_lookup = {u.utt_id: u for u in TranscriptSearch().all_utterances()}

    def run(doc):
        try:
            return doc.doc_id, _process_document(doc, utterance_lookup, client), None
        except ExtractionError as e:
            logger.warning(str(e))
            return doc.doc_id, [], str(e)

    report = BuildReport(stats=GraphStats(), documents=len(docs))
    edges: List[RelationEdge] = []
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        for doc_id, doc_edges, error in executor.map(run, docs):
            if error is not None:
                report.failures[doc_id] = error
            edges.extend(doc_edges)

    if edges:
        insert_report = store.insert_edges(edges)
        report.inserted = insert_report.inserted
        report.rejected = len(insert_report.rejected)
    report.stats = store.stats()
    logger.info(
        f"Graph build over {len(docs)} documents: {report.inserted} new edges, "
        f"{len(report.failures)} failed documents"
    )
    return report


def batch_documents(docs: Sequence[Document], mode: str = None) -> Dict[str, List[Document]]:
    """'hour' gives one batch per recorded hour of each day, 'video' one batch overall."""
    mode = mode or settings.EGOGRAPH_CONFIG['extraction_batching']
    if mode not in BATCHING_MODES:
        raise InvalidEnumError(f"unknown batching mode {mode!r}")
    batches: Dict[str, List[Document]] = {}
    for doc in sorted(docs, key=lambda d: (d.interval.start, d.doc_id)):
        key = f"D{doc.day}-{doc.interval.start_t // 10000:02d}" if mode == 'hour' else 'all'
        batches.setdefault(key, []).append(doc)
    return batches


def add_captions(captions: Iterable[Caption]) -> int:
    """
    Store caption windows. Identical re-ingests are skipped; a known doc_id
    with different content, or a window overlapping a stored one, is an error.
    """
    captions = list(captions)
    with transaction.atomic():
        stored = {
            record.doc_id: Caption.from_record(record)
            for record in CaptionRecord.objects.select_for_update().all()
        }
        new: Dict[str, Caption] = {}
        for caption in captions:
            known = stored.get(caption.doc_id) or new.get(caption.doc_id)
            if known is not None:
                if known != caption:
                    raise CaptionOrderError(f"duplicate caption id {caption.doc_id}")
                continue
            new[caption.doc_id] = caption

        merged = sorted([*stored.values(), *new.values()], key=lambda c: (c.interval.start, c.doc_id))
        _check_caption_order(merged)
        CaptionRecord.objects.bulk_create([
            CaptionRecord(doc_id=c.doc_id, day=c.interval.day, start_t=c.interval.start_t,
                          end_t=c.interval.end_t, text=c.text)
            for c in new.values()
        ])
    logger.info(f"Added {len(new)} captions ({len(captions) - len(new)} already stored)")
    return len(new)


def save_documents(docs: Iterable[Document]) -> int:
    saved = 0
    with transaction.atomic():
        for doc in docs:
            DocumentRecord.objects.update_or_create(
                doc_id=doc.doc_id,
                defaults={
                    'day': doc.day,
                    'start_t': doc.interval.start_t,
                    'end_t': doc.interval.end_t,
                    'caption_text': doc.caption_text,
                    'utterance_ids': list(doc.utterance_ids),
                },
            )
            saved += 1
    return saved


def load_documents(doc_ids: Optional[Iterable[str]] = None) -> List[Document]:
    records = DocumentRecord.objects.all()
    if doc_ids is not None:
        records = records.filter(doc_id__in=list(doc_ids))
    return [Document.from_record(r) for r in records.order_by('day', 'start_t', 'doc_id')]


def prepare_documents(client: ModelClient, utterances: Iterable[Utterance],
                      source: str = None) -> List[Document]:
    """
    Documents for the chosen graph source. 'fused' fuses every ingested
    caption that has no document yet and returns all caption documents;
    'transcript' rebuilds the transcript windows and returns only those.
    """
    source = source or settings.EGOGRAPH_CONFIG['extraction_source']
    if source not in EXTRACTION_SOURCES:
        raise InvalidEnumError(f"unknown extraction source {source!r}")

    if source == 'transcript':
        docs = transcript_documents(utterances)
        save_documents(docs)
        logger.info(f"Grouped transcripts into {len(docs)} windows")
        return load_documents(doc.doc_id for doc in docs)

    fused = set(DocumentRecord.objects.values_list('doc_id', flat=True))
    pending = [
        Caption.from_record(record)
        for record in CaptionRecord.objects.order_by('day', 'start_t', 'doc_id')
        if record.doc_id not in fused
    ]
    if pending:
        save_documents(fuse_captions(pending, utterances, client))
        logger.info(f"Fused {len(pending)} caption windows into documents")
    return [doc for doc in load_documents() if not doc.doc_id.startswith(TRANSCRIPT_DOC_PREFIX)]
