"""Builders shared by the test suites."""
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import numpy as np

from apps.core.types import DayTime, EntityRef, RelationType, TimeInterval
from apps.evaluation.benchmark import Category, MCQItem
from apps.graph.store import RelationEdge
from apps.llm.scripted import ScriptedModelClient
from apps.transcripts.services import Utterance
from apps.visual.services import FrameRecord


def interval(day: int, start_t: int, end_t: int) -> TimeInterval:
    return TimeInterval.on_day(day, start_t, end_t)


def make_edge(source: str, source_type: str, rel: str, target: str, target_type: str,
              day: int = 1, start_t: int = 100000, end_t: int = 100010, evidence: str = ''):
    return RelationEdge(
        source=EntityRef(source, source_type),
        target=EntityRef(target, target_type),
        rel=RelationType.parse(rel),
        interval=interval(day, start_t, end_t),
        evidence=evidence,
    )


def make_utterance(utt_id: str, day: int, start_t: int, end_t: int, text: str, speaker: Optional[str] = None):
    return Utterance(utt_id=utt_id, when=interval(day, start_t, end_t), text=text, speaker=speaker)


def unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    vector = rng.standard_normal(dim)
    return (vector / np.linalg.norm(vector)).astype(np.float32)


def make_frame(frame_id: str, day: int, t: int, embedding, location: Optional[str] = None):
    return FrameRecord(frame_id=frame_id, when=DayTime(day, t), embedding=np.asarray(embedding), location=location)


def make_item(qid: str = 'q1', gold: int = 0, query_time: str = 'D3 18:00:00', category: Optional[str] = None,
              targets: Iterable[str] = (), question: str = 'What did Jake use?'):
    return MCQItem(
        qid=qid,
        question=question,
        candidates=('phone', 'cup', 'laptop', 'guitar'),
        gold=gold,
        query_time=DayTime.parse(query_time),
        category=Category.parse(category),
        target_times=tuple(DayTime.parse(t) for t in targets),
    )


def write_jsonl(path: Path, rows: Iterable[Any]) -> Path:
    path = Path(path)
    path.write_text(''.join(
        (row if isinstance(row, str) else json.dumps(row)) + '\n' for row in rows
    ), encoding='utf-8')
    return path


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2), encoding='utf-8')
    return path


def scripted(*entries: Dict[str, Any], strict: bool = False):
    return ScriptedModelClient(list(entries), strict=strict)
