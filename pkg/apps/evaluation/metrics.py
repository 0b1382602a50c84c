import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from apps.core.exceptions import InvalidEnumError
from apps.core.timecode import SECONDS_PER_DAY, seconds_to_code
from apps.core.types import DayTime, ToolName
from apps.evaluation.benchmark import Category, MCQItem

logger = logging.getLogger(__name__)

OVERALL = 'overall'


@dataclass(frozen=True)
class AccuracyReport:
    correct: int
    total: int
    overall: float
    per_category: Dict[str, float]
    category_counts: Dict[str, Tuple[int, int]]

    def to_dict(self):
        return {
            'correct': self.correct,
            'total': self.total,
            'overall': self.overall,
            'per_category': dict(self.per_category),
            'category_counts': {k: list(v) for k, v in self.category_counts.items()},
        }


def _percent(correct: int, total: int) -> float:
    return round(100.0 * correct / total, 1) if total else 0.0


def accuracy(traces: Mapping[str, object], items: Sequence[MCQItem]) -> AccuracyReport:
    """
    traces maps qid to anything with a .choice. Items without a trace count
    as wrong. Categories appear in enum order; uncategorised items only
    count toward the overall figure.
    """
    correct = 0
    counts: Dict[Category, List[int]] = {}
    for item in items:
        trace = traces.get(item.qid)
        if trace is None:
            logger.warning(f"No trace for {item.qid}, counting it as incorrect")
        hit = trace is not None and trace.choice == item.gold
        correct += hit
        if item.category is not None:
            bucket = counts.setdefault(item.category, [0, 0])
            bucket[0] += hit
            bucket[1] += 1

    ordered = [c for c in Category if c in counts]
    return AccuracyReport(
        correct=correct,
        total=len(items),
        overall=_percent(correct, len(items)),
        per_category={c.value: _percent(*counts[c]) for c in ordered},
        category_counts={c.value: tuple(counts[c]) for c in ordered},
    )


@dataclass(frozen=True)
class RecallConfig:
    window_seconds: int
    day_length_s: int = SECONDS_PER_DAY

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise InvalidEnumError(f"recall window must be positive, got {self.window_seconds}")
        if self.day_length_s <= 0:
            raise InvalidEnumError(f"day_length_s must be positive, got {self.day_length_s}")


def is_hit(selected: Sequence[DayTime], target: DayTime, cfg: RecallConfig) -> bool:
    """A selection hits when it is on the target's day within W/2 seconds of it."""
    half = cfg.window_seconds / 2
    return any(
        s.day == target.day and abs(s.seconds_of_day - target.seconds_of_day) <= half
        for s in selected
    )


def recall_at_w(selected: Sequence[DayTime], targets: Sequence[DayTime], cfg: RecallConfig) -> Optional[float]:
    """Fraction of targets hit; None when there are no targets to score."""
    if not targets:
        return None
    return sum(is_hit(selected, t, cfg) for t in targets) / len(targets)


def corpus_recall(pairs: Sequence[Tuple[Sequence[DayTime], Sequence[DayTime]]], cfg: RecallConfig) -> float:
    """Mean per-item recall over (selected, targets) pairs; items without targets are skipped."""
    values = []
    for position, (selected, targets) in enumerate(pairs):
        value = recall_at_w(selected, targets, cfg)
        if value is None:
            logger.warning(f"Item {position} has no target times, excluded from recall")
            continue
        values.append(value)
    return sum(values) / len(values) if values else 0.0


def recall_by_tool(traces: Mapping[str, object], items: Sequence[MCQItem], windows: Sequence[int],
                   day_length_s: int = SECONDS_PER_DAY) -> Dict[str, Dict[int, float]]:
    """
    Recall per tool and over all of working memory, for each window.
    Selections are the timestamps each tool's notes cited.
    """
    scored = [item for item in items if item.target_times]
    if len(scored) < len(items):
        logger.warning(f"{len(items) - len(scored)} items have no target times, excluded from recall")

    slices: List[Tuple[str, Optional[ToolName]]] = [(t.value, t) for t in ToolName] + [(OVERALL, None)]
    result: Dict[str, Dict[int, float]] = {}
    for name, tool in slices:
        pairs = []
        for item in scored:
            trace = traces.get(item.qid)
            selected = trace.selected_timestamps(tool) if trace is not None else []
            pairs.append((selected, item.target_times))
        result[name] = {
            w: round(corpus_recall(pairs, RecallConfig(w, day_length_s)), 4) for w in windows
        }
    return result


@dataclass(frozen=True)
class FrameWindow:
    day: int
    start_t: int
    end_t: int


@dataclass(frozen=True)
class OracleContext:
    frame_windows: Tuple[FrameWindow, ...]
    transcript_days: Tuple[int, ...]

    def to_dict(self):
        return {
            'frame_windows': [[w.day, w.start_t, w.end_t] for w in self.frame_windows],
            'transcript_days': list(self.transcript_days),
        }


def oracle_context(item: MCQItem, half_window_s: int = 25) -> OracleContext:
    """
    A frame window of +/- half_window_s around every target (clipped to the
    day, overlapping windows merged) and the full transcripts of every
    target day.
    """
    spans: Dict[int, List[List[int]]] = {}
    for target in sorted(item.target_times):
        centre = target.seconds_of_day
        lo, hi = max(0, centre - half_window_s), min(SECONDS_PER_DAY - 1, centre + half_window_s)
        day_spans = spans.setdefault(target.day, [])
        if day_spans and lo <= day_spans[-1][1]:
            day_spans[-1][1] = max(day_spans[-1][1], hi)
        else:
            day_spans.append([lo, hi])

    windows = tuple(
        FrameWindow(day, seconds_to_code(lo), seconds_to_code(hi))
        for day in sorted(spans) for lo, hi in spans[day]
    )
    return OracleContext(frame_windows=windows, transcript_days=tuple(sorted(spans)))
