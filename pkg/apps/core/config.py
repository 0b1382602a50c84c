from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

from django.conf import settings

from apps.core.exceptions import InvalidEnumError
from apps.core.types import ToolName

TSEARCH_VARIANTS = ('bm25', 'llm')
EXTRACTION_SOURCES = ('fused', 'transcript')
MAX_SUBTASKS = 5
IMAGE_TOKEN_PRESETS = (85, 258)
ALL_TOOLS = (ToolName.ENTITY_GRAPH, ToolName.VISUAL, ToolName.AUDIO)


def parse_tools(value: Optional[Any]) -> Tuple[ToolName, ...]:
    """'eg,visual,audio' (or EG/F/T) into tools in canonical order."""
    if not value:
        return ALL_TOOLS
    items = value.split(',') if isinstance(value, str) else list(value)
    chosen = {ToolName.parse(item) for item in items if str(item).strip()}
    if not chosen:
        raise InvalidEnumError("at least one tool must be enabled")
    return tuple(tool for tool in ALL_TOOLS if tool in chosen)


def parse_windows(value: Optional[Any]) -> Tuple[int, ...]:
    if value is None or value == '':
        return tuple(settings.EGOGRAPH_CONFIG['recall_windows'])
    items = value.split(',') if isinstance(value, str) else list(value)
    try:
        windows = tuple(int(str(item).strip()) for item in items if str(item).strip())
    except ValueError:
        raise InvalidEnumError(f"recall windows must be integers, got {value!r}") from None
    if not windows or any(w <= 0 for w in windows):
        raise InvalidEnumError(f"recall windows must be positive, got {value!r}")
    return windows


@dataclass(frozen=True)
class RunConfig:
    store_dir: Path
    client_mode: str = 'scripted'
    fixtures: str = ''
    cassette: str = ''
    strict: bool = False
    tools: Tuple[ToolName, ...] = ALL_TOOLS
    tsearch: str = 'llm'
    extraction_source: str = 'fused'
    k_total: int = 50
    recall_windows: Tuple[int, ...] = (10, 30, 60, 120, 600, 3600)
    jobs: int = 1
    image_token_rate: int = 85
    day_length_s: int = 86400
    ladder_max_rows: int = 50
    max_subtasks: int = MAX_SUBTASKS
    bm25_k: int = 10
    oracle_half_window_s: int = 25

    def __post_init__(self):
        if self.tsearch not in TSEARCH_VARIANTS:
            raise InvalidEnumError(f"tsearch must be one of {', '.join(TSEARCH_VARIANTS)}, got {self.tsearch!r}")
        if self.extraction_source not in EXTRACTION_SOURCES:
            raise InvalidEnumError(
                f"extraction_source must be one of {', '.join(EXTRACTION_SOURCES)}, got {self.extraction_source!r}"
            )
        for name in ('k_total', 'jobs', 'image_token_rate', 'day_length_s', 'ladder_max_rows',
                     'max_subtasks', 'bm25_k'):
            if int(getattr(self, name)) < 1:
                raise InvalidEnumError(f"{name} must be a positive integer")
        if self.max_subtasks > MAX_SUBTASKS:
            raise InvalidEnumError(f"max_subtasks is at most {MAX_SUBTASKS}, got {self.max_subtasks}")

    @classmethod
    def from_settings(cls, **overrides) -> 'RunConfig':
        engine = settings.EGOGRAPH_CONFIG
        client = settings.MODEL_CLIENT_CONFIG
        values: Dict[str, Any] = {
            'store_dir': Path(settings.STORE_DIR),
            'client_mode': client['mode'],
            'fixtures': client['fixtures_dir'],
            'cassette': client['cassette'],
            'strict': client['strict'],
            'tsearch': engine['tsearch'],
            'extraction_source': engine['extraction_source'],
            'k_total': engine['k_total'],
            'recall_windows': tuple(engine['recall_windows']),
            'image_token_rate': engine['image_token_rate'],
            'day_length_s': engine['day_length_s'],
            'ladder_max_rows': engine['ladder_max_rows'],
            'max_subtasks': engine['max_subtasks'],
            'bm25_k': engine['bm25_k'],
            'oracle_half_window_s': engine['oracle_half_window_s'],
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def with_tools(self, tools: Iterable[Any]) -> 'RunConfig':
        return replace(self, tools=parse_tools(list(tools)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'client_mode': self.client_mode,
            'tools': [t.value for t in self.tools],
            'tsearch': self.tsearch,
            'extraction_source': self.extraction_source,
            'k_total': self.k_total,
            'recall_windows': list(self.recall_windows),
            'jobs': self.jobs,
            'image_token_rate': self.image_token_rate,
        }
