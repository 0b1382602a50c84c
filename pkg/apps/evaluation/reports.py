from statistics import mean
from typing import Any, Dict, Mapping, Optional, Sequence

from apps.core.exceptions import InvalidIntentError
from apps.core.types import ToolName
from apps.evaluation.benchmark import MCQItem
from apps.evaluation.metrics import OVERALL, accuracy, recall_by_tool


def report(traces: Sequence[Any], items: Optional[Sequence[MCQItem]] = None,
           windows: Sequence[int] = (), day_length_s: int = 86400) -> Dict[str, Any]:
    """Runtime, token and citation figures over a set of traces, plus accuracy and recall when items are given."""
    if not traces:
        raise InvalidIntentError("report needs at least one trace")

    phases = sorted({phase for trace in traces for phase in trace.timings})
    totals = [trace.ledger.totals() for trace in traces]
    token_keys = ('prompt_tokens', 'completion_tokens', 'image_count', 'image_tokens', 'total_tokens')

    tools = {}
    for tool in ToolName:
        selected = [len(trace.selected_timestamps(tool)) for trace in traces]
        retrieved = [len(trace.retrieved_timestamps(tool)) for trace in traces]
        tools[tool.value] = {
            'subtasks': sum(len(trace.notes_for(tool)) for trace in traces),
            'input_ts': sum(retrieved),
            'selected_ts': sum(selected),
            'contributed': sum(selected) > 0,
        }

    result: Dict[str, Any] = {
        'items': len(traces),
        'runtime_s': {
            'phases': {phase: mean(trace.timings.get(phase, 0.0) for trace in traces) for phase in phases},
            'total': mean(sum(trace.timings.values()) for trace in traces),
        },
        'tokens': {
            'totals': {key: sum(t[key] for t in totals) for key in token_keys},
            'means': {key: mean(t[key] for t in totals) for key in token_keys},
            'estimated': any(t['estimated'] for t in totals),
        },
        'tools': tools,
        'fallbacks': sum(trace.fallback for trace in traces),
    }

    if items is not None:
        by_qid = {trace.qid: trace for trace in traces}
        result['accuracy'] = accuracy(by_qid, items).to_dict()
        if windows:
            recall = recall_by_tool(by_qid, items, windows, day_length_s)
            result['recall'] = {name: {str(w): v for w, v in values.items()} for name, values in recall.items()}
    return result


def _row(cells, widths):
    return '  '.join(str(cell).ljust(width) for cell, width in zip(cells, widths)).rstrip()


def _table(header, rows):
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = [_row(header, widths), _row(['-' * w for w in widths], widths)]
    lines.extend(_row(r, widths) for r in rows)
    return lines


def render_table(data: Mapping[str, Any]) -> str:
    lines = []
    if 'accuracy' in data:
        acc = data['accuracy']
        header = ['Overall', *acc['per_category'].keys()]
        lines.append(f"MCQ accuracy (%) over {acc['total']} items")
        lines.extend(_table(header, [[acc['overall'], *acc['per_category'].values()]]))
        lines.append('')

    if 'recall' in data:
        windows = list(data['recall'][OVERALL].keys())
        lines.append('Recall@W')
        lines.extend(_table(
            ['Tool', *[f"{w}s" for w in windows]],
            [[name, *[f"{values[w]:.3f}" for w in windows]] for name, values in data['recall'].items()],
        ))
        lines.append('')

    lines.append('Citations per tool')
    lines.extend(_table(
        ['Tool', 'Sub-tasks', 'Input #ts', 'Selected #ts', 'Contributed'],
        [[name, t['subtasks'], t['input_ts'], t['selected_ts'], 'yes' if t['contributed'] else 'no']
         for name, t in data['tools'].items()],
    ))
    lines.append('')

    tokens = data['tokens']
    mark = '*' if tokens['estimated'] else ''
    lines.append(f"Tokens: {tokens['totals']['total_tokens']}{mark} total, "
                 f"{tokens['means']['total_tokens']:.1f}{mark} per item "
                 f"({tokens['totals']['image_count']} images)")
    runtime = data['runtime_s']
    lines.append(f"Runtime: {runtime['total']:.2f}s per item " + ' '.join(
        f"{phase}={seconds:.2f}" for phase, seconds in runtime['phases'].items()
    ))
    return '\n'.join(lines)
