"""
The question-answering loop:

    plan -> (route -> retrieve -> analyze -> remember -> grade)* -> answer

Sub-tasks run strictly in order because each analysis sees the working
memory built by the ones before it. A failing tool becomes an error note and
the loop moves on.
"""
import logging
import re
import time
from contextlib import contextmanager
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from apps.agents.state import LETTERS, AgentState, AnswerTrace, LedgerClient, SubTask, TokenLedger
from apps.core.config import TSEARCH_VARIANTS, RunConfig
from apps.core.exceptions import ClientError, EngineError, InvalidIntentError, PlanningError
from apps.core.types import AnalysisNote, DayTime, ToolName, find_timestamps
from apps.graph.store import GraphQueryIntent, GraphStore, intent_from_predicate
from apps.llm.client import CallKind, ClientRequest, ModelClient, call_with_retries
from apps.transcripts.services import TranscriptSearch, Utterance
from apps.visual.services import FrameFilter, VisualIndex, embed_text, sample_uniform

logger = logging.getLogger(__name__)

COMPLETE = 'complete'
INCOMPLETE = 'incomplete'

MAX_VISUAL_QUERIES = 3
DAY_START, DAY_END = 0, 235959

_VERDICT_WORD_RE = re.compile(r"[a-z']+")
# Any of these anywhere in a grade reply keeps the loop going
_HEDGES = frozenset({'not', 'no', 'incomplete', "isn't", 'yet', 'insufficient', 'partially', 'partly',
                     'maybe', 'almost', 'unsure'})
_LETTER_RE = re.compile(r'(?<![A-Za-z])([A-Da-d])(?![A-Za-z])')


def _frozen_clock() -> float:
    return 0.0


def route(subtask: SubTask) -> str:
    """Handler id for a sub-task: 'eg', 'visual' or 'audio'."""
    return ToolName.parse(subtask.tool).value


def parse_choice(output: Any) -> Optional[int]:
    """First standalone A-D, either case."""
    if isinstance(output, Mapping):
        output = output.get('answer', output.get('choice'))
    if isinstance(output, int) and not isinstance(output, bool):
        return output if 0 <= output < 4 else None
    match = _LETTER_RE.search(str(output or ''))
    return LETTERS.index(match.group(1).upper()) if match else None


def parse_verdict(output: Any) -> str:
    """'complete' only when the reply opens with that word and hedges nowhere."""
    if isinstance(output, Mapping):
        output = output.get('status', output.get('verdict'))
    words = _VERDICT_WORD_RE.findall(str(output or '').strip().lower())
    if words and words[0] == COMPLETE and not _HEDGES.intersection(words):
        return COMPLETE
    return INCOMPLETE


def _parse_moment(value: Any) -> DayTime:
    if isinstance(value, DayTime):
        return value
    if isinstance(value, Mapping):
        return DayTime.from_dict(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return DayTime(int(value[0]), int(value[1]))
    return DayTime.parse(str(value))


def lower_graph_args(args: Mapping[str, Any], query_time: DayTime) -> GraphQueryIntent:
    """Planner arguments for the graph tool; a WHERE predicate is accepted as 'sql'."""
    predicate = args.get('sql') or args.get('predicate')
    if predicate:
        return intent_from_predicate(str(predicate), query_time)
    return GraphQueryIntent.from_args(args, query_time)


def lower_visual_args(args: Mapping[str, Any], query_time: DayTime) -> Tuple[List[str], List[FrameFilter]]:
    queries = args.get('queries') or []
    if isinstance(queries, str):
        queries = [queries]
    if not isinstance(queries, list) or not all(isinstance(q, str) for q in queries):
        raise InvalidIntentError("visual queries must be a list of strings")
    queries = list(dict.fromkeys(q.strip() for q in queries if q.strip()))[:MAX_VISUAL_QUERIES]

    windows = []
    for window in args.get('windows') or []:
        if not isinstance(window, Mapping):
            raise InvalidIntentError(f"visual window must be an object, got {window!r}")
        day = window.get('day')
        if day is not None and int(day) > query_time.day:
            continue
        start_t, end_t = window.get('start_t'), window.get('end_t')
        windows.append(FrameFilter(
            day=int(day) if day is not None else None,
            time_range=(
                (int(start_t if start_t is not None else DAY_START), int(end_t if end_t is not None else DAY_END))
                if start_t is not None or end_t is not None else None
            ),
            location=window.get('location'),
            before=query_time,
        ))
    return queries, windows


def lower_audio_args(args: Mapping[str, Any], query_time: DayTime,
                     default_variant: str) -> Tuple[str, Optional[Tuple[DayTime, DayTime]], List[int]]:
    variant = str(args.get('variant') or default_variant).lower()
    if variant not in TSEARCH_VARIANTS:
        raise InvalidIntentError(f"unknown transcript search variant {variant!r}")

    time_range = None
    if args.get('range'):
        raw = args['range']
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise InvalidIntentError("transcript range is [start, end]")
        start, end = _parse_moment(raw[0]), _parse_moment(raw[1])
        if start > end:
            raise InvalidIntentError(f"transcript range start after end: {start} > {end}")
        time_range = (start, min(end, query_time))

    days = args.get('days') or []
    if isinstance(days, int):
        days = [days]
    days = sorted({int(d) for d in days if int(d) <= query_time.day})
    return variant, time_range, days


def parse_analysis(output: Any, default_day: int) -> Tuple[str, List[DayTime], List[int]]:
    """Analyzer output as (summary, cited timestamps, cited edge ids); prose degrades gracefully."""
    if isinstance(output, Mapping):
        summary = str(output.get('summary') or output.get('analysis') or '')
        raw_stamps = output.get('cited_timestamps') or output.get('timestamps') or []
        raw_edges = output.get('cited_edges') or []
    else:
        summary, raw_stamps, raw_edges = str(output or ''), [], []
    if not isinstance(raw_stamps, list):
        raw_stamps = [raw_stamps]
    if not isinstance(raw_edges, list):
        raw_edges = [raw_edges]

    # Explicit citations win; prose is only mined when there are none
    stamps: List[DayTime] = []
    for text in [str(s) for s in raw_stamps] or [summary]:
        for moment in find_timestamps(text, default_day=default_day):
            if moment not in stamps:
                stamps.append(moment)

    edges: List[int] = []
    for value in raw_edges:
        try:
            edge_id = int(value)
        except (TypeError, ValueError):
            continue
        if edge_id not in edges:
            edges.append(edge_id)
    return summary, stamps, edges


def _utterance_item(u: Utterance) -> Dict[str, Any]:
    return {'ref': u.utt_id, 'when': u.when.start.format(), 'speaker': u.speaker or '', 'text': u.text}


class AgentRuntime:
    """
    Answers one multiple-choice question at a time over shared, read-only
    stores. One runtime may serve many concurrent runs.
    """

    def __init__(self, client: ModelClient, config: RunConfig = None, graph: GraphStore = None,
                 visual: VisualIndex = None, transcripts: TranscriptSearch = None,
                 clock: Callable[[], float] = None):
        self.client = client
        self.config = config or RunConfig.from_settings()
        self.graph = graph or GraphStore()
        self.visual = visual or VisualIndex()
        self.transcripts = transcripts or TranscriptSearch()
        if clock is None:
            # Offline clients replay fixed responses; a frozen clock keeps their traces comparable
            clock = time.perf_counter if self.config.client_mode in ('live', 'record') else _frozen_clock
        self.clock = clock

    def warm_up(self) -> None:
        """Build the in-memory snapshots before concurrent runs share them."""
        len(self.visual)
        len(self.transcripts)

    @contextmanager
    def _timed(self, timings: Dict[str, float], phase: str):
        start = self.clock()
        try:
            yield
        finally:
            timings[phase] = timings.get(phase, 0.0) + (self.clock() - start)

    def new_state(self, question: str, candidates: Sequence[str], query_time: DayTime) -> AgentState:
        if len(candidates) != 4:
            raise PlanningError(f"expected 4 candidates, got {len(candidates)}")
        return AgentState(
            question=question,
            candidates=tuple(candidates),
            query_time=query_time,
            ledger=TokenLedger(self.config.image_token_rate),
        )

    def _options(self, state: AgentState) -> List[str]:
        return [f"{LETTERS[i]}. {text}" for i, text in enumerate(state.candidates)]

    # Planning

    def plan(self, state: AgentState, client: ModelClient) -> List[SubTask]:
        """
        Ask the planner for up to max_subtasks steps. Steps naming an unknown
        or disabled tool, or carrying arguments that cannot be lowered, are
        dropped; the survivors are renumbered from 1.
        """
        enabled = set(self.config.tools)
        request = ClientRequest(CallKind.PLAN, {
            'question': state.question,
            'candidates': self._options(state),
            'query_time': state.query_time.format(),
            'tools': [t.value for t in self.config.tools],
            'max_steps': self.config.max_subtasks,
        })
        try:
            output = call_with_retries(client, request).output
        except ClientError as e:
            raise PlanningError(f"planner call failed: {e}") from e

        raw_steps = output.get('steps') if isinstance(output, Mapping) else output
        if not isinstance(raw_steps, list):
            raise PlanningError("planner returned no step list")

        steps: List[SubTask] = []
        for position, raw in enumerate(raw_steps, start=1):
            try:
                step = self._parse_step(raw, state.query_time)
            except (EngineError, ValueError, TypeError, KeyError) as e:
                logger.warning(f"Dropping planned step {position}: {e}")
                state.log('planning', 'step_dropped', step=position, reason=str(e))
                continue
            if step.tool not in enabled:
                state.log('planning', 'step_dropped', step=position, reason=f"tool {step.tool.value} disabled")
                continue
            steps.append(step)

        if len(steps) > self.config.max_subtasks:
            logger.warning(f"Planner returned {len(steps)} usable steps, keeping {self.config.max_subtasks}")
            state.log('planning', 'plan_truncated', returned=len(steps), kept=self.config.max_subtasks)
            steps = steps[:self.config.max_subtasks]
        if not steps:
            raise PlanningError("planner produced no usable step")

        return [SubTask(i, s.description, s.tool, s.args) for i, s in enumerate(steps, start=1)]

    def _parse_step(self, raw: Any, query_time: DayTime) -> SubTask:
        if not isinstance(raw, Mapping):
            raise InvalidIntentError(f"step is not an object: {raw!r}")
        tool = ToolName.parse(raw.get('tool'))
        description = str(raw.get('description') or raw.get('task') or '').strip()
        if not description:
            raise InvalidIntentError("step has no description")
        args = raw.get('args') or {}
        if not isinstance(args, Mapping):
            raise InvalidIntentError("step args must be an object")
        args = dict(args)

        # Lower once here so bad arguments drop the step instead of failing later
        if tool == ToolName.ENTITY_GRAPH:
            lower_graph_args(args, query_time)
        elif tool == ToolName.VISUAL:
            lower_visual_args(args, query_time)
        else:
            lower_audio_args(args, query_time, self.config.tsearch)
        return SubTask(0, description, tool, args)

    # Execution

    def execute_subtask(self, state: AgentState, client: ModelClient,
                        timings: Optional[Dict[str, float]] = None) -> AgentState:
        timings = {} if timings is None else timings
        subtask = state.plan[state.current]
        handler = route(subtask)
        state.log('execute', 'subtask_started', index=subtask.index, tool=handler)

        try:
            if handler == ToolName.ENTITY_GRAPH.value:
                note = self._run_graph(state, subtask, client, timings)
            elif handler == ToolName.VISUAL.value:
                note = self._run_visual(state, subtask, client, timings)
            else:
                note = self._run_audio(state, subtask, client, timings)
        except Exception as e:
            logger.error(f"Sub-task {subtask.index} ({handler}) failed: {str(e)}")
            state.log('execute', 'tool_error', index=subtask.index, tool=handler, error=str(e))
            note = AnalysisNote(
                subtask_index=subtask.index,
                tool=subtask.tool,
                summary='',
                error=f"{type(e).__name__}: {e}",
            )

        state.remember(note)
        state.current += 1
        state.log('execute', 'subtask_finished', index=subtask.index, tool=handler,
                  retrieved=note.retrieved_count, cited=len(note.cited_timestamps))
        return state

    def _analyze(self, state: AgentState, subtask: SubTask, client: ModelClient, items: List[Dict[str, Any]],
                 images: Sequence[str] = ()) -> Tuple[str, List[DayTime], List[int]]:
        request = ClientRequest(CallKind.ANALYZE, {
            'task': subtask.description,
            'tool': subtask.tool.value,
            'question': state.question,
            'items': items,
            'memory': state.memory_text(),
            'images': list(images),
        })
        output = call_with_retries(client, request).output
        summary, stamps, edges = parse_analysis(output, state.query_time.day)
        stamps = [t for t in stamps if t <= state.query_time]
        return summary, stamps, edges

    def _empty_note(self, state: AgentState, subtask: SubTask, summary: str) -> AnalysisNote:
        state.log('execute', 'nothing_retrieved', index=subtask.index, tool=subtask.tool.value)
        return AnalysisNote(subtask_index=subtask.index, tool=subtask.tool, summary=summary)

    def _run_graph(self, state, subtask, client, timings) -> AnalysisNote:
        with self._timed(timings, 'eg_retrieval'):
            intent = lower_graph_args(subtask.args, state.query_time)
            result = self.graph.run_ladder(intent, max_rows=self.config.ladder_max_rows)
        state.log('execute', 'ladder', index=subtask.index, stage_used=result.stage_used.value,
                  queries_issued=list(result.queries_issued), rows=len(result.rows))
        if not result.rows:
            return self._empty_note(state, subtask, 'No matching relationships in the entity graph.')

        items = [
            {'ref': e.row_id, 'when': e.interval.start.format(), 'text': e.describe()}
            for e in result.rows
        ]
        with self._timed(timings, 'eg_analysis'):
            summary, stamps, edges = self._analyze(state, subtask, client, items)
        known = self.graph.existing_ids(edges)
        dropped = [e for e in edges if e not in known]
        if dropped:
            state.log('execute', 'unknown_edges_dropped', index=subtask.index, edges=dropped)
        return AnalysisNote(
            subtask_index=subtask.index,
            tool=subtask.tool,
            summary=summary,
            cited_timestamps=tuple(stamps),
            cited_edges=tuple(e for e in edges if e in known),
            retrieved_count=len(result.rows),
            retrieved_timestamps=tuple(e.interval.start for e in result.rows),
        )

    def rewrite_visual(self, state: AgentState, subtask: SubTask,
                       client: ModelClient) -> Tuple[List[str], List[FrameFilter]]:
        """Turn a visual step without query slots into 1-3 text queries and per-day windows."""
        day_search: Dict[str, List[int]] = {}
        for frame in self.visual.frames_in(FrameFilter(before=state.query_time)):
            span = day_search.setdefault(str(frame.when.day), [frame.when.time_hhmmss, frame.when.time_hhmmss])
            span[1] = frame.when.time_hhmmss
        request = ClientRequest(CallKind.REWRITE_VISUAL, {
            'task': subtask.description,
            'query_time': state.query_time.format(),
            'memory': state.memory_text(),
            'day_search': day_search,
        })
        output = call_with_retries(client, request).output
        searches = output.get('searches') if isinstance(output, Mapping) else output
        queries: List[str] = []
        windows: List[Dict[str, Any]] = []
        for search in searches if isinstance(searches, list) else []:
            if not isinstance(search, Mapping):
                continue
            for query in search.get('queries') or []:
                if isinstance(query, str) and query.strip() and query.strip() not in queries:
                    queries.append(query.strip())
            windows.append({k: search.get(k) for k in ('day', 'start_t', 'end_t', 'location') if k in search})
        if not queries:
            queries = [subtask.description]
        return lower_visual_args({'queries': queries, 'windows': windows}, state.query_time)

    def _run_visual(self, state, subtask, client, timings) -> AnalysisNote:
        with self._timed(timings, 'visual_retrieval'):
            if not len(self.visual):
                return self._empty_note(state, subtask, 'No frames indexed.')
            if subtask.args.get('mode') == 'sample':
                _, windows = lower_visual_args(subtask.args, state.query_time)
                frames = []
                for window in windows or [FrameFilter(before=state.query_time)]:
                    picked = sample_uniform(self.visual.frames_in(window), self.config.k_total)
                    frames.extend(f for f in picked if f not in frames)
            else:
                queries, windows = lower_visual_args(subtask.args, state.query_time)
                if not queries:
                    queries, windows = self.rewrite_visual(state, subtask, client)
                    state.log('execute', 'visual_rewrite', index=subtask.index, queries=queries,
                              windows=[w.to_dict() for w in windows])
                vectors = [embed_text(client, q, self.visual.dim) for q in queries]
                hits = self.visual.multi_query_search(
                    vectors, windows or [FrameFilter(before=state.query_time)], self.config.k_total,
                )
                frames = [hit.frame for hit in hits]
        if not frames:
            return self._empty_note(state, subtask, 'No frames matched the visual search.')

        items = [
            {'ref': f.frame_id, 'when': f.when.format(), 'location': f.location or ''}
            for f in frames
        ]
        with self._timed(timings, 'visual_analysis'):
            summary, stamps, _ = self._analyze(state, subtask, client, items, images=[f.frame_id for f in frames])
        return AnalysisNote(
            subtask_index=subtask.index,
            tool=subtask.tool,
            summary=summary,
            cited_timestamps=tuple(stamps),
            retrieved_count=len(frames),
            retrieved_timestamps=tuple(f.when for f in frames),
        )

    def _run_audio(self, state, subtask, client, timings) -> AnalysisNote:
        variant, time_range, days = lower_audio_args(subtask.args, state.query_time, self.config.tsearch)
        task = str(subtask.args.get('task') or subtask.description)

        if variant == 'llm':
            if not days:
                low = time_range[0].day if time_range else 1
                high = time_range[1].day if time_range else state.query_time.day
                days = sorted({
                    u.when.day for u in self.transcripts.all_utterances() if low <= u.when.day <= high
                })
            if not days:
                return self._empty_note(state, subtask, 'No transcripts before the query time.')
            with self._timed(timings, 'audio_retrieval'):
                note = self.transcripts.llm_search(
                    task, state.memory_text(), days, client,
                    subtask_index=subtask.index, before=state.query_time,
                )
            return note

        with self._timed(timings, 'audio_retrieval'):
            if time_range is None:
                time_range = (DayTime(1, DAY_START), state.query_time)
            hits = self.transcripts.bm25_search(str(subtask.args.get('query') or task), time_range,
                                                k=self.config.bm25_k)
        if not hits:
            return self._empty_note(state, subtask, 'No transcript lines matched.')

        utterances: List[Utterance] = []
        for hit in hits:
            for u in hit.context or (hit.utterance,):
                if u not in utterances and u.when.start <= state.query_time:
                    utterances.append(u)
        with self._timed(timings, 'audio_analysis'):
            summary, stamps, _ = self._analyze(state, subtask, client, [_utterance_item(u) for u in utterances])
        return AnalysisNote(
            subtask_index=subtask.index,
            tool=subtask.tool,
            summary=summary,
            cited_timestamps=tuple(stamps),
            retrieved_count=len(hits),
            retrieved_timestamps=tuple(hit.utterance.when.start for hit in hits),
        )

    # Grading and answering

    def grade_completion(self, state: AgentState, client: ModelClient) -> str:
        done, remaining = state.plan[:state.current], state.remaining
        request = ClientRequest(CallKind.GRADE, {
            'question': state.question,
            'plan': [s.description for s in state.plan],
            'completed': [s.description for s in done],
            'remaining': [s.description for s in remaining],
            'memory': state.memory_text(),
        })
        try:
            output = call_with_retries(client, request).output
        except ClientError as e:
            logger.warning(f"Grading failed, continuing with the plan: {e}")
            state.log('grading', 'grade_error', error=str(e))
            return INCOMPLETE
        verdict = parse_verdict(output)
        state.log('grading', 'graded', after=state.current, verdict=verdict)
        return verdict

    def answer(self, state: AgentState, client: ModelClient) -> Tuple[int, bool]:
        """Returns (choice, fallback). Anything without a readable letter falls back to A."""
        request = ClientRequest(CallKind.ANSWER, {
            'question': state.question,
            'candidates': self._options(state),
            'memory': state.memory_text(),
        })
        try:
            output = call_with_retries(client, request).output
        except ClientError as e:
            logger.error(f"Answer call failed, falling back to A: {str(e)}")
            state.log('answer', 'fallback', reason='client_error', error=str(e))
            state.answer = 0
            return 0, True

        choice = parse_choice(output)
        if choice is None:
            state.log('answer', 'fallback', reason='unparseable', output=str(output)[:200])
            state.answer = 0
            return 0, True
        state.log('answer', 'answered', choice=LETTERS[choice])
        state.answer = choice
        return choice, False

    # Whole runs

    def _finish(self, qid: str, state: AgentState, client: ModelClient, timings: Dict[str, float]) -> AnswerTrace:
        with self._timed(timings, 'vqa'):
            choice, fallback = self.answer(state, client)
        return AnswerTrace(qid=qid, choice=choice, fallback=fallback, state=state,
                           timings=timings, tools=self.config.tools)

    def run(self, item) -> AnswerTrace:
        """
        item needs qid, question, candidates and query_time (an MCQItem or
        anything shaped like one). Always returns a trace.
        """
        state = self.new_state(item.question, item.candidates, item.query_time)
        client = LedgerClient(self.client, state.ledger)
        timings: Dict[str, float] = {}

        try:
            with self._timed(timings, 'planning'):
                state.plan = self.plan(state, client)
            state.log('planning', 'planned', steps=[s.tool.value for s in state.plan])
        except PlanningError as e:
            logger.warning(f"{item.qid}: {e}; answering from empty memory")
            state.log('planning', 'planning_failed', error=str(e))

        while state.current < len(state.plan):
            self.execute_subtask(state, client, timings)
            if state.current >= len(state.plan):
                break
            with self._timed(timings, 'grading'):
                verdict = self.grade_completion(state, client)
            if verdict == COMPLETE:
                state.log('grading', 'early_exit', skipped=[s.index for s in state.remaining])
                break

        trace = self._finish(item.qid, state, client, timings)
        logger.info(f"{item.qid}: answered {trace.letter} after {state.current} of {len(state.plan)} sub-tasks")
        return trace

    def run_oracle(self, item, context) -> AnswerTrace:
        """
        Upper-bound run: frames sampled around the target moments and the full
        transcripts of the target days, with no planning and no grading.
        """
        state = self.new_state(item.question, item.candidates, item.query_time)
        client = LedgerClient(self.client, state.ledger)
        timings: Dict[str, float] = {}

        state.plan = [
            SubTask(1, 'Describe what the frames around the target moments show', ToolName.VISUAL, {
                'mode': 'sample',
                'windows': [{'day': w.day, 'start_t': w.start_t, 'end_t': w.end_t} for w in context.frame_windows],
            }),
            SubTask(2, 'Find what was said on the target days', ToolName.AUDIO, {
                'variant': 'llm',
                'days': list(context.transcript_days),
            }),
        ]
        state.log('planning', 'oracle_plan', steps=[s.tool.value for s in state.plan])
        while state.current < len(state.plan):
            self.execute_subtask(state, client, timings)
        return self._finish(item.qid, state, client, timings)
