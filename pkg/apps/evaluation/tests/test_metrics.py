import json
import random
import tempfile
from pathlib import Path
from types import SimpleNamespace

from django.test import SimpleTestCase

from apps.agents.state import AgentState, AnswerTrace, TokenLedger
from apps.core.config import ALL_TOOLS
from apps.core.exceptions import BenchmarkError, InvalidEnumError, InvalidIntentError
from apps.core.testing import make_item, write_json
from apps.core.timecode import seconds_to_code
from apps.core.types import AnalysisNote, DayTime, ToolName
from apps.evaluation.benchmark import Category, load_benchmark
from apps.evaluation.metrics import (
    FrameWindow, RecallConfig, accuracy, corpus_recall, is_hit, oracle_context, recall_at_w, recall_by_tool,
)
from apps.evaluation.reports import render_table, report
from apps.llm.client import CallKind, Usage

FIXTURES = Path(__file__).parent / 'fixtures'


def item_row(**overrides):
    row = {'qid': 'q1', 'question': 'What did Jake use?', 'candidates': ['a', 'b', 'c', 'd'], 'gold': 'B',
           'query_time': 'D3 18:00:00'}
    row.update(overrides)
    return row


class LoadBenchmarkTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_fixture_benchmark(self):
        items = load_benchmark(FIXTURES / 'benchmark.json')
        self.assertEqual(len(items), 10)
        self.assertEqual(items[0].gold_letter, 'A')
        self.assertEqual(items[2].gold, 1)
        self.assertEqual(items[3].target_times, (DayTime(3, 90000), DayTime(3, 90030)))
        self.assertEqual(items[9].target_times, ())
        self.assertEqual(items[4].category, Category.HABIT_INSIGHT)

    def test_invalid_items_name_their_qid(self):
        cases = [
            [item_row(qid='q7', gold='E')],
            [item_row(qid='q7', candidates=['a', 'b', 'c'])],
            [item_row(qid='q7', target_times=['D4 09:00:00'])],
            [item_row(qid='q7', category='Trivia')],
            [item_row(qid='q7'), item_row(qid='q7')],
        ]
        for rows in cases:
            with self.subTest(rows=rows), self.assertRaises(BenchmarkError) as ctx:
                load_benchmark(write_json(self.dir / 'bench.json', rows))
            self.assertEqual(ctx.exception.qid, 'q7')

    def test_unreadable_files(self):
        with self.assertRaises(BenchmarkError):
            load_benchmark(self.dir / 'missing.json')
        path = self.dir / 'broken.json'
        path.write_text('[\n{"qid": ', encoding='utf-8')
        with self.assertRaises(BenchmarkError) as ctx:
            load_benchmark(path)
        self.assertIn('line 2', str(ctx.exception))
        with self.assertRaises(BenchmarkError):
            load_benchmark(write_json(self.dir / 'object.json', {'questions': []}))


class AccuracyTests(SimpleTestCase):
    def test_overall_and_per_category(self):
        items, traces = [], {}
        outcomes = [('EventRecall', [1, 1, 1, 0, 0]), ('TaskMaster', [1, 1, 1, 1, 0])]
        for category, hits in outcomes:
            for i, hit in enumerate(hits):
                qid = f'{category}-{i}'
                items.append(make_item(qid=qid, gold=2, category=category))
                traces[qid] = SimpleNamespace(choice=2 if hit else 3)
        # A missing trace counts as wrong
        del traces['TaskMaster-4']

        result = accuracy(traces, list(reversed(items)))
        self.assertEqual((result.correct, result.total, result.overall), (7, 10, 70.0))
        self.assertEqual(list(result.per_category), ['EventRecall', 'TaskMaster'])
        self.assertEqual(result.per_category, {'EventRecall': 60.0, 'TaskMaster': 80.0})
        self.assertEqual(result.category_counts['TaskMaster'], (4, 5))

    def test_uncategorised_items_only_count_overall(self):
        items = [make_item(qid='a', gold=0), make_item(qid='b', gold=0, category='EntityLog')]
        result = accuracy({'a': SimpleNamespace(choice=0), 'b': SimpleNamespace(choice=1)}, items)
        self.assertEqual(result.overall, 50.0)
        self.assertEqual(result.per_category, {'EntityLog': 0.0})


def random_moment(rng):
    return DayTime(rng.randint(1, 3), seconds_to_code(rng.randrange(0, 86400)))


def hit_by_absolute_seconds(selected, target, window):
    t = target.absolute_seconds()
    return any(
        s.absolute_seconds() // 86400 == t // 86400 and 2 * abs(s.absolute_seconds() - t) <= window
        for s in selected
    )


class RecallTests(SimpleTestCase):
    def test_matches_reference_over_random_cases(self):
        rng = random.Random(5)
        windows = (10, 30, 60, 120, 600, 3600)
        for _ in range(1200):
            targets = [random_moment(rng) for _ in range(rng.randint(1, 4))]
            selected = [random_moment(rng) for _ in range(rng.randint(0, 6))]
            # Some selections land close to a target
            for target in targets:
                if rng.random() < 0.5:
                    shifted = min(86399, max(0, target.seconds_of_day + rng.randint(-400, 400)))
                    selected.append(DayTime(target.day, seconds_to_code(shifted)))

            values = []
            for window in windows:
                value = recall_at_w(selected, targets, RecallConfig(window))
                expected = sum(hit_by_absolute_seconds(selected, t, window) for t in targets) / len(targets)
                self.assertEqual(value, expected)
                values.append(value)
            self.assertEqual(values, sorted(values))

    def test_boundaries(self):
        target = DayTime(2, 120000)
        cfg = RecallConfig(60)
        self.assertTrue(is_hit([DayTime(2, 120030)], target, cfg))
        self.assertFalse(is_hit([DayTime(2, 120031)], target, cfg))
        self.assertFalse(is_hit([DayTime(1, 120000)], target, cfg))
        self.assertFalse(is_hit([DayTime(1, 235959)], DayTime(2, 0), RecallConfig(10)))
        self.assertIsNone(recall_at_w([target], [], cfg))
        with self.assertRaises(InvalidEnumError):
            RecallConfig(0)

    def test_corpus_recall_skips_items_without_targets(self):
        cfg = RecallConfig(30)
        pairs = [([DayTime(1, 100000)], [DayTime(1, 100010), DayTime(1, 110000)]), ([], []), ([], [DayTime(2, 0)])]
        self.assertEqual(corpus_recall(pairs, cfg), 0.25)
        self.assertEqual(corpus_recall([([], [])], cfg), 0.0)


class OracleContextTests(SimpleTestCase):
    def test_window_around_a_target(self):
        context = oracle_context(make_item(targets=['D2 12:00:00']), 25)
        self.assertEqual(context.frame_windows, (FrameWindow(2, 115935, 120025),))
        self.assertEqual(context.transcript_days, (2,))

    def test_clipping_and_merging(self):
        item = make_item(targets=['D2 12:00:40', 'D1 00:00:10', 'D2 12:00:00', 'D1 23:59:50'])
        context = oracle_context(item, 25)
        self.assertEqual(context.frame_windows, (
            FrameWindow(1, 0, 35), FrameWindow(1, 235925, 235959), FrameWindow(2, 115935, 120105),
        ))
        self.assertEqual(context.to_dict()['transcript_days'], [1, 2])


def make_trace(qid, choice, timings, notes=(), usages=(), fallback=False):
    state = AgentState(question='What did Jake use?', candidates=('a', 'b', 'c', 'd'),
                       query_time=DayTime(3, 180000), ledger=TokenLedger(85))
    for note in notes:
        state.remember(note)
    for kind, usage in usages:
        state.ledger.record(kind, usage)
    return AnswerTrace(qid=qid, choice=choice, fallback=fallback, state=state, timings=timings, tools=ALL_TOOLS)


class ReportTests(SimpleTestCase):
    def setUp(self):
        graph_note = AnalysisNote(1, ToolName.ENTITY_GRAPH, 'Shure talked to Alice',
                                  cited_timestamps=(DayTime(2, 155021),),
                                  retrieved_timestamps=(DayTime(2, 155021), DayTime(2, 154000)))
        self.traces = [
            make_trace('q1', 0, {'planning': 1.0, 'vqa': 2.0}, [graph_note],
                       [(CallKind.PLAN, Usage(100, 10, 2))]),
            make_trace('q2', 1, {'planning': 3.0}, usages=[(CallKind.ANSWER, Usage(50, 0))], fallback=True),
        ]
        self.items = [make_item(qid='q1', gold=0, targets=['D2 15:50:40']), make_item(qid='q2', gold=0)]

    def test_means_and_totals(self):
        data = report(self.traces)
        self.assertEqual(data['runtime_s'], {'phases': {'planning': 2.0, 'vqa': 1.0}, 'total': 3.0})
        self.assertEqual(data['tokens']['totals']['total_tokens'], 330)
        self.assertEqual(data['tokens']['totals']['image_tokens'], 170)
        self.assertEqual(data['tokens']['means']['total_tokens'], 165)
        self.assertEqual(data['tools']['eg'], {'subtasks': 1, 'input_ts': 2, 'selected_ts': 1, 'contributed': True})
        self.assertFalse(data['tools']['visual']['contributed'])
        self.assertEqual(data['fallbacks'], 1)
        self.assertNotIn('accuracy', data)

    def test_accuracy_and_recall_sections(self):
        data = report(self.traces, self.items, windows=(10, 60))
        self.assertEqual(data['accuracy']['overall'], 50.0)
        self.assertEqual(data['recall']['eg'], {'10': 0.0, '60': 1.0})
        self.assertEqual(data['recall']['visual'], {'10': 0.0, '60': 0.0})
        self.assertEqual(data['recall']['overall']['60'], 1.0)
        json.dumps(data)

        by_tool = recall_by_tool({t.qid: t for t in self.traces}, self.items, [60])
        self.assertEqual(by_tool['overall'], {60: 1.0})

    def test_render_table(self):
        text = render_table(report(self.traces, self.items, windows=(60,)))
        self.assertIn('MCQ accuracy (%) over 2 items', text)
        self.assertIn('Recall@W', text)
        self.assertIn('60s', text)
        self.assertIn('Tokens: 330 total, 165.0 per item (2 images)', text)
        self.assertIn('Runtime: 3.00s per item planning=2.00 vqa=1.00', text)

    def test_needs_traces(self):
        with self.assertRaises(InvalidIntentError):
            report([])
