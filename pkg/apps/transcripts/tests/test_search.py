import math
import random
import threading
from collections import Counter

from django.test import SimpleTestCase, TestCase

from apps.core.exceptions import InvalidIntentError, UtteranceValidationError
from apps.core.testing import make_utterance
from apps.core.timecode import seconds_to_code
from apps.core.types import DayTime, ToolName
from apps.llm.scripted import ScriptedModelClient
from apps.transcripts.bm25 import tokenize
from apps.transcripts.models import UtteranceRecord
from apps.transcripts.services import TranscriptSearch, parse_transcript_analysis

VOCABULARY = ['pizza', 'guitar', 'phone', 'cup', 'dance', 'song', 'kitchen', 'the', 'a', 'we', 'Shure', 'order']


def random_corpus(rng, n):
    utterances = []
    for i in range(n):
        start = rng.randrange(0, 86000)
        words = [rng.choice(VOCABULARY) for _ in range(rng.randint(1, 12))]
        utterances.append(make_utterance(
            f'u{i:03d}', rng.randint(1, 3), seconds_to_code(start), seconds_to_code(start + rng.randrange(0, 20)),
            ' '.join(words).capitalize() + rng.choice(['.', '?', '!']),
        ))
    return utterances


def bm25_oracle(utterances, query, time_range, k, k1=1.2, b=0.75):
    docs = [[w.lower() for w in u.text.replace('.', ' ').replace('?', ' ').replace('!', ' ').split()]
            for u in utterances]
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    terms = query.lower().split()
    scored = []
    for u, doc in zip(utterances, docs):
        if time_range and not (u.when.start <= time_range[1] and time_range[0] <= u.when.end):
            continue
        counts = Counter(doc)
        if not any(counts[t] for t in terms):
            continue
        score = 0.0
        for term in terms:
            df = sum(1 for d in docs if term in d)
            freq = counts[term]
            if freq:
                idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
                score += idf * freq * (k1 + 1) / (freq + k1 * (1 - b + b * len(doc) / avgdl))
        scored.append((-score, u.sort_key, u.utt_id))
    return [(utt_id, -score) for score, _, utt_id in sorted(scored)[:k]]


class BM25Tests(TestCase):
    def test_matches_reference_scoring(self):
        rng = random.Random(17)
        for _ in range(50):
            UtteranceRecord.objects.all().delete()
            corpus = random_corpus(rng, rng.randint(3, 60))
            search = TranscriptSearch(k1=1.2, b=0.75, context=2)
            search.add_utterances(corpus)
            for _ in range(10):
                query = ' '.join(rng.choice(VOCABULARY + ['zebra']) for _ in range(rng.randint(1, 3)))
                time_range = None
                if rng.random() < 0.5:
                    a = DayTime(rng.randint(1, 3), seconds_to_code(rng.randrange(0, 86400)))
                    b = DayTime(rng.randint(1, 3), seconds_to_code(rng.randrange(0, 86400)))
                    time_range = (min(a, b), max(a, b))
                k = rng.randint(1, 15)

                hits = search.bm25_search(query, time_range, k)
                expected = bm25_oracle(corpus, query, time_range, k)
                self.assertEqual([h.utterance.utt_id for h in hits], [utt_id for utt_id, _ in expected])
                for hit, (_, score) in zip(hits, expected):
                    self.assertTrue(abs(hit.score - score) <= 1e-9)
                    self.assertGreater(hit.score, 0)

    def test_context_stays_on_the_same_day(self):
        search = TranscriptSearch(context=1)
        search.add_utterances([
            make_utterance('a', 1, 235950, 235955, 'late night snack'),
            make_utterance('b', 2, 80000, 80005, 'morning pizza'),
            make_utterance('c', 2, 80010, 80015, 'more coffee'),
        ])
        [hit] = search.bm25_search('pizza')
        self.assertEqual([u.utt_id for u in hit.context], ['b', 'c'])
        self.assertEqual([u.utt_id for u in search.context_window('c', 5)], ['b', 'c'])

    def test_bad_queries(self):
        search = TranscriptSearch()
        with self.assertRaises(InvalidIntentError):
            search.bm25_search('?!', k=3)
        with self.assertRaises(InvalidIntentError):
            search.bm25_search('pizza', k=0)
        self.assertEqual(search.bm25_search('pizza'), [])

    def test_duplicate_ids(self):
        search = TranscriptSearch()
        search.add_utterances([make_utterance('a', 1, 100000, 100005, 'hello')])
        with self.assertRaises(UtteranceValidationError):
            search.add_utterances([make_utterance('a', 1, 100000, 100005, 'changed')])
        self.assertEqual(search.add_utterances([make_utterance('a', 1, 100000, 100005, 'hello')],
                                               skip_existing=True), 0)
        with self.assertRaises(UtteranceValidationError):
            make_utterance('b', 1, 100000, 100005, '   ')

    def test_tokenizer_keeps_unicode_letters(self):
        self.assertEqual(tokenize('Café, naïve_user 42!'), ['café', 'naïve', 'user', '42'])


class CountingClient(ScriptedModelClient):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.requests = []
        self._lock = threading.Lock()

    def call(self, request):
        with self._lock:
            self.requests.append(request)
        return super().call(request)


class LLMSearchTests(TestCase):
    def setUp(self):
        self.search = TranscriptSearch()
        self.search.add_utterances([
            make_utterance('u1', 1, 100000, 100005, 'I ordered the pizza', speaker='Jake'),
            make_utterance('u2', 2, 155021, 155022, 'Got it.', speaker='Shure'),
            make_utterance('u3', 2, 200000, 200005, 'Dinner is here'),
            make_utterance('u4', 3, 90000, 90005, 'Morning'),
        ])

    def test_one_call_per_day_merged_in_day_order(self):
        client = CountingClient([
            {'kind': 'transcript_llm_search', 'match': {'day': 2},
             'response': {'analysis': 'Shure agreed at 15:50:21.', 'timestamps': ['D2 15:50:21', 'garbage']}},
            {'kind': 'transcript_llm_search', 'match': {'day': 1},
             'response': {'analysis': 'Jake ordered food.', 'timestamps': ['D1 10:00:00']}},
        ])
        note = self.search.llm_search('who ordered', '', [2, 1, 2], client, subtask_index=3,
                                      before=DayTime(2, 180000), max_workers=2)

        self.assertEqual(sorted(r.payload['day'] for r in client.requests), [1, 2])
        day2 = next(r for r in client.requests if r.payload['day'] == 2)
        self.assertEqual([t['utt_id'] for t in day2.payload['transcripts']], ['u2'])
        self.assertEqual(note.tool, ToolName.AUDIO)
        self.assertEqual(note.subtask_index, 3)
        self.assertEqual(note.cited_timestamps, (DayTime(1, 100000), DayTime(2, 155021)))
        self.assertTrue(note.summary.startswith('[D1] Jake ordered food.'))
        self.assertEqual(note.retrieved_count, 2)

    def test_citations_after_the_query_time_are_dropped(self):
        client = CountingClient([
            {'kind': 'transcript_llm_search',
             'response': {'analysis': 'Dinner came at 20:00:00, agreed at 15:50:21.',
                          'timestamps': ['D2 20:00:00', 'D2 18:00:01', 'D2 18:00:00']}},
        ])
        note = self.search.llm_search('dinner', '', 2, client, before=DayTime(2, 180000))
        self.assertEqual(note.cited_timestamps, (DayTime(2, 180000), DayTime(2, 155021)))

        note = self.search.llm_search('dinner', '', 2, client)
        self.assertIn(DayTime(2, 200000), note.cited_timestamps)

    def test_needs_a_day(self):
        with self.assertRaises(InvalidIntentError):
            self.search.llm_search('x', '', [], CountingClient())


class ParseAnalysisTests(SimpleTestCase):
    def test_timestamps_from_list_and_prose(self):
        analysis, stamps = parse_transcript_analysis(
            {'analysis': 'Alice replied at 15:50:30 after D2 15:50:21', 'timestamps': 'D2 15:50:21'}, 2,
        )
        self.assertEqual(stamps, [DayTime(2, 155021), DayTime(2, 155030)])
        self.assertIn('Alice', analysis)

    def test_plain_text_output(self):
        analysis, stamps = parse_transcript_analysis('Nothing relevant, 99:99:99', 1)
        self.assertEqual(stamps, [])
        self.assertEqual(analysis, 'Nothing relevant, 99:99:99')
