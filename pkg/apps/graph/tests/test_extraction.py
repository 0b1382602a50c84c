from io import StringIO
from unittest.mock import patch

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from apps.core.exceptions import CaptionOrderError, ExtractionError, InvalidEnumError
from apps.core.testing import interval, make_utterance, scripted
from apps.core.types import EntityRef, RelationType
from apps.graph.extraction import (
    Caption, Document, ExtractionResult, RawEdge, add_captions, annotate_temporal, batch_documents,
    belongs_to_window, build_graph, extract_document_graph, fuse_captions, parse_extraction, prepare_documents,
    transcript_documents,
)
from apps.graph.models import RelationEdgeRecord
from apps.transcripts.services import TranscriptSearch

SHURE = EntityRef('Shure', 'Person')
ALICE = EntityRef('Alice', 'Person')

UTTERANCES = [
    make_utterance('u1', 2, 155021, 155022, 'Got it.', speaker='Shure'),
    make_utterance('u2', 2, 155030, 155034, 'Can you pass the guitar?', speaker='Alice'),
    make_utterance('u3', 2, 155035, 155040, 'Here you go.', speaker='Shure'),
]


def talk_doc(utterance_ids=('u1', 'u2', 'u3')):
    return Document('d2-1550', interval(2, 155000, 155100), 'Shure and Alice in the living room', utterance_ids)


def talks_to(source='Shure', target='Alice'):
    return {'source': {'id': source, 'type': 'Person'}, 'target': {'id': target, 'type': 'Person'},
            'type': 'TALKS_TO'}


class MembershipTests(SimpleTestCase):
    def test_half_open_windows(self):
        window = interval(1, 100000, 100030)
        self.assertTrue(belongs_to_window(interval(1, 95959, 100001), window))
        self.assertFalse(belongs_to_window(interval(1, 95950, 100000), window))
        self.assertFalse(belongs_to_window(interval(1, 100030, 100035), window))
        self.assertTrue(belongs_to_window(interval(1, 100000, 100000), window))
        self.assertFalse(belongs_to_window(interval(1, 100030, 100030), window))
        self.assertFalse(belongs_to_window(interval(2, 100010, 100020), window))


class TranscriptDocumentTests(SimpleTestCase):
    def test_fixed_windows_of_speech(self):
        docs = transcript_documents(UTTERANCES, window_s=30)
        self.assertEqual([d.doc_id for d in docs], ['transcript:D2-155000', 'transcript:D2-155030'])
        self.assertEqual([d.interval for d in docs], [interval(2, 155000, 155030), interval(2, 155030, 155100)])
        self.assertEqual([d.utterance_ids for d in docs], [('u1',), ('u2', 'u3')])
        self.assertEqual(docs[0].caption_text, '[155021-155022] Shure: Got it.')

    def test_edge_crossing_and_end_of_day(self):
        docs = transcript_documents([
            make_utterance('a', 1, 100025, 100035, 'across the edge'),
            make_utterance('b', 1, 100100, 100130, 'ends on the edge'),
            make_utterance('c', 1, 235959, 235959, 'midnight'),
        ], window_s=30)
        self.assertEqual([(d.interval.start_t, d.utterance_ids) for d in docs], [
            (100000, ('a',)), (100030, ('a',)), (100100, ('b',)), (235930, ('c',)),
        ])
        self.assertEqual(docs[-1].interval.end_t, 235959)
        self.assertEqual(transcript_documents([]), [])


class ParseExtractionTests(SimpleTestCase):
    def test_out_of_vocabulary_output_is_dropped(self):
        result = parse_extraction('d1', {
            'nodes': [{'id': 'Jake', 'type': 'Person'}, {'id': 'Dog', 'type': 'Animal'}, {'id': '7', 'type': 'Object'}],
            'relationships': [
                {'source': {'id': 'Jake', 'type': 'Person'}, 'target': {'id': 'cup', 'type': 'Object'}, 'type': 'USES'},
                {'source': {'id': 'Jake', 'type': 'Person'}, 'target': {'id': 'cup', 'type': 'Object'}, 'type': 'LIKES'},
                {'source_id': 'Jake', 'source_type': 'Person', 'target_id': 'Alice', 'target_type': 'Person',
                 'rel_type': 'talks to'},
                'not an edge',
            ],
        })
        self.assertEqual(result.nodes, (EntityRef('Jake', 'Person'), EntityRef('cup', 'Object'),
                                        EntityRef('Alice', 'Person')))
        self.assertEqual([e.rel for e in result.raw_edges], [RelationType.USES, RelationType.TALKS_TO])

    def test_garbage_output_yields_nothing(self):
        self.assertEqual(parse_extraction('d1', 'no json here'), ExtractionResult())
        self.assertEqual(parse_extraction('d1', {'nodes': 'x'}), ExtractionResult())


class AnnotateTests(SimpleTestCase):
    def annotate(self, *citations, raw_edges=None):
        raw_edges = raw_edges or (RawEdge(SHURE, ALICE, RelationType.TALKS_TO),)
        client = scripted({'kind': 'annotate', 'response': {'annotations': [
            {'index': i, 'utterance_ids': list(cited)} for i, cited in enumerate(citations)
        ]}})
        return annotate_temporal(ExtractionResult(raw_edges=raw_edges), talk_doc(), UTTERANCES, client)

    def test_single_citation_sets_interval_and_evidence(self):
        [edge] = self.annotate(['u1'])
        self.assertEqual(edge.interval, interval(2, 155021, 155022))
        self.assertEqual(edge.evidence, 'Got it.')
        self.assertEqual((edge.source, edge.rel, edge.target), (SHURE, RelationType.TALKS_TO, ALICE))

    def test_adjacent_citations_become_their_hull(self):
        [edge] = self.annotate(['u3', 'u2'])
        self.assertEqual(edge.interval, interval(2, 155030, 155040))
        self.assertEqual(edge.evidence, 'Can you pass the guitar? Here you go.')

    def test_separated_citations_become_separate_edges(self):
        edges = self.annotate(['u1', 'u3'])
        self.assertEqual([e.interval for e in edges], [interval(2, 155021, 155022), interval(2, 155035, 155040)])

    def test_uncited_edge_gets_the_caption_window(self):
        edges = self.annotate([], ['nope'])
        self.assertEqual(edges[0].interval, talk_doc().interval)
        self.assertEqual(edges[0].evidence, '')

    @patch('apps.llm.client.sleep')
    def test_annotation_failure_falls_back(self, mock_sleep):
        client = scripted({'kind': 'annotate', 'error': 'connection reset'})
        raw = ExtractionResult(raw_edges=(RawEdge(SHURE, ALICE, RelationType.TALKS_TO),))
        [edge] = annotate_temporal(raw, talk_doc(), UTTERANCES, client)
        self.assertEqual(edge.interval, talk_doc().interval)
        self.assertEqual(mock_sleep.call_count, 2)


class FuseTests(SimpleTestCase):
    def test_windows_collect_their_utterances(self):
        captions = [Caption('c1', interval(2, 155000, 155030), 'Shure nods'),
                    Caption('c2', interval(2, 155030, 155100), 'Alice holds a guitar')]
        docs = fuse_captions(captions, UTTERANCES, scripted(), max_workers=2)
        self.assertEqual([d.utterance_ids for d in docs], [('u1',), ('u2', 'u3')])
        self.assertIn('Shure: Got it.', docs[0].caption_text)

    @patch('apps.llm.client.sleep')
    def test_fusion_failure_concatenates_locally(self, mock_sleep):
        captions = [Caption('c1', interval(2, 155000, 155030), 'Shure nods')]
        docs = fuse_captions(captions, UTTERANCES, scripted({'kind': 'fuse', 'error': 'timeout'}))
        self.assertEqual(docs[0].caption_text, 'Shure nods\n[155021-155022] Shure: Got it.')

    def test_overlapping_captions_rejected(self):
        captions = [Caption('c1', interval(2, 155000, 155030), 'a'), Caption('c2', interval(2, 155020, 155100), 'b')]
        with self.assertRaises(CaptionOrderError):
            fuse_captions(captions, [], scripted())

    def test_batching(self):
        docs = [Document(f'd{h}', interval(1, h * 10000, h * 10000 + 30), 'x') for h in (9, 9, 10)]
        self.assertEqual(list(batch_documents(docs, 'hour')), ['D1-09', 'D1-10'])
        self.assertEqual(list(batch_documents(docs, 'video')), ['all'])


def graph_client(*extra):
    return scripted(
        *extra,
        {'kind': 'extract', 'match': {'doc_id': 'd2-1550'}, 'response': {'relationships': [talks_to()]}},
        {'kind': 'annotate', 'match': {'doc_id': 'd2-1550'},
         'response': {'annotations': [{'index': 0, 'utterance_ids': ['u1']}]}},
    )


class BuildGraphTests(TestCase):
    def test_spoken_exchange_lands_in_the_store(self):
        report = build_graph([talk_doc()], graph_client(), utterance_lookup={u.utt_id: u for u in UTTERANCES})
        self.assertEqual(report.inserted, 1)
        record = RelationEdgeRecord.objects.get()
        self.assertEqual((record.day, record.start_t, record.end_t), (2, 155021, 155022))
        self.assertEqual((record.source_id, record.rel_type, record.target_id), ('Shure', 'TALKS_TO', 'Alice'))
        self.assertEqual(record.transcript, 'Got it.')

    @patch('apps.llm.client.sleep')
    def test_failed_document_is_reported_and_skipped(self, mock_sleep):
        broken = Document('d-broken', interval(1, 90000, 90030), 'x')
        client = graph_client({'kind': 'extract', 'match': {'doc_id': 'd-broken'}, 'error': 'timeout'})
        report = build_graph([broken, talk_doc()], client, utterance_lookup={u.utt_id: u for u in UTTERANCES})
        self.assertEqual(list(report.failures), ['d-broken'])
        self.assertEqual(report.inserted, 1)

        with self.assertRaises(ExtractionError):
            extract_document_graph(broken, client)

    def test_rebuilding_inserts_nothing_new(self):
        docs, utterances, entries = [], {}, []
        for i in range(20):
            start = 100000 + i * 100
            utterance = make_utterance(f'u{i}', 1, start + 5, start + 9, f'Jake hands over item {i}', 'Jake')
            utterances[utterance.utt_id] = utterance
            doc = Document(f'doc{i}', interval(1, start, start + 30), f'Jake with item {i}', (utterance.utt_id,))
            docs.append(doc)
            entries.append({'kind': 'extract', 'match': {'doc_id': doc.doc_id}, 'response': {'relationships': [
                talks_to(target='Alice'),
                {'source': {'id': 'Jake', 'type': 'Person'}, 'target': {'id': f'item {i}', 'type': 'Object'},
                 'type': 'USES'},
            ]}})
            entries.append({'kind': 'annotate', 'match': {'doc_id': doc.doc_id}, 'response': {'annotations': [
                {'index': 1, 'utterance_ids': [utterance.utt_id]},
            ]}})
        client = scripted(*entries)

        first = build_graph(docs, client, utterance_lookup=utterances)
        second = build_graph(docs, client, utterance_lookup=utterances)

        self.assertEqual(first.inserted, 40)
        self.assertEqual(second.inserted, 0)
        self.assertEqual(second.stats.to_dict(), first.stats.to_dict())
        self.assertEqual(first.stats.edges_per_rel[RelationType.USES], 20)


class CaptionStoreTests(TestCase):
    def test_identical_reingest_is_skipped(self):
        captions = [Caption('c1', interval(1, 100000, 100030), 'a')]
        self.assertEqual(add_captions(captions), 1)
        self.assertEqual(add_captions(captions), 0)
        with self.assertRaises(CaptionOrderError):
            add_captions([Caption('c1', interval(1, 100000, 100030), 'changed')])
        with self.assertRaises(CaptionOrderError):
            add_captions([Caption('c2', interval(1, 100010, 100040), 'overlap')])


class ExtractGraphCommandTests(TestCase):
    def test_empty_store_exits_one(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('extract_graph', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)

    def test_extracts_from_ingested_captions(self):
        add_captions([Caption('d2-1550', interval(2, 155000, 155100), 'Shure and Alice in the living room')])
        with patch('apps.core.management.base.StoreCommand.get_client', return_value=graph_client()):
            out = StringIO()
            call_command('extract_graph', stdout=out)
        self.assertIn('"total_edges": 1', out.getvalue())
        record = RelationEdgeRecord.objects.get()
        self.assertEqual((record.start_t, record.end_t, record.transcript), (155000, 155100, ''))

    def test_transcript_source_needs_no_captions(self):
        TranscriptSearch().add_utterances(UTTERANCES)
        client = scripted(
            {'kind': 'extract', 'response': {'relationships': [talks_to()]}},
            {'kind': 'annotate', 'match': {'doc_id': 'transcript:D2-155000'},
             'response': {'annotations': [{'index': 0, 'utterance_ids': ['u1']}]}},
            {'kind': 'annotate', 'response': {'annotations': [{'index': 0, 'utterance_ids': ['u2', 'u3']}]}},
        )
        with patch('apps.core.management.base.StoreCommand.get_client', return_value=client):
            out = StringIO()
            call_command('extract_graph', source='transcript', stdout=out)
        self.assertIn('"total_edges": 2', out.getvalue())
        self.assertEqual(list(RelationEdgeRecord.objects.values_list('start_t', 'end_t', 'transcript')), [
            (155021, 155022, 'Got it.'),
            (155030, 155040, 'Can you pass the guitar? Here you go.'),
        ])

    def test_sources_keep_their_own_documents(self):
        add_captions([Caption('d2-1550', interval(2, 155000, 155100), 'Shure and Alice in the living room')])
        client = scripted()
        transcript = prepare_documents(client, UTTERANCES, source='transcript')
        fused = prepare_documents(client, UTTERANCES, source='fused')

        self.assertEqual([d.doc_id for d in transcript], ['transcript:D2-155000', 'transcript:D2-155030'])
        self.assertEqual([d.doc_id for d in fused], ['d2-1550'])
        self.assertEqual(fused[0].utterance_ids, ('u1', 'u2', 'u3'))
        with self.assertRaises(InvalidEnumError):
            prepare_documents(client, UTTERANCES, source='audio')
