from django.conf import settings
from django.test import SimpleTestCase, override_settings

from apps.core.config import MAX_SUBTASKS, RunConfig, parse_tools, parse_windows
from apps.core.exceptions import InvalidEnumError
from apps.core.types import ToolName


class RunConfigTests(SimpleTestCase):
    def test_subtask_budget_is_capped(self):
        self.assertEqual(RunConfig.from_settings().max_subtasks, MAX_SUBTASKS)
        self.assertEqual(RunConfig.from_settings(max_subtasks=3).max_subtasks, 3)
        for value in (0, MAX_SUBTASKS + 1, 50):
            with self.subTest(max_subtasks=value), self.assertRaises(InvalidEnumError):
                RunConfig.from_settings(max_subtasks=value)

    def test_extraction_source(self):
        self.assertEqual(RunConfig.from_settings().extraction_source, 'fused')
        config = RunConfig.from_settings(extraction_source='transcript')
        self.assertEqual(config.to_dict()['extraction_source'], 'transcript')
        with self.assertRaises(InvalidEnumError):
            RunConfig.from_settings(extraction_source='captions')

    @override_settings(EGOGRAPH_CONFIG={**settings.EGOGRAPH_CONFIG, 'extraction_source': 'transcript'})
    def test_extraction_source_from_settings(self):
        self.assertEqual(RunConfig.from_settings().extraction_source, 'transcript')

    def test_tools_and_windows(self):
        self.assertEqual(parse_tools('audio, EG'), (ToolName.ENTITY_GRAPH, ToolName.AUDIO))
        self.assertEqual(parse_windows('60,10'), (60, 10))
        with self.assertRaises(InvalidEnumError):
            parse_windows('10,-5')
