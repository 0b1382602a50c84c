from django.test import SimpleTestCase

from apps.core.exceptions import InvalidEnumError, InvalidTimeError
from apps.core.timecode import code_to_seconds, decode_time, encode_time, format_code, parse_clock, seconds_to_code
from apps.core.types import (
    DayTime, EntityRef, EntityType, RelationType, TimeInterval, ToolName, find_timestamps, seconds_between,
)


class TimeCodeTests(SimpleTestCase):
    def test_known_values(self):
        self.assertEqual(encode_time(13, 26, 9), 132609)
        self.assertEqual(encode_time(18, 40, 16), 184016)
        self.assertEqual(encode_time(0, 0, 0), 0)
        self.assertEqual(decode_time(132609), (13, 26, 9))
        self.assertEqual(decode_time(235959), (23, 59, 59))
        self.assertEqual(format_code(184016), '18:40:16')

    def test_round_trip_every_clock_value(self):
        for hour in range(24):
            for minute in range(60):
                for second in range(60):
                    code = encode_time(hour, minute, second)
                    self.assertEqual(decode_time(code), (hour, minute, second))
                    self.assertEqual(seconds_to_code(code_to_seconds(code)), code)

    def test_out_of_range_components(self):
        for args in [(24, 0, 0), (0, 60, 0), (0, 0, 60), (-1, 0, 0)]:
            with self.assertRaises(InvalidTimeError):
                encode_time(*args)
        for code in [236000, 126000, 120060, -1, 240000]:
            with self.assertRaises(InvalidTimeError):
                decode_time(code)

    def test_parse_clock(self):
        self.assertEqual(parse_clock('13:26:09'), 132609)
        with self.assertRaises(InvalidTimeError):
            parse_clock('13:26')


class DayTimeTests(SimpleTestCase):
    def test_parse_and_format(self):
        moment = DayTime.parse('D4 11:34:00')
        self.assertEqual(moment, DayTime(4, 113400))
        self.assertEqual(moment.format(), 'D4 11:34:00')
        with self.assertRaises(InvalidTimeError):
            DayTime.parse('4 11:34:00')
        with self.assertRaises(InvalidTimeError):
            DayTime(0, 0)

    def test_ordering_agrees_with_absolute_seconds(self):
        moments = [DayTime(d, encode_time(h, m, 0)) for d in (1, 2, 3) for h in (0, 9, 23) for m in (0, 59)]
        for a in moments:
            for b in moments:
                self.assertEqual(a < b, a.absolute_seconds() < b.absolute_seconds())

    def test_seconds_between(self):
        a = DayTime(1, 100000)
        self.assertEqual(seconds_between(a, a), 0)
        self.assertEqual(seconds_between(a, DayTime(1, 100005)), 5)
        self.assertEqual(seconds_between(DayTime(1, 235959), DayTime(2, 1)), 2)
        self.assertEqual(seconds_between(DayTime(2, 1), DayTime(1, 235959)), 2)
        with self.assertRaises(InvalidTimeError):
            seconds_between(a, a, day_length_s=0)

    def test_interval_never_crosses_a_day(self):
        with self.assertRaises(InvalidTimeError):
            TimeInterval(DayTime(1, 235950), DayTime(2, 10))
        with self.assertRaises(InvalidTimeError):
            TimeInterval.on_day(1, 120000, 110000)

    def test_find_timestamps(self):
        found = find_timestamps('Seen at D2 15:50:21, again at 16:00:00 and 99:99:99', default_day=3)
        self.assertEqual(found, [DayTime(2, 155021), DayTime(3, 160000)])
        self.assertEqual(find_timestamps('at 16:00:00'), [])


class EnumTests(SimpleTestCase):
    def test_parse_print_identity(self):
        for member in EntityType:
            self.assertIs(EntityType.parse(str(member)), member)
        for member in RelationType:
            self.assertIs(RelationType.parse(str(member)), member)
        self.assertIs(RelationType.parse('talks-to'), RelationType.TALKS_TO)

    def test_rejects_unknown_values(self):
        with self.assertRaises(InvalidEnumError):
            EntityType.parse('Animal')
        with self.assertRaises(InvalidEnumError):
            RelationType.parse('LIKES')
        with self.assertRaises(InvalidEnumError):
            ToolName.parse('web')

    def test_tool_aliases(self):
        self.assertIs(ToolName.parse('EG'), ToolName.ENTITY_GRAPH)
        self.assertIs(ToolName.parse('F'), ToolName.VISUAL)
        self.assertIs(ToolName.parse('T'), ToolName.AUDIO)

    def test_entity_ids(self):
        ref = EntityRef('  Jake ', 'person')
        self.assertEqual(ref.key, 'jake')
        self.assertIs(ref.etype, EntityType.PERSON)
        with self.assertRaises(InvalidEnumError):
            EntityRef('   ', EntityType.OBJECT)
        with self.assertRaises(InvalidEnumError):
            EntityRef('42', EntityType.OBJECT)
