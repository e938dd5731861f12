import pytest

from metatasks.arff import ArffParseError, parse_arff

SAMPLE = rb"""% comment
@RELATION 'weather data'
@ATTRIBUTE outlook {sunny, overcast, 'light rain'}
@ATTRIBUTE temperature REAL
@ATTRIBUTE note string
@ATTRIBUTE play {yes,no}

@DATA
sunny,85,'it\'s hot',no
'light rain',?,"a, b",yes
overcast,64.5,?,yes
"""


def test_parse_sample():
    arff = parse_arff(SAMPLE)
    assert arff.relation == "weather data"
    assert arff.names == ["outlook", "temperature", "note", "play"]
    assert arff.attributes[0].values == ("sunny", "overcast", "light rain")
    assert arff.rows[0] == ["sunny", 85.0, "it's hot", "no"]
    assert arff.rows[1] == ["light rain", None, "a, b", "yes"]
    assert arff.column("temperature") == [85.0, None, 64.5]


def test_quoted_question_mark_is_a_value():
    arff = parse_arff(b"@relation r\n@attribute s string\n@data\n'?'\n?\n")
    assert arff.column("s") == ["?", None]


@pytest.mark.parametrize("text, fragment", [
    (b"@relation r\n@attribute a numeric\n@data\n1,2\n", "2 values"),
    (b"@relation r\n@attribute a numeric\n@data\nx\n", "non-numeric"),
    (b"@relation r\n@attribute a {p,q}\n@data\nz\n", "not declared"),
    (b"@relation r\n@attribute a date\n@data\n", "unsupported attribute type"),
    (b"@relation r\n@attribute a numeric\n@data\n{0 1}\n", "sparse"),
    (b"@relation r\n@attribute a numeric\n", "no @data"),
    (b"@relation r\n@attribute s string\n@data\n'open\n", "unterminated"),
])
def test_malformed_files_report_byte_offset(text, fragment):
    with pytest.raises(ArffParseError) as e:
        parse_arff(text)
    assert fragment in str(e.value)
    assert e.value.offset is not None


def test_offset_points_at_bad_line():
    text = b"@relation r\n@attribute a numeric\n@data\n1\n2\nbad\n"
    with pytest.raises(ArffParseError) as e:
        parse_arff(text)
    assert e.value.offset == text.index(b"bad")
