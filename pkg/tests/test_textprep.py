import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refrank.corpus import PaperRecord, TalkRecord
from refrank.errors import DataError, MissingField
from refrank.textprep import EmptyInput, chunk, parse_template, render_text, tokenize


def test_render_query_template():
    talk = TalkRecord(id="t", title="A", year=2022, transcript="t t")
    assert render_text(talk, ("title", "year", "transcript"), ". ") == "A. 2022. t t"


def test_render_transcript_only_is_identity():
    talk = TalkRecord(id="t", title="A", year=2022, transcript="the raw words")
    assert render_text(talk, ("transcript",)) == "the raw words"


def test_render_key_template():
    paper = PaperRecord(id="p", title="title", abstract="abstract", year=2020)
    assert render_text(paper, ("abstract", "title", "year"), ". ") == "abstract. title. 2020"


def test_render_missing_field():
    talk = TalkRecord(id="t", title="A", year=2022, transcript="x")
    with pytest.raises(MissingField):
        render_text(talk, ("abstract",))


def test_render_injective_when_separator_absent():
    # fields recoverable by splitting on the separator, hence injective
    talk = TalkRecord(id="t", title="one two", year=2021, transcript="three four")
    text = render_text(talk, ("title", "year", "transcript"), " | ")
    assert text.split(" | ") == ["one two", "2021", "three four"]


def test_parse_template():
    assert parse_template("title+year+transcript") == ("title", "year", "transcript")
    assert parse_template("Abstract + Title + Year") == ("abstract", "title", "year")
    with pytest.raises(DataError):
        parse_template("title+title")
    with pytest.raises(DataError):
        parse_template("bogus")


def test_tokenize():
    assert tokenize("A b  C") == ["a", "b", "c"]
    assert tokenize("") == []
    assert tokenize("x, y.") == ["x,", "y."]


def test_chunk_basic_lengths():
    cs = chunk([f"w{i}" for i in range(1200)], 512, 0)
    assert [len(c) for c in cs.chunks] == [512, 512, 176]


def test_chunk_short_input_single():
    cs = chunk([f"w{i}" for i in range(100)], 512)
    assert len(cs) == 1 and len(cs.chunks[0]) == 100


def test_chunk_with_overlap_offsets():
    # oracle: reconstruct the source by dropping `overlap` head tokens of
    # each later chunk; offsets/lengths frozen from the stride arithmetic
    tokens = [f"w{i}" for i in range(1000)]
    cs = chunk(tokens, 512, 128)
    assert [len(c) for c in cs.chunks] == [512, 512, 232]
    assert cs.chunks[0][0] == "w0"
    assert cs.chunks[1][0] == "w384"
    assert cs.chunks[2][0] == "w768"
    assert cs.flatten() == tokens


def test_chunk_empty_input():
    with pytest.raises(EmptyInput):
        chunk([], 512)


def test_chunk_bad_params():
    with pytest.raises(DataError):
        chunk(["a"], 0)
    with pytest.raises(DataError):
        chunk(["a"], 4, 4)


@given(
    n=st.integers(min_value=1, max_value=2000),
    size=st.integers(min_value=1, max_value=600),
    overlap_frac=st.floats(min_value=0.0, max_value=0.99),
)
@settings(max_examples=200, deadline=None)
def test_chunk_flatten_round_trip(n, size, overlap_frac):
    overlap = int(overlap_frac * size)
    tokens = [f"w{i}" for i in range(n)]
    cs = chunk(tokens, size, overlap)
    assert cs.flatten() == tokens
    assert all(len(c) == size for c in cs.chunks[:-1])
    assert 1 <= len(cs.chunks[-1]) <= size


@given(st.lists(st.text(alphabet=st.characters(blacklist_categories=("Zs", "Cc")), min_size=1), max_size=30))
@settings(max_examples=100, deadline=None)
def test_tokenize_idempotent_under_rejoin(words):
    tokens = tokenize(" ".join(words))
    assert tokenize(" ".join(tokens)) == tokens
