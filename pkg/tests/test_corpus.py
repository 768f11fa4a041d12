import json

import pytest
from hypothesis import given, strategies as st

from zonescore import corpus
from zonescore.corpus import ChapterFile, Document, GeoMatchTable


def chapter(text, muni="Springfield", cid="ch01"):
    return ChapterFile(muni, cid, text)


def test_keyword_in_header_any_case_is_retained():
    ch = chapter("Chapter 14\nCHAPTER 14 - ZONING\nbody")
    assert corpus.filter_zoning_chapters([ch]) == [ch]


def test_keyword_on_sixth_line_is_excluded():
    text = "\n".join(["Chapter 9", "Title", "a", "b", "c", "zoning rules", "more"])
    assert corpus.filter_zoning_chapters([chapter(text)]) == []


def test_streets_title_is_retained():
    ch = chapter("Streets, Sidewalks, and Public Property\nbody text")
    assert corpus.filter_zoning_chapters([ch]) == [ch]


def test_crlf_line_endings_count_lines_the_same_way():
    text = "\r\n".join(["a", "b", "c", "d", "e", "Zoning"])
    assert corpus.filter_zoning_chapters([chapter(text)]) == []
    assert corpus.filter_zoning_chapters([chapter(text.replace("e\r\n", "Zoning\r\n"))])


def test_empty_keyword_list_rejected():
    with pytest.raises(ValueError):
        corpus.filter_zoning_chapters([chapter("zoning")], keywords=["  "])


def test_assemble_groups_chapters_per_municipality():
    chs = [chapter("zoning a", cid="ch03"), chapter("zoning b", cid="ch01"), chapter("zoning c", cid="ch02"),
           chapter("zoning d", muni="Shelbyville")]
    docs = corpus.assemble_documents(chs)
    assert [d.municipality_id for d in docs] == ["Shelbyville", "Springfield"]
    spring = docs[1]
    assert spring.chapter_ids == ["ch01", "ch02", "ch03"]
    assert spring.text == "zoning b\nzoning c\nzoning a"


def test_no_chapters_no_documents():
    assert corpus.assemble_documents([]) == []


def test_assemble_is_deterministic():
    chs = [chapter("zoning a", cid="ch02"), chapter("zoning b", cid="ch01")]
    a = [json.dumps(d.to_dict(), sort_keys=True) for d in corpus.assemble_documents(chs)]
    b = [json.dumps(d.to_dict(), sort_keys=True) for d in corpus.assemble_documents(list(reversed(chs)))]
    assert a == b


def test_duplicate_chapter_ids_rejected():
    with pytest.raises(ValueError):
        corpus.assemble_documents([chapter("zoning", cid="x"), chapter("zoning", cid="x")])


@pytest.fixture
def table():
    return GeoMatchTable([
        ("Springfield", "place", "P1"),
        ("Springfield", "county_subdivision", "CS1"),
        ("Orange County", "county", "C1"),
        ("Orange County", "place", "P9"),
        ("Lakeside", "county_subdivision", "CS2"),
        ("Lakeside", "county", "C2"),
    ])


def test_place_beats_county_subdivision(table):
    assert corpus.match_geography("Springfield", table) == ("P1", "place")


def test_explicit_county_prefers_county(table):
    assert corpus.match_geography("Orange County", table) == ("C1", "county")


def test_subdivision_beats_county_without_the_word(table):
    assert corpus.match_geography("lakeside", table) == ("CS2", "county_subdivision")


def test_unmatched_is_none(table):
    assert corpus.match_geography("Nowhere", table) is None


def test_geo_table_rejects_duplicates_and_unknown_types():
    with pytest.raises(ValueError):
        GeoMatchTable([("A", "place", "1"), ("a", "place", "2")])
    with pytest.raises(ValueError):
        GeoMatchTable([("A", "city", "1")])


def test_ingest_reads_directory_layout(tmp_path):
    (tmp_path / "Spring_field").mkdir()
    (tmp_path / "Spring_field" / "ch01.txt").write_text("ZONING\nrules", encoding="utf-8")
    (tmp_path / "Spring_field" / "ch02.txt").write_text("TRAFFIC\nnot relevant", encoding="utf-8")
    (tmp_path / "Spring_field" / "ch03.txt").write_bytes(b"Land use \xff\nbody")
    table = GeoMatchTable([("Spring field", "place", "0001")])
    docs = corpus.ingest(tmp_path, table)
    assert len(docs) == 1
    d = docs[0]
    assert (d.place_id, d.match_level, d.chapter_ids) == ("0001", "place", ["ch01", "ch03"])
    assert "�" in d.text


def test_document_round_trip():
    d = Document("1", "Town", "text", ["a"], "place", "Town")
    assert Document.from_dict(json.loads(json.dumps(d.to_dict()))) == d


def test_corpus_summary_hand_arithmetic():
    docs = [Document(str(i), f"T{i}", "x", ["c"], "place", f"T{i}") for i in range(4)]
    stats = {"0": (1, 10), "1": (1, 10), "2": (1, 20), "3": (2, 40)}
    rows = {r.statistic: r for r in corpus.corpus_summary(docs, stats)}
    assert [r for r in rows] == list(corpus.CORPUS_STATISTICS)
    tokens = rows["Total Tokens per Document"]
    assert tokens.mean == 20 and tokens.median == 15 and tokens.count == 4


def test_corpus_summary_single_doc_flags_std():
    docs = [Document("1", "T", "x", ["c"], "place", "T")]
    row = corpus.corpus_summary(docs, {"1": (1, 7)})[0]
    assert row.std == 0.0 and row.std_defined is False


def test_corpus_summary_empty_raises():
    with pytest.raises(ValueError, match="empty corpus"):
        corpus.corpus_summary([], {})


lines = st.lists(st.text(alphabet="abcdeginorzLNGZ \t", max_size=12), min_size=1, max_size=8)


@given(st.lists(lines.map("\n".join), max_size=6))
def test_filter_is_idempotent(texts):
    chs = [chapter(t, cid=f"c{i}") for i, t in enumerate(texts)]
    once = corpus.filter_zoning_chapters(chs)
    assert corpus.filter_zoning_chapters(once) == once


@given(st.lists(lines.map("\n".join), max_size=6))
def test_filter_invariant_under_case_changes(texts):
    chs = [chapter(t, cid=f"c{i}") for i, t in enumerate(texts)]
    upper = [chapter(t.upper(), cid=f"c{i}") for i, t in enumerate(texts)]
    kept = {c.chapter_id for c in corpus.filter_zoning_chapters(chs)}
    assert kept == {c.chapter_id for c in corpus.filter_zoning_chapters(upper)}


@given(st.lists(st.tuples(st.sampled_from("ABC"), st.integers(0, 20), st.booleans()), max_size=20, unique_by=lambda t: (t[0], t[1])))
def test_chapter_ids_subset_of_inputs(spec):
    chs = [ChapterFile(m, f"ch{c:02d}", "zoning" if z else "other") for m, c, z in spec]
    for d in corpus.assemble_documents(corpus.filter_zoning_chapters(chs)):
        assert set(d.chapter_ids) <= {c.chapter_id for c in chs if c.municipality_id == d.municipality_id}
