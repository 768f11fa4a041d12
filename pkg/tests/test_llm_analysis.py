import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.feature_extraction.text import TfidfVectorizer

from zonescore import llm_analysis as la
from zonescore.corpus import Document
from zonescore.similarity import FbcScore
from zonescore.textprep import SETBACK_TERMS


class Canned:
    def __init__(self, text="canned summary"):
        self.text = text
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return self.text


def test_overview_prompt_prefix():
    p = la.render_prompt(la.OVERVIEW, SETBACK_TERMS, "...")
    assert p.startswith("Provide a brief overview of the main points related to")
    assert p.endswith("in the following text: ...")


def test_vintage_prompt_mentions_separator():
    p = la.render_prompt(la.VINTAGE, (), "Ordinance adopted 1990")
    assert 'Separate each column value with a "$" symbol' in p


def test_empty_text_rejected():
    with pytest.raises(la.PromptError):
        la.render_prompt(la.OVERVIEW, ["lot"], "   ")


def test_inserted_text_not_rescanned():
    p = la.render_prompt(la.OVERVIEW, ["lot"], "literal {terms} here")
    assert "literal {terms} here" in p


def test_prompt_parts_split_long_text():
    text = " ".join(f"w{i}" for i in range(300))
    parts = la.render_prompt_parts(la.FREQUENT_THEMES, ["lot"], text, max_words=100)
    assert len(parts) > 1 and all(len(p.split()) <= 100 for p in parts)
    assert parts[0].split("text: ", 1)[1].startswith(f"[part 1 of {len(parts)}]")
    body = [w for p in parts for w in p.split("text: ", 1)[1].split()[4:]]
    assert body == text.split()


@pytest.mark.parametrize("response,year,bucket", [
    ("1998 $ 1995 $ 2004 $ 1990", 1998, "1996-2008"),
    ("N/A $ 1995 $ N/A $ 1990", 1995, "1982-1996"),
    ("N/A $ N/A $ N/A $ 1985", 1985, "1982-1996"),
    ("N/A $ N/A $ N/A $ N/A", None, "missing"),
    ("| Adopted | Published |\n| 2016 $ N/A $ N/A $ 1950 |", 2016, "2016-2021"),
])
def test_vintage_response_parsing(response, year, bucket):
    rec = la.parse_vintage_response("p", response)
    assert rec.vintage_year == year and rec.vintage_bucket == bucket


def test_unparseable_response_is_missing():
    rec = la.parse_vintage_response("p", "I could not find any dates.")
    assert not rec.parsed and rec.vintage_bucket == "missing"


@pytest.mark.parametrize("year,bucket", [(1981, "missing"), (1982, "1982-1996"), (1995, "1982-1996"), (1996, "1996-2008"),
                                         (2008, "2008-2016"), (2015, "2008-2016"), (2016, "2016-2021"), (2021, "2016-2021"),
                                         (2022, "missing"), (None, "missing")])
def test_bucket_edges(year, bucket):
    assert la.vintage_bucket(year) == bucket


@given(st.integers(1982, 2021))
def test_bucket_total_on_range(year):
    assert la.vintage_bucket(year) != la.MISSING


@given(st.integers(1800, 2100), st.one_of(st.none(), st.integers(1800, 2100)), st.one_of(st.none(), st.integers(1800, 2100)))
def test_adopted_year_always_wins(adopted, published, earliest):
    fmt = lambda y: "N/A" if y is None else str(y)
    rec = la.parse_vintage_response("p", f"{adopted} $ {fmt(published)} $ N/A $ {fmt(earliest)}")
    assert rec.vintage_year == adopted


def test_extract_vintage_uses_first_500_raw_words():
    text = "Ordinance adopted March 3, 2009. " + " ".join(["word"] * 600) + " republished 2019"
    llm = la.CachedLlm(la.RuleBasedLlm())
    rec = la.extract_vintage(Document("p", "T", text, ["c"]), llm)
    assert rec.year_adopted == 2009 and rec.year_republished is None
    assert rec.vintage_bucket == "2008-2016"


def test_rule_based_vintage_row():
    out = la.RuleBasedLlm().complete(la.render_prompt(la.VINTAGE, (), "Code originally published 1997. Adopted in 2003."))
    assert out == "2003 $ 1997 $ N/A $ 1997"


def test_summarize_passes_through_stub():
    llm = Canned()
    out = la.summarize_themes(["The front setback is 20 feet."], SETBACK_TERMS, llm)
    assert out == "canned summary\ncanned summary"


def test_no_paragraphs_empty_summary_and_document_dropped():
    llm = Canned()
    assert la.summarize_themes([], SETBACK_TERMS, llm) == ""
    assert la.theme_summaries({"a": "Parking only."}, SETBACK_TERMS, llm) == {}
    assert llm.calls == 0


def test_warm_cache_means_zero_calls(tmp_path):
    paragraphs = ["Build-to line of 10 feet.", "Rear setback of 5 feet."]
    first = la.CachedLlm(Canned("A"), tmp_path)
    a = la.summarize_themes(paragraphs, SETBACK_TERMS, first)
    warm = la.CachedLlm(Canned("B"), tmp_path)
    b = la.summarize_themes(paragraphs, SETBACK_TERMS, warm)
    assert a == b and warm.network_calls == 0 and first.network_calls == 2
    assert len(list(tmp_path.glob("*.json"))) == 2


def test_cache_miss_without_client(tmp_path):
    with pytest.raises(la.LlmError):
        la.CachedLlm(None, tmp_path).ask("anything")


def test_http_client_protocol_and_retry(stub_service, tmp_path):
    stub_service.fail_next = 1
    client = la.HttpLlmClient(stub_service.url, backoff=0.01)
    llm = la.CachedLlm(client, tmp_path)
    prompt = la.render_prompt(la.VINTAGE, (), "Ordinance adopted 1999.")
    assert llm.complete(prompt) == "1999 $ N/A $ N/A $ 1999"
    assert client.calls == 2 and stub_service.prompts == [prompt]
    llm.complete(prompt)
    assert client.calls == 2


def test_http_client_gives_up(stub_service):
    stub_service.fail_next = 5
    with pytest.raises(la.LlmError):
        la.HttpLlmClient(stub_service.url, backoff=0.01).complete("hi")


# ---- TF-IDF


def test_tfidf_hand_example():
    tables = {t.group: t.scores() for t in la.tfidf_themes({"A": ["setback setback landscape"], "B": ["hazard"]}, stopwords=set())}
    idf = math.log(3 / 2) + 1
    assert 2 * idf == pytest.approx(2.8109, abs=1e-4)
    norm = math.hypot(2 * idf, idf)
    assert abs(tables["A"]["setback"] - 2 * idf / norm) < 1e-10
    assert abs(tables["A"]["landscape"] - idf / norm) < 1e-10
    assert abs(tables["B"]["hazard"] - 1.0) < 1e-10
    for scores in tables.values():
        assert abs(math.sqrt(sum(v * v for v in scores.values())) - 1) < 1e-12


def test_term_in_every_group_has_unit_idf():
    tables = {t.group: t.scores() for t in la.tfidf_themes({"A": ["lot"], "B": ["lot"]}, stopwords=set())}
    assert tables["A"]["lot"] == pytest.approx(1.0)
    assert la.tfidf_themes({"A": ["lot"], "B": ["lot"]}, stopwords=set())[0].rows[0].distinctiveness == 0.0


def test_tfidf_matches_sklearn():
    rng = np.random.default_rng(4)
    vocab = ["setback", "landscape", "facade", "buffer", "height", "parking", "frontage", "hazard"]
    for _ in range(20):
        groups = {g: [" ".join(rng.choice(vocab, int(rng.integers(1, 30))))] for g in ("top", "bottom", "repo")}
        ours = {t.group: t.scores() for t in la.tfidf_themes(groups, stopwords=set())}
        vec = TfidfVectorizer(smooth_idf=True, norm="l2", token_pattern=r"[a-z]+")
        mat = vec.fit_transform([groups[g][0] for g in groups]).toarray()
        for row, g in zip(mat, groups):
            ref = {t: row[i] for t, i in vec.vocabulary_.items() if row[i] > 0}
            assert ours[g].keys() == ref.keys()
            assert all(abs(ours[g][t] - ref[t]) < 1e-10 for t in ref)


@given(st.lists(st.sampled_from(["lot", "yard", "facade", "height", "buffer"]), min_size=1, max_size=20),
       st.lists(st.sampled_from(["lot", "hazard", "flood", "sign"]), min_size=1, max_size=20))
def test_tfidf_properties(a, b):
    text_a = " ".join(a)
    base = {t.group: t for t in la.tfidf_themes({"A": [text_a], "B": [" ".join(b)]}, stopwords=set())}
    doubled = {t.group: t for t in la.tfidf_themes({"A": [text_a, text_a], "B": [" ".join(b)]}, stopwords=set())}
    for t in base.values():
        assert all(r.tfidf_score >= 0 for r in t.rows)
        assert abs(math.sqrt(sum(r.tfidf_score ** 2 for r in t.rows)) - 1) < 1e-12
    sa, da = base["A"].scores(), doubled["A"].scores()
    assert sa.keys() == da.keys() and all(abs(sa[k] - da[k]) < 1e-12 for k in sa)


def test_tfidf_needs_two_groups():
    with pytest.raises(ValueError):
        la.tfidf_themes({"A": ["lot"]})


def test_run_themes_is_seeded_and_deterministic():
    docs = {f"p{i}": f"The front setback is {i} feet with landscape buffers.\n\nParking." for i in range(12)}
    scores = [FbcScore(pid, 0.1 * i, None, i >= 9) for i, pid in enumerate(sorted(docs))]
    a = la.run_themes(docs, scores, None, SETBACK_TERMS, la.RuleBasedLlm(), seed=3, composite_size=2)
    b = la.run_themes(docs, scores, None, SETBACK_TERMS, la.RuleBasedLlm(), seed=3, composite_size=2)
    assert [(t.group, [(r.term, r.tfidf_score) for r in t.rows]) for t in a] == \
        [(t.group, [(r.term, r.tfidf_score) for r in t.rows]) for t in b]
    assert {t.group for t in a} == {"top_fbc", "bottom_fbc"}


def test_sample_groups_respect_classification():
    scores = [FbcScore(f"p{i}", i, None, i >= 8) for i in range(10)]
    g = la.sample_theme_groups(scores, 50, 3, seed=1)
    assert g["top_fbc"] == ["p8", "p9"]
    assert len(g["bottom_fbc"]) == 3 and all(int(p[1:]) < 8 for p in g["bottom_fbc"])
