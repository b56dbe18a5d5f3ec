import datetime as dt
import json
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from distrec.corpus import (
    ClinicalNote,
    ContextCue,
    CueFileError,
    IngestError,
    Sentence,
    clean_text,
    drop_cued_sentences,
    filter_notes,
    has_sentence_cue,
    ingest,
    load_cues,
    negex_scope,
    parse_cues,
    read_notes_jsonl,
    segment,
    tokenize,
    write_notes_jsonl,
)

from oracles import negex_reference

CUES = load_cues()


def row(pid="P1", note_id=None, date="2012-03-04", text="breast exam normal", note_type="progress"):
    out = {"patient_id": pid, "date": date, "text": text, "note_type": note_type}
    if note_id:
        out["note_id"] = note_id
    return out


def note(text, note_id="N1", pid="P1", date=dt.date(2012, 1, 1)):
    return ClinicalNote(pid, note_id, "progress", date, text)


def sent(text):
    return Sentence("N", 0, text, tuple(tokenize(text)))


# -- ingest ------------------------------------------------------------------

def test_identical_texts_collapse_to_earliest():
    corpus = ingest([
        row(note_id="late", date="2013-01-01", text="breast  cancer\nfollow up"),
        row(note_id="early", date="2012-01-01", text="breast cancer follow up"),
    ])
    assert [n.note_id for n in corpus.notes] == ["early"]
    assert corpus.counts["duplicates"] == 1


def test_same_text_different_patients_kept():
    corpus = ingest([row("P1", "a"), row("P2", "b")])
    assert len(corpus) == 2


def test_empty_stream():
    corpus = ingest([])
    assert len(corpus) == 0 and corpus.rejects == 0


def test_missing_date_is_rejected():
    corpus = ingest([{"patient_id": "P1", "note_id": "x", "text": "breast"}])
    assert len(corpus) == 0 and corpus.rejects == 1


@pytest.mark.parametrize("bad", [
    {"date": "2012-01-01", "text": "breast"},
    {"patient_id": "P", "date": "2012-13-45", "text": "breast"},
    {"patient_id": "P", "date": "2012-01-01"},
    None,
])
def test_malformed_rows_rejected(bad):
    corpus = ingest([bad, row(note_id="ok")])
    assert corpus.rejects == 1 and len(corpus) == 1


def test_reused_note_id_rejected():
    corpus = ingest([row(note_id="n", text="breast a"), row(note_id="n", text="breast b")])
    assert corpus.rejects == 1


def test_unknown_note_type_becomes_other():
    assert ingest([row(note_type="memo")]).notes[0].note_type == "other"


def test_unreadable_stream(tmp_path):
    with pytest.raises(IngestError):
        list(read_notes_jsonl(tmp_path / "missing.jsonl"))


def test_bad_json_line_counts_as_reject(tmp_path):
    p = tmp_path / "n.jsonl"
    p.write_text(json.dumps(row(note_id="a")) + "\n{not json\n[1, 2]\n")
    corpus = ingest(read_notes_jsonl(p))
    assert len(corpus) == 1 and corpus.rejects == 2


notes_strategy = st.lists(
    st.builds(
        row,
        pid=st.sampled_from(["P1", "P2", "P3"]),
        note_id=st.none(),
        date=st.dates(dt.date(2005, 1, 1), dt.date(2015, 1, 1)).map(dt.date.isoformat),
        text=st.sampled_from(["breast a", "breast  a", "b c", "breast\tc", "x"]),
    ),
    max_size=12,
)


@given(notes_strategy)
def test_ingest_roundtrip_is_idempotent(rows):
    first = ingest(rows)
    again = ingest(n.to_json() for n in first.notes)
    assert again.notes == first.notes
    assert again.rejects == 0 and again.counts["duplicates"] == 0


@given(notes_strategy, st.data())
def test_appending_exact_duplicate_never_grows(rows, data):
    first = ingest(rows)
    if not first.notes:
        return
    dup = data.draw(st.sampled_from(first.notes)).to_json()
    dup["note_id"] = "dup-copy"
    assert len(ingest([n.to_json() for n in first.notes] + [dup])) == len(first)


def test_jsonl_roundtrip(tmp_path):
    corpus = ingest([row(note_id="a"), row(note_id="b", text="breast other", date="2011-02-03")])
    p = tmp_path / "notes.jsonl"
    write_notes_jsonl(corpus.notes, p)
    assert ingest(read_notes_jsonl(p)).notes == corpus.notes


# -- filter ------------------------------------------------------------------

def test_filter_rules():
    diag = {"P1": dt.date(2010, 1, 1)}
    corpus = ingest([
        row(note_id="before", date="2009-12-31"),
        row(note_id="same_day", date="2010-01-01", text="breast same day"),
        row(note_id="ok", date="2010-01-02", text="Breast follow up"),
        row(note_id="late", date="2016-05-02", text="breast late"),
        row(note_id="censor_day", date="2016-05-01", text="breast on censor day"),
        row(note_id="nobreast", date="2011-01-01", text="lung nodule"),
        row("P9", "unknown", text="breast unknown patient"),
    ])
    out = filter_notes(corpus, diag, dt.date(2016, 5, 1))
    assert sorted(n.note_id for n in out.notes) == ["censor_day", "ok"]
    assert out.counts["before_diagnosis"] == 2
    assert out.counts["after_censor"] == 1
    assert out.counts["no_breast_mention"] == 1
    assert out.counts["no_diagnosis_date"] == 1


def test_breast_is_a_substring_match():
    corpus = ingest([row(note_id="a", text="BREASTFEEDING history")])
    assert len(filter_notes(corpus, {"P1": dt.date(2000, 1, 1)}, dt.date(2020, 1, 1))) == 1


# -- segmentation ------------------------------------------------------------

def test_segment_two_sentences():
    out = segment(note("Metastatic disease. No change."))
    assert [s.tokens for s in out] == [("metastatic", "disease"), ("no", "change")]
    assert [s.index for s in out] == [0, 1]


def test_segment_strips_non_ascii():
    out = segment(note("résumé ✓ bone metastases"))
    assert len(out) == 1
    assert out[0].tokens == ("rsum", "bone", "metastases")


def test_segment_empty():
    assert segment(note("")) == []
    assert segment(note("✓✓ ... \n\n")) == []


def test_segment_newlines_and_marks():
    out = segment(note("Bone scan done? Yes!\nPlan: follow up\n\nCT 3.5 cm"))
    assert [s.tokens for s in out] == [("bone", "scan", "done"), ("yes",), ("plan", "follow", "up"),
                                       ("ct", "3", "5", "cm")]


printable_text = st.text(
    alphabet=st.sampled_from(list("abcXYZ019 .?!\n\t,;:-é✓")), max_size=80
)


@given(printable_text)
def test_segmentation_covers_every_alphanumeric_once(text):
    sentences = segment(note(text))
    cleaned = "".join(clean_text(line) for line in text.split("\n"))
    assert "".join("".join(s.tokens) for s in sentences) == "".join(re.findall(r"[a-z0-9]", cleaned.lower()))
    assert [s.index for s in sentences] == list(range(len(sentences)))
    for s in sentences:
        assert s.tokens
        assert all(0x20 <= ord(ch) <= 0x7E for ch in s.text)


# -- cues --------------------------------------------------------------------

def test_default_cues_cover_listed_examples():
    phrases = {(c.phrase, c.category) for c in CUES}
    for cue in ["no", "rule out", "deny", "unremarkable"]:
        assert (tuple(cue.split()), "negation_sentence") in phrases
    for cue in ["risk", "concern", "worry", "evaluation"]:
        assert (tuple(cue.split()), "uncertainty_sentence") in phrases


@pytest.mark.parametrize("text,dropped", [
    ("patient denies bone pain", True),
    ("worry about recurrence", True),
    ("rule out metastasis", True),
    ("bone metastases present", False),
    ("known metastatic disease", False),
    ("nothing unremarkable", True),
])
def test_sentence_cues(text, dropped):
    kept, n = drop_cued_sentences([sent(text)], CUES)
    assert n == int(dropped)
    assert len(kept) == int(not dropped)


def test_cue_match_is_on_whole_tokens():
    assert not has_sentence_cue(sent("notable risky nodes"), CUES)


def test_empty_cue_list_drops_nothing():
    kept, n = drop_cued_sentences([sent("no evidence"), sent("deny")], [])
    assert n == 0 and len(kept) == 2


sentence_tokens = st.lists(
    st.sampled_from(["no", "rule", "out", "deny", "denies", "bone", "pain", "risk", "of", "worried", "mets"]),
    min_size=1, max_size=10,
)


@given(st.lists(sentence_tokens, max_size=6))
def test_cue_filter_soundness(token_lists):
    sentences = [Sentence("N", i, " ".join(t), tuple(t)) for i, t in enumerate(token_lists)]
    kept, n = drop_cued_sentences(sentences, CUES)
    assert all(not has_sentence_cue(s, CUES) for s in kept)
    dropped = [s for s in sentences if s not in kept]
    assert len(dropped) == n
    assert all(has_sentence_cue(s, CUES) for s in dropped)


def test_parse_cues_inflections_and_errors():
    cues = parse_cues(["# comment", "", "deny|negation_sentence|denies;denied", "but|negex_terminator"])
    assert [c.phrase for c in cues] == [("deny",), ("denies",), ("denied",), ("but",)]
    with pytest.raises(CueFileError, match=":1:"):
        parse_cues(["x|not_a_category"])
    with pytest.raises(CueFileError):
        parse_cues(["onlyonefield"])
    with pytest.raises(ValueError):
        ContextCue((), "negation_sentence")


def test_load_cues_from_file(tmp_path):
    p = tmp_path / "cues.txt"
    p.write_text("worry|uncertainty_sentence|worried\n")
    assert len(load_cues(p)) == 2
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert load_cues(empty) == []


# -- negex -------------------------------------------------------------------

def masked(text):
    toks = tokenize(text)
    return [t for t, m in zip(toks, negex_scope(toks, CUES)) if m]


def test_negex_pre_trigger():
    assert masked("no evidence of metastatic disease") == ["evidence", "of", "metastatic", "disease"]


def test_negex_scope_starts_after_trigger():
    assert masked("metastatic disease but no fever") == ["fever"]


def test_negex_terminator():
    assert masked("no pain, however metastases noted") == ["pain"]


def test_negex_window_is_five_tokens():
    assert masked("no a b c d e f") == ["a", "b", "c", "d", "e"]


def test_negex_post_trigger():
    assert masked("brain lesion was ruled out") == ["brain", "lesion"]


def test_negex_mask_on_sentence_object():
    s = sent("without bone involvement")
    assert negex_scope(s, CUES) == [False, True, True]


@st.composite
def negex_case(draw):
    vocab = ["no", "not", "without", "but", "however", "unlikely", "bone", "pain", "mets", "of", "evidence"]
    return draw(st.lists(st.sampled_from(vocab), max_size=15))


@given(negex_case())
def test_negex_matches_reference(tokens):
    pre = [c.phrase for c in CUES if c.category == "negex_trigger_pre"]
    post = [c.phrase for c in CUES if c.category == "negex_trigger_post"]
    term = [c.phrase for c in CUES if c.category == "negex_terminator"]
    got = negex_scope(tokens, CUES)
    assert len(got) == len(tokens)
    assert got == negex_reference(tokens, pre, post, term)
    assert negex_scope(tokens, CUES) == got
