import numpy as np
import pytest

from distrec import synth
from distrec.clinical import DOMAINS
from distrec.corpus import filter_notes, ingest, load_cues
from distrec.pipeline import build_cohort
from distrec.stats_eval import LearnerSettings, holdout_eval

LEX = synth.synth_lexicon()


@pytest.fixture(scope="module")
def default_spec():
    return synth.load_spec()


@pytest.fixture(scope="module")
def small(default_spec):
    spec = default_spec.replace(n=600, seed=3)
    return spec, synth.generate(spec, LEX)


def binary_marker_spec(p_dr, p_no, n=5000, seed=0):
    spec = synth.null_spec(n=n, seed=seed)
    spec.categorical["radiation"] = (("Yes", "No"), (p_dr, 1 - p_dr), (p_no, 1 - p_no))
    return spec


def test_default_spec_calibration(default_spec):
    cats = default_spec.categorical
    assert cats["nodal_positivity"][1][0] == 0.534 and cats["nodal_positivity"][2][0] == 0.245
    assert cats["deceased"][1][0] == 0.508 and cats["deceased"][2][0] == 0.033
    assert cats["radiation"][1][0] == 0.269 and cats["radiation"][2][0] == 0.008
    assert cats["targeted_therapy"][1][0] == 0.228 and cats["targeted_therapy"][2][0] == 0.009
    assert cats["histology"][1][:3] == (0.902, 0.016, 0.078)
    assert cats["histology"][2][:3] == (0.752, 0.153, 0.078)
    assert cats["grade"][1][:3] == (0.083, 0.378, 0.523)
    assert cats["grade"][2][:3] == (0.245, 0.432, 0.313)
    assert default_spec.prevalence == 0.099
    assert set(default_spec.concepts) <= {e.cui for e in LEX if e.in_custom_dictionary}


def test_spec_text_roundtrip(default_spec):
    again = synth.parse_spec(default_spec.to_ini())
    assert again == default_spec
    assert again.fingerprint == default_spec.fingerprint


@pytest.mark.parametrize("change,match", [
    ({"prevalence": 1.0}, "prevalence"),
    ({"n": -1}, "cohort.n"),
    ({"duplicate_rate": 2.0}, "duplicate_rate"),
])
def test_spec_validation(default_spec, change, match):
    with pytest.raises(synth.SpecError, match=match):
        default_spec.replace(**change).validate()


def test_invalid_simplex_rejected(default_spec):
    text = default_spec.to_ini().replace("recurrence = 0.534, 0.416, 0.05", "recurrence = 0.6, 0.416, 0.05")
    spec = synth.parse_spec(text)
    with pytest.raises(synth.SpecError, match="nodal_positivity"):
        synth.generate(spec.replace(n=1), LEX)


def test_negative_rate_and_unknown_category(default_spec):
    bad = default_spec.replace()
    bad.concepts["C0153690"] = (-1.0, 0.0)
    with pytest.raises(synth.SpecError, match="C0153690"):
        bad.validate(LEX)
    bad = default_spec.replace()
    bad.categorical["grade"] = (("Grade1", "Grade9"), (0.5, 0.5), (0.5, 0.5))
    with pytest.raises(synth.SpecError, match="grade"):
        bad.validate()


def test_unknown_section_rejected():
    with pytest.raises(synth.SpecError):
        synth.parse_spec("[bogus]\nx = 1\n")


def test_positive_count_matches_binomial(default_spec):
    spec = default_spec.replace(n=4904, seed=11)
    cohort = synth.generate(spec, LEX)
    mean = 4904 * 0.099
    sd = np.sqrt(4904 * 0.099 * 0.901)
    assert abs(int(np.sum(cohort.labels > 0)) - mean) < 3 * sd


def test_seed_determinism(tmp_path, default_spec):
    spec = default_spec.replace(n=200, seed=5)
    for d in ("a", "b"):
        c = synth.generate(spec, LEX)
        synth.write_cohort(c, tmp_path / d, spec, synth.bayes_oracle(spec, c, LEX), LEX)
    for name in ("patients.csv", "notes.jsonl", "labels.csv", "oracle.json", "lexicon.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_patient_streams_are_independent_of_cohort_size(default_spec):
    a = synth.generate(default_spec.replace(n=50, seed=2), LEX)
    b = synth.generate(default_spec.replace(n=80, seed=2), LEX)
    assert a.records == b.records[:50]


def test_signal_free_generator():
    spec = synth.null_spec(n=5000, seed=1)
    cohort = synth.generate(spec, LEX)
    result = synth.bayes_oracle(spec, cohort, LEX)
    assert 0.48 <= result.bayes_auc <= 0.52
    zero = synth.null_spec(n=500, seed=1)
    zero.concepts = {c: (0.0, 0.0) for c in zero.concepts}
    cohort = synth.generate(zero, LEX)
    assert all(not t for t in cohort.truth_counts)
    assert np.ptp(synth.bayes_oracle(zero, cohort, LEX).scores) == 0


def test_deterministic_marker_oracle():
    spec = binary_marker_spec(1.0, 0.0, n=2000)
    cohort = synth.generate(spec, LEX)
    assert synth.bayes_oracle(spec, cohort, LEX).bayes_auc == 1.0


def test_single_binary_marker_oracle():
    # P(X_D > X_N) + P(tie)/2 = 0.5*0.9 + (0.5*0.1 + 0.5*0.9)/2 = 0.70
    exact = 0.5 * 0.9 + 0.5 * (0.5 * 0.1 + 0.5 * 0.9)
    assert exact == pytest.approx(0.70)
    spec = binary_marker_spec(0.5, 0.1)
    cohort = synth.generate(spec, LEX)
    assert synth.bayes_oracle(spec, cohort, LEX).bayes_auc == pytest.approx(0.70, abs=0.02)


def test_oracle_rejects_foreign_cohort(small, default_spec):
    _, cohort = small
    with pytest.raises(synth.SpecError):
        synth.bayes_oracle(default_spec, cohort, LEX)


def test_empty_cohort_oracle_undefined(default_spec):
    spec = default_spec.replace(n=0)
    result = synth.bayes_oracle(spec, synth.generate(spec, LEX), LEX)
    assert result.bayes_auc is None and result.to_json()["undefined"]


def test_class_conditional_frequencies_converge(default_spec):
    spec = default_spec.replace(n=5000, seed=21)
    cohort = synth.generate(spec, LEX)
    labels = cohort.labels
    for var in list(DOMAINS) + ["insurance"]:
        cats, p_dr, p_no = spec.categorical[var]
        for cls, probs in ((1, p_dr), (-1, p_no)):
            rows = [r for r, y in zip(cohort.records, labels) if y == cls]
            n = len(rows)
            for c, p in zip(cats, probs):
                freq = sum(1 for r in rows if getattr(r, var) == c) / n
                se = max(np.sqrt(p * (1 - p) / n), 1e-12)
                assert abs(freq - p) <= 3 * se + (1.0 / n if p in (0.0, 1.0) else 0.0), (var, c, cls)


def test_notes_pass_filter_and_mention_breast(small):
    spec, cohort = small
    corpus = ingest(n.to_json() for n in cohort.notes)
    diag = {r.patient_id: r.diagnosis_date for r in cohort.records}
    kept = filter_notes(corpus, diag, spec.censor_date)
    assert len(kept) == len(corpus)
    assert all("breast" in n.text.lower() for n in cohort.notes)


def test_pipeline_recovers_true_concept_counts(small):
    spec, cohort = small
    corpus = ingest(n.to_json() for n in cohort.notes)
    built, report = build_cohort(corpus, cohort.records, LEX, load_cues(), spec.censor_date)
    assert report.sentences_cue_dropped > 0
    truth = dict(zip((r.patient_id for r in cohort.records), cohort.truth_counts))
    for pid, counts in zip(built.patient_ids, built.concept_counts):
        assert counts == truth[pid]


def test_removing_a_channel_does_not_help(default_spec):
    spec = default_spec.replace(n=5000, seed=8)
    base = synth.bayes_oracle(spec, synth.generate(spec, LEX), LEX).bayes_auc
    weaker = spec.replace()
    cats, p_dr, p_no = weaker.categorical["deceased"]
    weaker.categorical["deceased"] = (cats, p_no, p_no)
    reduced = synth.bayes_oracle(weaker, synth.generate(weaker, LEX), LEX).bayes_auc
    assert reduced <= base + 0.01


def test_channel_rates_merge_shared_phrases(default_spec):
    rates = synth.channel_rates(default_spec, LEX)
    assert "C1522484" not in rates and "C2939420" not in rates
    lp = default_spec.concepts["C0036525"][0] + default_spec.concepts["C1522484"][0]
    assert rates["C0036525"][0] == pytest.approx(lp)


def test_trained_model_does_not_beat_oracle(default_spec):
    cues = load_cues()
    train_spec = default_spec.replace(n=2000, seed=31)
    test_spec = default_spec.replace(n=2000, seed=32)
    tr, te = synth.generate(train_spec, LEX), synth.generate(test_spec, LEX)
    bayes = synth.bayes_oracle(test_spec, te, LEX).bayes_auc
    a, _ = build_cohort(ingest(n.to_json() for n in tr.notes), tr.records, LEX, cues)
    b, _ = build_cohort(ingest(n.to_json() for n in te.notes), te.records, LEX, cues)
    value, _, _ = holdout_eval(a, b, "filtered_plus_clinical", LearnerSettings(max_epochs=300))
    assert value <= bayes + 0.02
