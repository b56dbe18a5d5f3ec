"""Synthetic labeled cohorts with a known generative model, and their Bayes-optimal scorer.

Each patient gets a label, class-conditional categorical clinical variables
and per-concept Poisson mention counts.  Mentions are written into notes via
fixed sentence templates.  Negated and uncertain mentions and neutral
distractor sentences are emitted at class-independent rates, so they carry no
signal and only hurt a pipeline that fails to filter them.

Because every log-likelihood-ratio term is linear in the one-hot clinical
encoding and in the concept counts, the Bayes scorer is itself a linear
function of the pipeline's features.
"""

from __future__ import annotations

import configparser
import datetime as dt
import hashlib
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import concept_tagger as ct
from .clinical import DOMAINS, DR, NO_DR, PatientRecord
from .corpus import NOTE_TYPES, ClinicalNote, tokenize
from .stats_eval import auc

CATEGORICAL = tuple(DOMAINS) + ("insurance",)

SIGNAL_TEMPLATES = (
    "Imaging consistent with {}.",
    "Findings of {} reviewed with patient.",
    "She has known {}.",
    "Oncology plan addresses {}.",
)
NEGATED_TEMPLATES = (
    "No evidence of {}.",
    "Scan negative for {}.",
    "Imaging without {}.",
)
UNCERTAIN_TEMPLATES = (
    "Concern for {}.",
    "Risk of {} discussed.",
    "Worried about {}.",
    "Evaluation for {} ordered.",
)
DISTRACTORS = (
    "Patient reports mild fatigue.",
    "Pain is well controlled.",
    "Liver function tests reviewed.",
    "Lung fields clear on exam.",
    "Brain imaging ordered for headache.",
    "Discussed breast cancer survivorship care.",
    "CT scan of chest reviewed.",
    "Follow up in three months.",
    "Mammogram of the left breast scheduled.",
)
NOTE_HEADER = "Breast oncology follow up visit {}."

# Non-dictionary concepts appearing in distractor text.
DISTRACTOR_LEXICON = (
    ct.LexiconEntry("C0006142", "Malignant neoplasm of breast", (("breast", "cancer"),), False),
    ct.LexiconEntry("C0015672", "Fatigue", (("fatigue",),), False),
    ct.LexiconEntry("C0030193", "Pain", (("pain",),), False),
    ct.LexiconEntry("C0023884", "Liver", (("liver",),), False),
    ct.LexiconEntry("C0024109", "Lung", (("lung",),), False),
    ct.LexiconEntry("C0006104", "Brain", (("brain",),), False),
    ct.LexiconEntry("C0040405", "X-Ray Computed Tomography", (("ct", "scan"),), False),
)

FIRST_DIAGNOSIS = dt.date(2001, 1, 1)
LAST_DIAGNOSIS = dt.date(2014, 12, 31)


class SpecError(ValueError):
    pass


def synth_lexicon(base=None) -> list[ct.LexiconEntry]:
    """Default dictionary plus the distractor concepts."""
    base = list(ct.load_lexicon() if base is None else base)
    have = {e.cui for e in base}
    return base + [e for e in DISTRACTOR_LEXICON if e.cui not in have]


@dataclass
class GeneratorSpec:
    n: int = 5000
    prevalence: float = 0.099
    seed: int = 0
    censor_date: dt.date = dt.date(2016, 5, 1)
    age_mean: float = 58.0
    age_sd: float = 12.0
    # variable -> (categories, P(. | DR), P(. | no DR))
    categorical: dict[str, tuple[tuple[str, ...], tuple[float, ...], tuple[float, ...]]] = field(default_factory=dict)
    # cui -> (lambda DR, lambda no DR)
    concepts: dict[str, tuple[float, float]] = field(default_factory=dict)
    negated_rate: float = 0.0
    uncertainty_rate: float = 0.0
    distractor_rate: float = 0.0
    duplicate_rate: float = 0.0
    notes_mean: float = 1.5

    def validate(self, lexicon=None) -> None:
        if self.n < 0:
            raise SpecError("cohort.n: must be >= 0")
        if not 0 < self.prevalence < 1:
            raise SpecError("cohort.prevalence: must lie in (0, 1)")
        if self.age_sd < 0:
            raise SpecError("cohort.age_sd: must be >= 0")
        for name in ("negated_rate", "uncertainty_rate", "distractor_rate", "notes_mean"):
            if getattr(self, name) < 0:
                raise SpecError(f"context.{name}: must be >= 0")
        if not 0 <= self.duplicate_rate <= 1:
            raise SpecError("context.duplicate_rate: must lie in [0, 1]")
        for var in CATEGORICAL:
            if var not in self.categorical:
                raise SpecError(f"variable:{var}: missing")
        for var, (cats, pp, pn) in self.categorical.items():
            if var not in CATEGORICAL:
                raise SpecError(f"variable:{var}: unknown variable")
            if var in DOMAINS and set(cats) - set(DOMAINS[var]):
                raise SpecError(f"variable:{var}: categories {sorted(set(cats) - set(DOMAINS[var]))} outside domain")
            for side, probs in (("recurrence", pp), ("no_recurrence", pn)):
                if len(probs) != len(cats):
                    raise SpecError(f"variable:{var}.{side}: {len(probs)} probabilities for {len(cats)} categories")
                if any(p < 0 or p > 1 for p in probs) or abs(sum(probs) - 1) > 1e-9:
                    raise SpecError(f"variable:{var}.{side}: not a probability simplex")
        known = None if lexicon is None else {e.cui for e in lexicon}
        for cui, (lp, ln) in self.concepts.items():
            if lp < 0 or ln < 0:
                raise SpecError(f"concept:{cui}: rates must be >= 0")
            if known is not None and cui not in known:
                raise SpecError(f"concept:{cui}: not in lexicon")

    # -- text format -------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["cohort"] = {
            "n": str(self.n), "prevalence": repr(self.prevalence), "seed": str(self.seed),
            "censor_date": self.censor_date.isoformat(),
            "age_mean": repr(self.age_mean), "age_sd": repr(self.age_sd),
        }
        cp["context"] = {
            "negated_rate": repr(self.negated_rate), "uncertainty_rate": repr(self.uncertainty_rate),
            "distractor_rate": repr(self.distractor_rate), "duplicate_rate": repr(self.duplicate_rate),
            "notes_mean": repr(self.notes_mean),
        }
        for var in sorted(self.categorical):
            cats, pp, pn = self.categorical[var]
            cp[f"variable:{var}"] = {
                "categories": ", ".join(cats),
                "recurrence": ", ".join(repr(p) for p in pp),
                "no_recurrence": ", ".join(repr(p) for p in pn),
            }
        for cui in sorted(self.concepts):
            lp, ln = self.concepts[cui]
            cp[f"concept:{cui}"] = {"recurrence": repr(lp), "no_recurrence": repr(ln)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "GeneratorSpec":
        obj = GeneratorSpec(**{**self.__dict__, **changes})
        obj.categorical = dict(obj.categorical)
        obj.concepts = dict(obj.concepts)
        return obj


def _floats(text: str, where: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise SpecError(f"{where}: expected comma-separated numbers") from None


def parse_spec(text: str, defaults: GeneratorSpec | None = None) -> GeneratorSpec:
    """Parse the ``key = value`` generator config.

    Sections absent from ``text`` keep the values of ``defaults``.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(f"unparseable generator spec: {exc}") from None
    spec = (defaults or GeneratorSpec()).replace()

    def get(section, key, conv):
        try:
            return conv(cp[section][key])
        except ValueError:
            raise SpecError(f"{section}.{key}: bad value {cp[section][key]!r}") from None

    converters = {
        "cohort": {"n": int, "prevalence": float, "seed": int, "censor_date": dt.date.fromisoformat,
                   "age_mean": float, "age_sd": float},
        "context": {k: float for k in ("negated_rate", "uncertainty_rate", "distractor_rate",
                                       "duplicate_rate", "notes_mean")},
    }
    for section, keys in converters.items():
        if section in cp:
            for key in cp[section]:
                if key not in keys:
                    raise SpecError(f"{section}.{key}: unknown key")
                setattr(spec, key, get(section, key, keys[key]))
    for section in cp.sections():
        if section.startswith("variable:"):
            var = section.split(":", 1)[1]
            sec = cp[section]
            for key in ("categories", "recurrence", "no_recurrence"):
                if key not in sec:
                    raise SpecError(f"{section}.{key}: missing")
            cats = tuple(c.strip() for c in sec["categories"].split(","))
            spec.categorical[var] = (cats, _floats(sec["recurrence"], f"{section}.recurrence"),
                                     _floats(sec["no_recurrence"], f"{section}.no_recurrence"))
        elif section.startswith("concept:"):
            cui = section.split(":", 1)[1]
            sec = cp[section]
            spec.concepts[cui] = (get(section, "recurrence", float), get(section, "no_recurrence", float))
        elif section not in converters:
            raise SpecError(f"[{section}]: unknown section")
    return spec


def load_spec(path=None) -> GeneratorSpec:
    """Read a generator spec; ``None`` loads the shipped calibrated default."""
    if path is None:
        text = resources.files("distrec.data").joinpath("default_generator.ini").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_spec(text)


def null_spec(**changes) -> GeneratorSpec:
    """Spec where no variable and no concept depends on the label."""
    base = load_spec()
    cats = {v: (c, pn, pn) for v, (c, _, pn) in base.categorical.items()}
    concepts = {cui: (ln, ln) for cui, (_, ln) in base.concepts.items()}
    return base.replace(categorical=cats, concepts=concepts, **changes)


# -- generation --------------------------------------------------------------

@dataclass
class SynthCohort:
    spec_fingerprint: str
    records: list[PatientRecord]
    notes: list[ClinicalNote]
    labels: np.ndarray
    # non-negated signal mentions per patient, keyed by the CUI the tagger assigns
    truth_counts: list[Counter]


def _resolution(lexicon) -> dict[tuple[str, ...], str]:
    index = ct.PhraseIndex(lexicon)
    out = {}
    for e in lexicon:
        for phrase in e.phrases:
            mentions = ct.tag(list(phrase), [False] * len(phrase), index)
            if len(mentions) != 1 or mentions[0].token_span != (0, len(phrase)):
                raise SpecError(f"concept:{e.cui}: phrase {' '.join(phrase)!r} is not tagged as one mention")
            out[phrase] = mentions[0].cui
    return out


def channel_rates(spec: GeneratorSpec, lexicon) -> dict[str, tuple[float, float]]:
    """Poisson means of observed counts per tagged CUI.

    A concept's mentions are split uniformly over its phrases and each phrase
    is counted under the CUI the tagger assigns to it, so observed counts are
    independent Poissons whose means add up across concepts.
    """
    resolve = _resolution(lexicon)
    by_cui = {e.cui: e for e in lexicon}
    rates: dict[str, list[float]] = {}
    for cui, (lp, ln) in spec.concepts.items():
        phrases = by_cui[cui].phrases
        for phrase in phrases:
            acc = rates.setdefault(resolve[phrase], [0.0, 0.0])
            acc[0] += lp / len(phrases)
            acc[1] += ln / len(phrases)
    return {k: (v[0], v[1]) for k, v in sorted(rates.items())}


def _random_date(rng, start: dt.date, end: dt.date) -> dt.date:
    return start + dt.timedelta(days=int(rng.integers(0, (end - start).days + 1)))


def _phrase_text(phrase) -> str:
    return " ".join(phrase)


def generate(spec: GeneratorSpec, lexicon=None) -> SynthCohort:
    """Draw a cohort.  Patient ``i`` uses its own stream seeded by ``(seed, i)``."""
    lexicon = synth_lexicon() if lexicon is None else list(lexicon)
    spec.validate(lexicon)
    resolve = _resolution(lexicon)
    by_cui = {e.cui: e for e in lexicon}
    emitters = sorted(spec.concepts)
    noise_pool = [c for c in emitters] or sorted(ct.dictionary_cuis(lexicon))
    records, notes, labels, truth = [], [], [], []
    for i in range(spec.n):
        rng = np.random.default_rng([spec.seed, i])
        pid = f"P{i:06d}"
        dr = bool(rng.random() < spec.prevalence)
        values = {}
        for var in CATEGORICAL:
            cats, pp, pn = spec.categorical[var]
            values[var] = cats[int(rng.choice(len(cats), p=np.asarray(pp if dr else pn)))]
        age = float(np.clip(round(rng.normal(spec.age_mean, spec.age_sd), 1), 18.0, 100.0))
        diagnosis = _random_date(rng, FIRST_DIAGNOSIS, LAST_DIAGNOSIS)
        death = _random_date(rng, diagnosis + dt.timedelta(days=30), spec.censor_date) if values["deceased"] == "Yes" else None
        records.append(PatientRecord(
            patient_id=pid, age_of_diagnosis=age, label=DR if dr else NO_DR,
            diagnosis_date=diagnosis, death_date=death, **values,
        ))
        labels.append(1 if dr else -1)

        sentences, counts = [], Counter()
        for cui in emitters:
            lam = spec.concepts[cui][0 if dr else 1]
            phrases = by_cui[cui].phrases
            for _ in range(int(rng.poisson(lam))):
                phrase = phrases[int(rng.integers(len(phrases)))]
                counts[resolve[phrase]] += 1
                sentences.append(SIGNAL_TEMPLATES[int(rng.integers(len(SIGNAL_TEMPLATES)))].format(_phrase_text(phrase)))
        for rate, templates in ((spec.negated_rate, NEGATED_TEMPLATES), (spec.uncertainty_rate, UNCERTAIN_TEMPLATES)):
            for _ in range(int(rng.poisson(rate))):
                phrases = by_cui[noise_pool[int(rng.integers(len(noise_pool)))]].phrases
                phrase = phrases[int(rng.integers(len(phrases)))]
                sentences.append(templates[int(rng.integers(len(templates)))].format(_phrase_text(phrase)))
        for _ in range(int(rng.poisson(spec.distractor_rate))):
            sentences.append(DISTRACTORS[int(rng.integers(len(DISTRACTORS)))])
        truth.append(counts)

        n_notes = 1 + int(rng.poisson(spec.notes_mean))
        order = rng.permutation(len(sentences))
        which = rng.integers(0, n_notes, size=len(sentences))
        first_note_day = diagnosis + dt.timedelta(days=1)
        for j in range(n_notes):
            body = [sentences[k] for k, w in zip(order, which[order]) if w == j]
            text = " ".join([NOTE_HEADER.format(j + 1)] + body)
            day = _random_date(rng, first_note_day, spec.censor_date)
            note_type = NOTE_TYPES[int(rng.integers(len(NOTE_TYPES) - 1))]
            notes.append(ClinicalNote(pid, f"{pid}-N{j:02d}", note_type, day, text))
            if rng.random() < spec.duplicate_rate:
                copy_day = _random_date(rng, day, spec.censor_date)
                notes.append(ClinicalNote(pid, f"{pid}-N{j:02d}c", note_type, copy_day, text))
    return SynthCohort(spec.fingerprint, records, notes, np.array(labels, dtype=np.int64), truth)


# -- oracle ------------------------------------------------------------------

@dataclass
class OracleResult:
    bayes_auc: float | None
    scores: np.ndarray

    def to_json(self) -> dict:
        return {"bayes_auc": self.bayes_auc, "undefined": self.bayes_auc is None,
                "n": int(len(self.scores))}


def _log_ratio(num: float, den: float) -> float:
    if num == den:
        return 0.0
    if den == 0:
        return math.inf
    if num == 0:
        return -math.inf
    return math.log(num / den)


def bayes_oracle(spec: GeneratorSpec, cohort: SynthCohort, lexicon=None) -> OracleResult:
    """Exact log P(observables | DR) - log P(observables | no DR) per patient."""
    if cohort.spec_fingerprint != spec.fingerprint:
        raise SpecError("cohort was not generated from this spec")
    lexicon = synth_lexicon() if lexicon is None else list(lexicon)
    rates = channel_rates(spec, lexicon)
    cat_terms = {
        var: {c: _log_ratio(pp[j], pn[j]) for j, c in enumerate(cats)}
        for var, (cats, pp, pn) in spec.categorical.items()
    }
    scores = np.empty(len(cohort.records))
    for i, (rec, counts) in enumerate(zip(cohort.records, cohort.truth_counts)):
        s = sum(cat_terms[var][getattr(rec, var)] for var in CATEGORICAL)
        for cui, (mp, mn) in rates.items():
            k = counts.get(cui, 0)
            s -= mp - mn
            if k:
                s += k * _log_ratio(mp, mn)
        scores[i] = s
    labels = cohort.labels
    defined = len(labels) > 0 and np.any(labels > 0) and np.any(labels < 0)
    return OracleResult(auc(scores, labels) if defined else None, scores)


# -- file output -------------------------------------------------------------

def write_cohort(cohort: SynthCohort, out_dir, spec: GeneratorSpec, oracle: OracleResult, lexicon=None) -> dict:
    """Write patients.csv, notes.jsonl, labels.csv, oracle.json, lexicon.txt and the spec copy."""
    from pathlib import Path

    from .clinical import write_patients_csv
    from .corpus import write_notes_jsonl

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "patients": out / "patients.csv",
        "notes": out / "notes.jsonl",
        "labels": out / "labels.csv",
        "oracle": out / "oracle.json",
        "lexicon": out / "lexicon.txt",
        "spec": out / "generator.ini",
    }
    write_patients_csv(cohort.records, paths["patients"])
    write_notes_jsonl(cohort.notes, paths["notes"])
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        fh.write("patient_id,label\n")
        for r in cohort.records:
            fh.write(f"{r.patient_id},{r.label}\n")
    with open(paths["oracle"], "w", encoding="utf-8") as fh:
        json.dump({**oracle.to_json(), "spec_fingerprint": spec.fingerprint}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    ct.write_lexicon(synth_lexicon() if lexicon is None else lexicon, paths["lexicon"])
    paths["spec"].write_text(spec.to_ini(), encoding="utf-8")
    return paths


def tokens_of(text: str) -> list[str]:
    return tokenize(text)
