"""From notes and patient records to per-variant feature matrices.

``build_cohort`` runs the narrative pipeline (filter, segment, drop cued
sentences, NegEx, tag, aggregate) once per patient.  A ``VariantPipeline``
then fits every data-dependent step (clinical encoder, TF-IDF, chi-square
selection) on a subset of rows only, so cross-validation folds never see
held-out statistics.
"""

from __future__ import annotations

import datetime as dt
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import concept_tagger as ct
from .clinical import ClinicalEncoder, PatientRecord
from .corpus import Corpus, ContextCue, drop_cued_sentences, filter_notes, negex_scope, segment
from .featurizer import (
    FeatureMatrix,
    TfidfVectorizer,
    VariantConfig,
    assemble,
    chi2_ranking,
    clinical_matrix,
    count_matrix,
    keep_count,
)

DEFAULT_CENSOR_DATE = dt.date(2016, 5, 1)


@dataclass(frozen=True)
class ProcessedSentence:
    patient_id: str
    note_id: str
    index: int
    tokens: tuple[str, ...]
    negated: tuple[bool, ...]

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "note_id": self.note_id,
            "index": self.index,
            "tokens": list(self.tokens),
            "negated": [int(b) for b in self.negated],
        }

    @classmethod
    def from_json(cls, obj) -> "ProcessedSentence":
        return cls(obj["patient_id"], obj["note_id"], int(obj["index"]), tuple(obj["tokens"]),
                   tuple(bool(b) for b in obj["negated"]))


@dataclass
class PreprocessReport:
    notes_in: int = 0
    notes_out: int = 0
    rejects: int = 0
    note_drops: dict = field(default_factory=dict)
    sentences_in: int = 0
    sentences_cue_dropped: int = 0
    sentences_out: int = 0
    filtering: bool = True

    def to_json(self) -> dict:
        return dict(self.__dict__)


def preprocess(
    corpus: Corpus,
    records: Sequence[PatientRecord],
    cues: Sequence[ContextCue],
    censor_date: dt.date = DEFAULT_CENSOR_DATE,
    filtering: bool = True,
) -> tuple[list[ProcessedSentence], PreprocessReport]:
    """Filter notes, segment them and apply contextual cues.

    With ``filtering`` off, cued sentences are kept and no token is negated;
    note-level filters (dates, "breast") still apply.
    """
    diagnosis = {r.patient_id: r.diagnosis_date for r in records if r.diagnosis_date is not None}
    filtered = filter_notes(corpus, diagnosis, censor_date)
    report = PreprocessReport(
        notes_in=len(corpus) + corpus.counts.get("duplicates", 0),
        notes_out=len(filtered),
        rejects=corpus.rejects,
        note_drops={k: v for k, v in sorted(filtered.counts.items()) if v},
        filtering=filtering,
    )
    out = []
    for note in filtered.notes:
        sentences = segment(note)
        report.sentences_in += len(sentences)
        if filtering:
            sentences, dropped = drop_cued_sentences(sentences, cues)
            report.sentences_cue_dropped += dropped
        for s in sentences:
            mask = negex_scope(s, cues) if filtering else [False] * len(s.tokens)
            out.append(ProcessedSentence(note.patient_id, note.note_id, s.index, s.tokens, tuple(mask)))
    report.sentences_out = len(out)
    return out, report


def write_sentence_store(sentences: Iterable[ProcessedSentence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps(s.to_json()) + "\n")


def read_sentence_store(path) -> list[ProcessedSentence]:
    with open(path, encoding="utf-8") as fh:
        return [ProcessedSentence.from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass
class Cohort:
    """Per-patient inputs for every variant, row-aligned with ``patient_ids``."""

    patient_ids: list[str]
    records: list[PatientRecord]
    labels: np.ndarray
    concept_counts: list[Counter]
    full_counts: list[Counter]
    documents: list[Counter]
    dictionary: tuple[str, ...]

    def __len__(self):
        return len(self.patient_ids)

    def subset(self, rows) -> "Cohort":
        rows = [int(i) for i in np.flatnonzero(rows)] if np.asarray(rows).dtype == bool else [int(i) for i in rows]
        return Cohort(
            [self.patient_ids[i] for i in rows],
            [self.records[i] for i in rows],
            self.labels[rows],
            [self.concept_counts[i] for i in rows],
            [self.full_counts[i] for i in rows],
            [self.documents[i] for i in rows],
            self.dictionary,
        )


def cohort_from_sentences(
    sentences: Iterable[ProcessedSentence],
    records: Sequence[PatientRecord],
    lexicon: Sequence[ct.LexiconEntry],
    min_score: float = 1.0,
    require_labels: bool = True,
) -> Cohort:
    index = ct.PhraseIndex(lexicon)
    dictionary = tuple(sorted(ct.dictionary_cuis(lexicon)))
    if require_labels:
        records = [r for r in records if r.label is not None]
    pos = {r.patient_id: i for i, r in enumerate(records)}
    mentions: list[list[ct.ConceptMention]] = [[] for _ in records]
    documents = [Counter() for _ in records]
    for s in sentences:
        i = pos.get(s.patient_id)
        if i is None:
            continue
        documents[i].update(s.tokens)
        mentions[i].extend(ct.tag(s.tokens, s.negated, index, s.note_id, s.index))
    return Cohort(
        patient_ids=[r.patient_id for r in records],
        records=list(records),
        labels=np.array([r.y or 0 for r in records], dtype=np.int64),
        concept_counts=[ct.aggregate(m, dictionary, min_score) for m in mentions],
        full_counts=[ct.aggregate(m, None, min_score) for m in mentions],
        documents=documents,
        dictionary=dictionary,
    )


def build_cohort(
    corpus: Corpus,
    records: Sequence[PatientRecord],
    lexicon: Sequence[ct.LexiconEntry],
    cues: Sequence[ContextCue],
    censor_date: dt.date = DEFAULT_CENSOR_DATE,
    filtering: bool = True,
) -> tuple[Cohort, PreprocessReport]:
    sentences, report = preprocess(corpus, records, cues, censor_date, filtering)
    return cohort_from_sentences(sentences, records, lexicon), report


class VariantPipeline:
    """Feature construction for one variant, fitted on training rows only."""

    def __init__(self, config: VariantConfig | str = "filtered_plus_clinical"):
        self.config = VariantConfig(config) if isinstance(config, str) else config
        self.encoder: ClinicalEncoder | None = None
        self.tfidf: TfidfVectorizer | None = None
        self.full_vocabulary: list[str] | None = None
        self.selected: list[str] | None = None
        self.dictionary: tuple[str, ...] | None = None

    @property
    def variant(self) -> str:
        return self.config.variant

    def _concepts(self, cohort: Cohort) -> FeatureMatrix:
        return count_matrix(cohort.patient_ids, cohort.concept_counts, self.dictionary, "concept",
                            binary=self.config.concept_encoding == "binary", labels=cohort.labels)

    def _clinical(self, cohort: Cohort) -> FeatureMatrix:
        values, names = self.encoder.transform(cohort.records)
        return clinical_matrix(cohort.patient_ids, values, names, cohort.labels)

    def _full(self, cohort: Cohort) -> FeatureMatrix:
        return count_matrix(cohort.patient_ids, cohort.full_counts, self.full_vocabulary, "concept",
                            binary=self.config.concept_encoding == "binary", labels=cohort.labels)

    def fit(self, cohort: Cohort) -> "VariantPipeline":
        v = self.variant
        self.dictionary = cohort.dictionary
        if v in ("filtered_plus_clinical", "clinical_only"):
            self.encoder = ClinicalEncoder().fit(cohort.records)
        if v == "full_concepts":
            self.full_vocabulary = sorted({c for counts in cohort.full_counts for c in counts})
            block = self._full(cohort)
        elif v == "bag_of_words":
            self.tfidf = TfidfVectorizer().fit(cohort.documents)
            block = self.tfidf.transform(cohort.patient_ids, cohort.documents, cohort.labels)
        else:
            return self
        ranked = chi2_ranking(block)
        keep = {n for n, _ in ranked[:keep_count(len(ranked), self.config.chi2_keep_fraction)]}
        self.selected = [n for n in block.column_names if n in keep]
        return self

    def transform(self, cohort: Cohort) -> FeatureMatrix:
        v = self.variant
        if self.dictionary is None:
            raise RuntimeError("VariantPipeline used before fit")
        if v == "full_concepts":
            return self._full(cohort).select(self.selected)
        if v == "bag_of_words":
            return self.tfidf.transform(cohort.patient_ids, cohort.documents, cohort.labels).select(self.selected)
        concepts = self._concepts(cohort) if v != "clinical_only" else None
        clinical = self._clinical(cohort) if v != "filtered_concepts" else None
        return assemble(self.config, concept_vectors=concepts, clinical=clinical)

    def fit_transform(self, cohort: Cohort) -> FeatureMatrix:
        return self.fit(cohort).transform(cohort)
