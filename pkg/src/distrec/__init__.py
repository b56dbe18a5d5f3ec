"""Distant-recurrence phenotyping from clinical notes and structured records."""

from .clinical import ClinicalEncoder, PatientRecord, read_patients_csv
from .concept_tagger import LexiconEntry, aggregate, load_lexicon, tag
from .corpus import ClinicalNote, Corpus, ingest, load_cues, negex_scope, segment
from .featurizer import FeatureMatrix, VariantConfig, assemble, chi2_select
from .learner import TrainedModel, predict_proba, train
from .pipeline import Cohort, VariantPipeline, build_cohort
from .stats_eval import auc, holdout_eval, repeated_cv
from .synth import GeneratorSpec, bayes_oracle, generate, load_spec

__version__ = "0.1.0"

__all__ = [
    "ClinicalEncoder", "PatientRecord", "read_patients_csv",
    "LexiconEntry", "aggregate", "load_lexicon", "tag",
    "ClinicalNote", "Corpus", "ingest", "load_cues", "negex_scope", "segment",
    "FeatureMatrix", "VariantConfig", "assemble", "chi2_select",
    "TrainedModel", "predict_proba", "train",
    "Cohort", "VariantPipeline", "build_cohort",
    "auc", "holdout_eval", "repeated_cv",
    "GeneratorSpec", "bayes_oracle", "generate", "load_spec",
]
