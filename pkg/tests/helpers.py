"""Small fixtures shared across test modules."""

import datetime as dt

import zlib

import numpy as np

from distrec.clinical import DOMAINS, DR, NO_DR, PatientRecord
from distrec.concept_tagger import LexiconEntry, load_lexicon


def make_record(pid, y, rng=None, **kw):
    rng = rng or np.random.default_rng(zlib.crc32(pid.encode()))
    values = {v: dom[int(rng.integers(len(dom)))] for v, dom in DOMAINS.items()}
    values.update(kw)
    return PatientRecord(
        patient_id=pid,
        age_of_diagnosis=float(rng.integers(30, 80)),
        insurance=["Private", "Medicare", "Medicaid"][int(rng.integers(3))] if "insurance" not in kw else kw["insurance"],
        label=DR if y > 0 else NO_DR,
        diagnosis_date=dt.date(2010, 1, 1),
        death_date=None,
        **{k: v for k, v in values.items() if k != "insurance"},
    )


def lexicon_of_size(n):
    """The shipped entries padded with invented dictionary CUIs up to ``n``."""
    base = load_lexicon()
    extra = [
        LexiconEntry(f"C9{i:06d}", f"invented {i}", ((f"marker{i}",),), True)
        for i in range(n - len(base))
    ]
    return base + extra
