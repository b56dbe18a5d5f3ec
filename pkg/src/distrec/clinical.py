"""Structured clinical variables: parsing, derived flags and numeric encoding."""

from __future__ import annotations

import csv
import datetime as dt
import re
from collections import Counter
from dataclasses import dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

DR = "DistantRecurrence"
NO_DR = "NoDistantRecurrence"

RECEPTOR = ("Positive", "Negative", "Unknown")
YES_NO = ("Yes", "No")

# Enumerated domains in encoding order.  insurance is open-ended and learned
# from training data.
DOMAINS: dict[str, tuple[str, ...]] = {
    "race": ("White", "Black", "Asian", "Other"),
    "smoking": ("Yes", "No", "Ex-smoker", "Unknown"),
    "alcohol": ("No", "Moderate", "Heavy", "Former", "Unknown"),
    "family_cancer_history": ("Yes", "No", "Unknown"),
    "er": RECEPTOR,
    "pr": RECEPTOR,
    "her2": RECEPTOR,
    "p53": RECEPTOR,
    "nodal_positivity": RECEPTOR,
    "histology": ("IDC", "DCIS", "ILC", "Unknown"),
    "grade": ("Grade1", "Grade2", "Grade3", "Unknown"),
    "size": ("0-2cm", "2-5cm", ">5cm", "Unknown"),
    "surgery": ("Mastectomy", "BreastConservation", "No", "Unknown"),
    "deceased": YES_NO,
    "targeted_therapy": YES_NO,
    "radiation": YES_NO,
}
BINARY = ("deceased", "targeted_therapy", "radiation")

# Variables in Table-2 order; 18 in total.
VARIABLES = (
    "age_of_diagnosis", "race", "smoking", "alcohol", "family_cancer_history", "insurance",
    "er", "pr", "her2", "p53", "nodal_positivity", "histology", "grade", "size", "surgery",
    "deceased", "targeted_therapy", "radiation",
)

CSV_COLUMNS = ("patient_id",) + VARIABLES + ("label", "diagnosis_date", "death_date")

# Fallback for out-of-domain values where the domain has no Unknown.
_FALLBACK = {"race": "Other", "deceased": "No", "targeted_therapy": "No", "radiation": "No"}

_ALIASES = {
    "size": {"02cm": "0-2cm", "25cm": "2-5cm", "2cm5cm": "2-5cm", "5cm": ">5cm", "gt5cm": ">5cm"},
    "surgery": {"breastconservationsurgery": "BreastConservation", "bcs": "BreastConservation",
                "lumpectomy": "BreastConservation"},
    "smoking": {"exsmoker": "Ex-smoker", "former": "Ex-smoker"},
    "grade": {"1": "Grade1", "2": "Grade2", "3": "Grade3"},
}

DEFAULT_DRUGS = frozenset({"afinitor", "everolimus", "bevacizumab", "avastin", "ibrance", "palbociclib"})
DEFAULT_METASTATIC_SITES = frozenset({"brain", "lung", "bone", "liver"})
DECEASED_AGE_CUTOFF = 75.0


class RecordError(ValueError):
    pass


def _key(value: str) -> str:
    return re.sub(r"[^a-z0-9]", "", value.lower())


_LOOKUP = {
    var: {**{_key(v): v for v in dom}, **_ALIASES.get(var, {})}
    for var, dom in DOMAINS.items()
}


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age_of_diagnosis: float
    race: str = "Other"
    smoking: str = "Unknown"
    alcohol: str = "Unknown"
    family_cancer_history: str = "Unknown"
    insurance: str = "Unknown"
    er: str = "Unknown"
    pr: str = "Unknown"
    her2: str = "Unknown"
    p53: str = "Unknown"
    nodal_positivity: str = "Unknown"
    histology: str = "Unknown"
    grade: str = "Unknown"
    size: str = "Unknown"
    surgery: str = "Unknown"
    deceased: str = "No"
    targeted_therapy: str = "No"
    radiation: str = "No"
    label: str | None = None
    diagnosis_date: dt.date | None = None
    death_date: dt.date | None = None

    def __post_init__(self):
        if not 0 < self.age_of_diagnosis < 130:
            raise RecordError(f"{self.patient_id}: age {self.age_of_diagnosis} out of range")
        for var, dom in DOMAINS.items():
            if getattr(self, var) not in dom:
                raise RecordError(f"{self.patient_id}: {var}={getattr(self, var)!r} not in {dom}")
        if self.label not in (None, DR, NO_DR):
            raise RecordError(f"{self.patient_id}: bad label {self.label!r}")

    @property
    def y(self) -> int | None:
        """Label as +1 (distant recurrence) / -1, or None when unlabeled."""
        if self.label is None:
            return None
        return 1 if self.label == DR else -1

    def to_row(self) -> dict[str, str]:
        row = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = ""
            elif isinstance(v, dt.date):
                v = v.isoformat()
            elif isinstance(v, float):
                v = repr(v)
            row[f.name] = v
        return row


def _parse_label(value) -> str | None:
    if value is None or str(value).strip() == "":
        return None
    k = _key(str(value))
    if k in ("distantrecurrence", "dr", "yes", "1", "true", "pos", "positive"):
        return DR
    if k in ("nodistantrecurrence", "nodr", "no", "0", "false", "neg", "negative"):
        return NO_DR
    raise RecordError(f"unrecognized label {value!r}")


def _parse_optional_date(value) -> dt.date | None:
    if value is None or str(value).strip() == "":
        return None
    return dt.date.fromisoformat(str(value).strip()[:10])


def parse_record(row: Mapping[str, str], warnings: Counter | None = None) -> PatientRecord:
    """Validate one patients-file row.

    Categorical values match case-insensitively; anything out of domain becomes
    Unknown (or the domain's fallback) and bumps ``warnings[variable]``.
    """
    pid = (row.get("patient_id") or "").strip()
    if not pid:
        raise RecordError("missing patient_id")
    age_raw = (row.get("age_of_diagnosis") or "").strip()
    if not age_raw:
        raise RecordError(f"{pid}: missing age_of_diagnosis")
    try:
        age = float(age_raw)
    except ValueError:
        raise RecordError(f"{pid}: age {age_raw!r} is not a number") from None

    values = {}
    for var in DOMAINS:
        raw = (row.get(var) or "").strip()
        value = _LOOKUP[var].get(_key(raw)) if raw else None
        if value is None:
            value = _FALLBACK.get(var, "Unknown")
            if raw and warnings is not None:
                warnings[var] += 1
        values[var] = value
    insurance = (row.get("insurance") or "").strip() or "Unknown"
    try:
        return PatientRecord(
            patient_id=pid,
            age_of_diagnosis=age,
            insurance=insurance,
            label=_parse_label(row.get("label")),
            diagnosis_date=_parse_optional_date(row.get("diagnosis_date")),
            death_date=_parse_optional_date(row.get("death_date")),
            **values,
        )
    except ValueError as exc:
        raise RecordError(f"{pid}: {exc}") from None


def read_patients_csv(path, warnings: Counter | None = None) -> tuple[list[PatientRecord], int]:
    """Returns parsed records and the number of rejected rows."""
    records, rejects = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                records.append(parse_record(row, warnings))
            except RecordError:
                rejects += 1
    return records, rejects


def write_patients_csv(records: Iterable[PatientRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(r.to_row())


def read_aux_csv(path) -> dict[str, list[str]]:
    """``patient_id,value`` rows grouped by patient."""
    out: dict[str, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["patient_id"].strip(), []).append(row["value"])
    return out


# -- derived variables -------------------------------------------------------

def derive_deceased(death_date: dt.date | None, death_age: float | None) -> str:
    """"Yes" iff a death is recorded before age 75."""
    if death_date is None or death_age is None:
        return "No"
    return "Yes" if death_age < DECEASED_AGE_CUTOFF else "No"


def derive_targeted_therapy(medications: Iterable[str], drugs: Iterable[str] = DEFAULT_DRUGS) -> str:
    drugs = {d.lower() for d in drugs}
    if not drugs:
        raise ValueError("drug list must be non-empty")
    for med in medications:
        if drugs.intersection(re.findall(r"[a-z0-9]+", med.lower())):
            return "Yes"
    return "No"


def derive_radiation(sites: Iterable[str], metastatic_sites: Iterable[str] = DEFAULT_METASTATIC_SITES) -> str:
    metastatic_sites = set(metastatic_sites)
    return "Yes" if any(s.strip().lower() in metastatic_sites for s in sites) else "No"


# -- encoding ----------------------------------------------------------------

class NotFittedError(RuntimeError):
    pass


class ClinicalEncoder:
    """One-hot / z-score encoder; statistics come from the records passed to ``fit``."""

    def __init__(self):
        self.age_mean: float | None = None
        self.age_sd: float | None = None
        self.insurance_categories: tuple[str, ...] | None = None

    def fit(self, records: Sequence[PatientRecord]) -> "ClinicalEncoder":
        if not records:
            raise ValueError("cannot fit encoder on zero records")
        ages = np.array([r.age_of_diagnosis for r in records], dtype=float)
        self.age_mean = float(ages.mean())
        sd = float(ages.std())
        self.age_sd = sd if sd > 0 else 1.0
        self.insurance_categories = tuple(sorted({r.insurance for r in records}))
        return self

    def _check(self):
        if self.insurance_categories is None:
            raise NotFittedError("ClinicalEncoder used before fit")

    @property
    def columns(self) -> list[tuple[str, str]]:
        """``(column name, variable)`` pairs in output order."""
        self._check()
        cols = []
        for var in VARIABLES:
            if var == "age_of_diagnosis":
                cols.append((var, var))
            elif var in BINARY:
                cols.append((var, var))
            else:
                dom = self.insurance_categories if var == "insurance" else DOMAINS[var]
                cols.extend((f"{var}={v}", var) for v in dom)
        return cols

    def transform(self, records: Sequence[PatientRecord]) -> tuple[np.ndarray, list[str]]:
        cols = self.columns
        index = {name: j for j, (name, _) in enumerate(cols)}
        out = np.zeros((len(records), len(cols)))
        for i, r in enumerate(records):
            out[i, 0] = (r.age_of_diagnosis - self.age_mean) / self.age_sd
            for var in VARIABLES[1:]:
                value = getattr(r, var)
                if var in BINARY:
                    out[i, index[var]] = 1.0 if value == "Yes" else 0.0
                else:
                    j = index.get(f"{var}={value}")
                    if j is not None:  # unseen insurance stays all-zero
                        out[i, j] = 1.0
        return out, [name for name, _ in cols]

    def fit_transform(self, records):
        return self.fit(records).transform(records)
