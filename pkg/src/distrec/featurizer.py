"""Sparse feature matrices, TF-IDF weighting, chi-square selection and the five model variants."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .clinical import VARIABLES as CLINICAL_VARIABLES

VARIANTS = ("filtered_plus_clinical", "full_concepts", "filtered_concepts", "clinical_only", "bag_of_words")
SOURCES = ("concept", "clinical", "token")
CHI2_VARIANTS = ("full_concepts", "bag_of_words")


@dataclass(frozen=True)
class Column:
    name: str
    source: str
    variable: str = ""

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown column source {self.source!r}")
        if not self.variable:
            object.__setattr__(self, "variable", self.name)


@dataclass
class FeatureMatrix:
    rows: list[str]
    columns: list[Column]
    values: sp.csr_matrix
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = sp.csr_matrix(self.values, dtype=np.float64)
        self.values.eliminate_zeros()
        self.values.sort_indices()
        if self.values.shape != (len(self.rows), len(self.columns)):
            raise ValueError(f"shape {self.values.shape} != ({len(self.rows)}, {len(self.columns)})")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("column names must be unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.rows),):
                raise ValueError("one label per row required")

    @property
    def shape(self):
        return self.values.shape

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def variable_count(self, source: str | None = None) -> int:
        return len({c.variable for c in self.columns if source is None or c.source == source})

    def column_count(self, source: str | None = None) -> int:
        return sum(1 for c in self.columns if source is None or c.source == source)

    def feature_report(self) -> dict:
        return {
            "variables": self.variable_count(),
            "columns": self.column_count(),
            "by_source": {
                s: {"variables": self.variable_count(s), "columns": self.column_count(s)}
                for s in SOURCES if self.column_count(s)
            },
        }

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        index = {c.name: j for j, c in enumerate(self.columns)}
        idx = [index[n] for n in names]
        return FeatureMatrix(self.rows, [self.columns[j] for j in idx], self.values[:, idx], self.labels)

    def take_rows(self, rows: Sequence[int]) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        labels = None if self.labels is None else self.labels[rows]
        return FeatureMatrix([self.rows[i] for i in rows], self.columns, self.values[rows], labels)


def hstack(parts: Sequence[FeatureMatrix]) -> FeatureMatrix:
    first = parts[0]
    for p in parts[1:]:
        if p.rows != first.rows:
            raise ValueError("row misalignment between feature blocks")
    columns = [c for p in parts for c in p.columns]
    return FeatureMatrix(first.rows, columns, sp.hstack([p.values for p in parts], format="csr"), first.labels)


# -- count blocks ------------------------------------------------------------

def count_matrix(
    patient_ids: Sequence[str],
    counts: Sequence[Mapping[str, float]],
    vocabulary: Sequence[str],
    source: str,
    binary: bool = False,
    labels=None,
) -> FeatureMatrix:
    """Rows of ``counts`` projected onto ``vocabulary`` (absent keys are zero, unknown keys dropped)."""
    index = {v: j for j, v in enumerate(vocabulary)}
    r, c, v = [], [], []
    for i, row in enumerate(counts):
        for key, val in row.items():
            j = index.get(key)
            if j is not None and val:
                r.append(i)
                c.append(j)
                v.append(1.0 if binary else float(val))
    values = sp.csr_matrix((v, (r, c)), shape=(len(patient_ids), len(vocabulary)))
    return FeatureMatrix(list(patient_ids), [Column(t, source) for t in vocabulary], values, labels)


class TfidfVectorizer:
    """Raw-count tf, smoothed idf ``ln((1+N)/(1+df)) + 1``, L2-normalized rows."""

    def __init__(self):
        self.vocabulary: list[str] | None = None
        self.idf: np.ndarray | None = None

    def fit(self, documents: Sequence[Mapping[str, int]]) -> "TfidfVectorizer":
        if not documents:
            raise ValueError("empty training corpus")
        df: dict[str, int] = {}
        for doc in documents:
            for tok, n in doc.items():
                if n:
                    df[tok] = df.get(tok, 0) + 1
        self.vocabulary = sorted(df)
        n_docs = len(documents)
        dfs = np.array([df[t] for t in self.vocabulary], dtype=float)
        self.idf = np.log((1.0 + n_docs) / (1.0 + dfs)) + 1.0
        return self

    def transform(self, patient_ids: Sequence[str], documents: Sequence[Mapping[str, int]], labels=None) -> FeatureMatrix:
        if self.vocabulary is None:
            raise RuntimeError("TfidfVectorizer used before fit")
        m = count_matrix(patient_ids, documents, self.vocabulary, "token", labels=labels)
        x = m.values @ sp.diags(self.idf)
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        x = sp.diags(1.0 / norms) @ x
        return FeatureMatrix(m.rows, m.columns, x, labels)

    def fit_transform(self, patient_ids, documents, labels=None) -> FeatureMatrix:
        return self.fit(documents).transform(patient_ids, documents, labels)


def tfidf_fit_transform(patient_ids, documents, labels=None) -> tuple[FeatureMatrix, TfidfVectorizer]:
    vec = TfidfVectorizer()
    return vec.fit_transform(patient_ids, documents, labels), vec


# -- chi-square selection ----------------------------------------------------

def chi2_scores(values, labels) -> np.ndarray:
    """Chi-square statistic per column from per-class column sums.

    Observed = column total within each class, expected = column total times
    the class proportion; all-zero columns score 0.
    """
    x = sp.csr_matrix(values)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("chi-square selection needs both classes")
    onehot = (labels[None, :] == classes[:, None]).astype(float)
    observed = np.asarray((sp.csr_matrix(onehot) @ x).todense())
    totals = observed.sum(axis=0)
    class_prob = onehot.sum(axis=1) / len(labels)
    expected = class_prob[:, None] * totals[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=0)


def keep_count(n_columns: int, keep_fraction: float) -> int:
    # rounding guards against 0.05 * 20 -> 1.0000000000000002
    return min(n_columns, math.ceil(round(keep_fraction * n_columns, 9)))


def chi2_ranking(matrix: FeatureMatrix) -> list[tuple[str, float]]:
    """Columns by statistic descending, ties by name ascending."""
    if matrix.labels is None:
        raise ValueError("chi-square selection needs labels")
    scores = chi2_scores(matrix.values, matrix.labels)
    return sorted(zip(matrix.column_names, scores.tolist()), key=lambda t: (-t[1], t[0]))


def chi2_select(matrix: FeatureMatrix, keep_fraction: float = 0.05) -> FeatureMatrix:
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    if keep_fraction == 1:
        return matrix
    ranked = chi2_ranking(matrix)
    keep = {name for name, _ in ranked[:keep_count(len(ranked), keep_fraction)]}
    # retained columns stay in their original order
    return matrix.select([n for n in matrix.column_names if n in keep])


# -- variants ----------------------------------------------------------------

@dataclass(frozen=True)
class VariantConfig:
    variant: str = "filtered_plus_clinical"
    chi2_keep_fraction: float = 0.05
    concept_encoding: str = "count"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if not 0 < self.chi2_keep_fraction <= 1:
            raise ValueError("chi2_keep_fraction must lie in (0, 1]")
        if self.concept_encoding not in ("count", "binary"):
            raise ValueError("concept_encoding must be 'count' or 'binary'")


def clinical_matrix(patient_ids, encoded: np.ndarray, names: Sequence[str], labels=None) -> FeatureMatrix:
    """Wrap an encoder's dense output, tagging each column with its variable."""
    cols = []
    for name in names:
        var = name.split("=", 1)[0]
        if var not in CLINICAL_VARIABLES:
            raise ValueError(f"unknown clinical column {name!r}")
        cols.append(Column(name, "clinical", var))
    return FeatureMatrix(list(patient_ids), cols, sp.csr_matrix(encoded), labels)


def assemble(
    variant: VariantConfig | str,
    concept_vectors: FeatureMatrix | None = None,
    full_tag_vectors: FeatureMatrix | None = None,
    clinical: FeatureMatrix | None = None,
    bow: FeatureMatrix | None = None,
) -> FeatureMatrix:
    """Pick and combine feature blocks for one variant.

    ``concept_vectors`` must already hold one column per dictionary CUI.  The
    chi-square variants need labels on their input block.
    """
    if isinstance(variant, str):
        variant = VariantConfig(variant)
    v = variant.variant

    def need(block, name):
        if block is None:
            raise ValueError(f"variant {v} needs the {name} block")
        return block

    if v == "filtered_plus_clinical":
        return hstack([need(concept_vectors, "concept"), need(clinical, "clinical")])
    if v == "filtered_concepts":
        return need(concept_vectors, "concept")
    if v == "clinical_only":
        return need(clinical, "clinical")
    if v == "full_concepts":
        return chi2_select(need(full_tag_vectors, "full concept"), variant.chi2_keep_fraction)
    return chi2_select(need(bow, "bag-of-words"), variant.chi2_keep_fraction)


# -- persistence -------------------------------------------------------------

def save_matrix(matrix: FeatureMatrix, meta_path, triplets_path) -> None:
    meta = {
        "rows": matrix.rows,
        "columns": [{"name": c.name, "source": c.source, "variable": c.variable} for c in matrix.columns],
        "labels": None if matrix.labels is None else matrix.labels.tolist(),
        "ordering": "row and col in the triplets file index rows/columns in the order listed here",
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    coo = matrix.values.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(triplets_path, "w", encoding="utf-8") as fh:
        fh.write("row\tcol\tvalue\n")
        for k in order:
            fh.write(f"{coo.row[k]}\t{coo.col[k]}\t{float(coo.data[k])!r}\n")


def load_matrix(meta_path, triplets_path) -> FeatureMatrix:
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    r, c, v = [], [], []
    with open(triplets_path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            a, b, val = line.rstrip("\n").split("\t")
            r.append(int(a))
            c.append(int(b))
            v.append(float(val))
    cols = [Column(**col) for col in meta["columns"]]
    values = sp.csr_matrix((v, (r, c)), shape=(len(meta["rows"]), len(cols)))
    return FeatureMatrix(meta["rows"], cols, values, meta["labels"])
