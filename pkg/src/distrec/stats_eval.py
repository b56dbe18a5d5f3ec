"""Splits, repeated cross-validation, ROC/AUC and the cohort significance tests."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import learner
from ._splits import SplitError, stratified_kfold, stratified_split
from .clinical import DOMAINS, PatientRecord
from .featurizer import VariantConfig

__all__ = [
    "SplitError", "stratified_kfold", "stratified_split", "SplitPlan", "EvalReport", "TestResult",
    "auc", "roc_points", "t_test_two_sample", "chi2_independence", "cohens_kappa",
    "kappa_from_confusion", "descriptive_table", "repeated_cv", "holdout_eval", "format_p",
    "format_mean_sd",
]

P_FLOOR = 2.2e-16


class EvaluationError(ValueError):
    pass


def format_p(p: float) -> str:
    if p < P_FLOOR:
        return "< 2.2e-16"
    return f"{p:.2g}"


def format_mean_sd(mean: float, sd: float) -> str:
    return f"{mean:.2f} ({sd:.2f})"


@dataclass
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    kind: str
    statistic: float
    p_value: float
    df: float | None = None
    degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def p_display(self) -> str:
        return format_p(self.p_value)


@dataclass
class SplitPlan:
    seed: int
    folds: np.ndarray | None = None
    train_mask: np.ndarray | None = None


# -- ROC / AUC ---------------------------------------------------------------

def _binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    if scores.shape != pos.shape:
        raise EvaluationError("scores and labels differ in length")
    if pos.all() or not pos.any():
        raise EvaluationError("AUC needs both classes")
    return scores, pos


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from midranks; tied positive/negative pairs count 1/2."""
    scores, pos = _binary(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    ranks = stats.rankdata(scores)
    r_pos = ranks[pos].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """ROC vertices, one threshold per distinct score from high to low."""
    scores, pos = _binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tpr = np.r_[0.0, tp[last] / tp[-1]]
    fpr = np.r_[0.0, fp[last] / fp[-1]]
    return list(zip(fpr.tolist(), tpr.tolist()))


def trapezoid_area(points: Sequence[tuple[float, float]]) -> float:
    pts = np.asarray(points)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2.0))


# -- tests -------------------------------------------------------------------

def t_test_two_sample(sample_a, sample_b, equal_var: bool = True) -> TestResult:
    """Two-sided Student's t (pooled variance); ``equal_var=False`` gives Welch."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise EvaluationError("each sample needs at least two values")
    diff = a.mean() - b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if equal_var:
        df = na + nb - 2
        se = math.sqrt(((na - 1) * va + (nb - 1) * vb) / df * (1.0 / na + 1.0 / nb))
    else:
        se = math.sqrt(va / na + vb / nb)
        df = se**4 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)) if se > 0 else na + nb - 2
    kind = "students_t_two_sample" if equal_var else "welch_t_two_sample"
    if se == 0:
        if diff == 0:
            return TestResult(kind, 0.0, 1.0, df)
        return TestResult(kind, math.copysign(math.inf, diff), 0.0, df, degenerate=True)
    t = diff / se
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return TestResult(kind, float(t), p, float(df))


def chi2_independence(table) -> TestResult:
    """Pearson chi-square on an r x c table, no continuity correction."""
    obs = np.asarray(table, dtype=np.float64)
    if obs.ndim != 2 or min(obs.shape) < 2:
        raise EvaluationError("need at least a 2 x 2 table")
    rows, cols = obs.sum(axis=1), obs.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise EvaluationError("table has a zero marginal")
    expected = np.outer(rows, cols) / obs.sum()
    statistic = float(np.sum((obs - expected) ** 2 / expected))
    df = (obs.shape[0] - 1) * (obs.shape[1] - 1)
    return TestResult("chi_squared_independence", statistic, float(stats.chi2.sf(statistic, df)), df)


def kappa_from_confusion(confusion) -> TestResult:
    """Cohen's kappa from a square agreement table (rows: rater A, columns: rater B).

    The p-value is the two-sided normal test of kappa = 0 with the null
    standard error of Fleiss, Cohen and Everitt.
    """
    m = np.asarray(confusion, dtype=np.int64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise EvaluationError("confusion table must be square")
    n = int(m.sum())
    if n == 0:
        raise EvaluationError("no annotations")
    rows, cols = m.sum(axis=1), m.sum(axis=0)
    agree = int(np.trace(m))
    chance = int(np.dot(rows, cols))
    if chance == n * n:
        return TestResult("cohens_kappa", 1.0, 1.0, None, degenerate=True)
    # integer form keeps textbook cases exact
    kappa = (n * agree - chance) / (n * n - chance)
    pa, pb = rows / n, cols / n
    pe = chance / (n * n)
    var0 = pe + pe**2 - float(np.sum(pa * pb * (pa + pb)))
    if var0 <= 0:
        p = 1.0 if kappa == 0 else 0.0
    else:
        z = kappa * (1 - pe) * math.sqrt(n) / math.sqrt(var0)
        p = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return TestResult("cohens_kappa", float(kappa), p, None)


def cohens_kappa(annotations_a, annotations_b) -> TestResult:
    a, b = list(annotations_a), list(annotations_b)
    if len(a) != len(b):
        raise EvaluationError("annotation sequences differ in length")
    cats = sorted(set(a) | set(b), key=str)
    index = {c: i for i, c in enumerate(cats)}
    m = np.zeros((len(cats), len(cats)), dtype=np.int64)
    for x, y in zip(a, b):
        m[index[x], index[y]] += 1
    return kappa_from_confusion(m)


# -- descriptive cohort table ------------------------------------------------

@dataclass
class DescriptiveRow:
    variable: str
    test: TestResult
    # (category, overall count, DR count, no-DR count); continuous rows carry
    # (label, mean, sd) triples instead
    categories: list[tuple] = field(default_factory=list)
    note: str = ""


def _pct(k, n):
    return f"{k} ({100.0 * k / n:.1f}%)" if n else f"{k}"


def descriptive_table(
    records: Sequence[PatientRecord], significant_only: bool = False, alpha: float = 0.05
) -> tuple[list[DescriptiveRow], list[str]]:
    """Compare recurrence vs non-recurrence groups variable by variable.

    Returns the rows and a list of notes for skipped variables.
    """
    labeled = [r for r in records if r.label is not None]
    dr = np.array([r.y > 0 for r in labeled])
    if dr.all() or not dr.any():
        raise EvaluationError("descriptive table needs both groups")
    out, notes = [], []

    ages = np.array([r.age_of_diagnosis for r in labeled])
    if np.ptp(ages) == 0:
        notes.append("age_of_diagnosis: constant, skipped")
    else:
        res = t_test_two_sample(ages[dr], ages[~dr])
        out.append(DescriptiveRow("age_of_diagnosis", res, [
            ("mean (sd)", (ages.mean(), ages.std(ddof=1)), (ages[dr].mean(), ages[dr].std(ddof=1)),
             (ages[~dr].mean(), ages[~dr].std(ddof=1))),
        ]))

    for var in list(DOMAINS) + ["insurance"]:
        values = np.array([getattr(r, var) for r in labeled])
        cats = [c for c in (DOMAINS.get(var) or sorted(set(values))) if np.any(values == c)]
        if len(cats) < 2:
            notes.append(f"{var}: single observed category, skipped")
            continue
        table = np.array([[np.sum((values == c) & dr) for c in cats],
                          [np.sum((values == c) & ~dr) for c in cats]])
        res = chi2_independence(table)
        shown = ["Yes"] if set(cats) == {"Yes", "No"} else cats
        rows = [(c, int(table[0, j] + table[1, j]), int(table[0, j]), int(table[1, j]))
                for j, c in enumerate(cats) if c in shown]
        out.append(DescriptiveRow(var, res, rows))

    if significant_only:
        out = [r for r in out if r.test.p_value < alpha]
    return out, notes


def write_descriptive_tsv(rows: Sequence[DescriptiveRow], records: Sequence[PatientRecord], path) -> None:
    labeled = [r for r in records if r.label is not None]
    n = len(labeled)
    n_dr = sum(1 for r in labeled if r.y > 0)
    n_no = n - n_dr
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["variable", "category", f"overall N={n}", f"DR N={n_dr}", f"No DR N={n_no}", "p_value"])
        for row in rows:
            first = True
            for cat in row.categories:
                if row.variable == "age_of_diagnosis":
                    cells = [f"{m:.1f} ({s:.1f})" for m, s in cat[1:]]
                else:
                    cells = [_pct(cat[1], n), _pct(cat[2], n_dr), _pct(cat[3], n_no)]
                w.writerow([row.variable if first else "", cat[0], *cells, row.test.p_display if first else ""])
                first = False


# -- cross-validation --------------------------------------------------------

@dataclass
class LearnerSettings:
    C: float = 1.0
    tol: float = 1e-4
    seed: int = 0
    max_epochs: int = 1000


@dataclass
class EvalReport:
    variant: str
    k: int
    replicates: int
    base_seed: int
    aggregation: str
    fold_aucs: list[list[float]]
    replicate_aucs: list[float]
    roc_curves: list[dict]
    feature_counts: dict
    fold_positive_counts: list[list[int]] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.replicate_aucs))

    @property
    def sd(self) -> float:
        if len(self.replicate_aucs) < 2:
            return 0.0
        return float(np.std(self.replicate_aucs, ddof=1))

    @property
    def summary(self) -> str:
        return format_mean_sd(self.mean, self.sd)

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "k": self.k,
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "aggregation": self.aggregation,
            "auc_mean": self.mean,
            "auc_sd": self.sd,
            "auc_summary": self.summary,
            "replicate_aucs": self.replicate_aucs,
            "fold_aucs": self.fold_aucs,
            "fold_positive_counts": self.fold_positive_counts,
            "feature_counts": self.feature_counts,
        }

    def write(self, out_dir, prefix: str | None = None) -> list[Path]:
        """JSON summary plus one ROC TSV per curve; returns written paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        prefix = prefix or self.variant
        paths = [out_dir / f"{prefix}_summary.json"]
        with open(paths[0], "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        for curve in self.roc_curves:
            p = out_dir / f"{prefix}_roc_r{curve['replicate']:02d}.tsv"
            with open(p, "w", encoding="utf-8") as fh:
                fh.write("fpr\ttpr\treplicate\tfold\n")
                for fpr, tpr in curve["points"]:
                    fh.write(f"{fpr!r}\t{tpr!r}\t{curve['replicate']}\t{curve['fold']}\n")
            paths.append(p)
        return paths


def _fit_and_score(train_data, test_data, variant, settings: LearnerSettings, seed: int):
    """Fit features and model on ``train_data``; return held-out probabilities."""
    from .pipeline import Cohort, VariantPipeline

    if isinstance(train_data, Cohort):
        pipe = VariantPipeline(variant).fit(train_data)
        xtr, xte = pipe.transform(train_data), pipe.transform(test_data)
    else:
        xtr, xte = train_data, test_data
    model = learner.train(xtr, C=settings.C, seed=seed, tol=settings.tol, max_epochs=settings.max_epochs)
    return learner.predict_proba(model, xte), model, xtr


def _take(data, rows):
    return data.subset(rows) if hasattr(data, "subset") else data.take_rows(np.flatnonzero(rows))


def repeated_cv(
    data,
    variant: VariantConfig | str = "filtered_plus_clinical",
    k: int = 5,
    replicates: int = 20,
    base_seed: int = 0,
    settings: LearnerSettings | None = None,
    aggregation: str = "pooled",
) -> EvalReport:
    """Repeated stratified k-fold CV.

    ``data`` is a :class:`~distrec.pipeline.Cohort` (features refitted inside
    every fold) or an already-built :class:`FeatureMatrix`.  Replicate ``r``
    uses seed ``base_seed + r`` for its folds and for the learner.  The
    replicate AUC pools held-out probabilities across folds, or averages the
    fold AUCs with ``aggregation="fold_mean"``.
    """
    if k < 2:
        raise EvaluationError("k must be at least 2")
    if aggregation not in ("pooled", "fold_mean"):
        raise EvaluationError(f"unknown aggregation {aggregation!r}")
    settings = settings or LearnerSettings()
    variant = VariantConfig(variant) if isinstance(variant, str) else variant
    labels = np.asarray(data.labels)
    n = len(labels)
    fold_aucs, replicate_aucs, curves, pos_counts = [], [], [], []
    for r in range(replicates):
        seed = base_seed + r
        folds = stratified_kfold(labels, k, seed)
        pooled = np.empty(n)
        aucs, counts = [], []
        for f in range(k):
            held = folds == f
            y_held = labels[held]
            counts.append(int(np.sum(y_held > 0)))
            if np.all(y_held > 0) or np.all(y_held <= 0):
                raise EvaluationError(
                    f"replicate {r} fold {f} ({int(held.sum())} rows) holds a single class; "
                    "use more data or fewer folds")
            probs, _, _ = _fit_and_score(_take(data, ~held), _take(data, held), variant, settings, seed)
            pooled[held] = probs
            aucs.append(auc(probs, y_held))
        fold_aucs.append(aucs)
        pos_counts.append(counts)
        replicate_aucs.append(auc(pooled, labels) if aggregation == "pooled" else float(np.mean(aucs)))
        curves.append({"replicate": r, "fold": "all", "points": roc_points(pooled, labels)})

    feature_counts = _feature_counts(data, variant)
    return EvalReport(variant.variant, k, replicates, base_seed, aggregation, fold_aucs,
                      replicate_aucs, curves, feature_counts, pos_counts)


def _feature_counts(data, variant) -> dict:
    from .pipeline import Cohort, VariantPipeline

    matrix = VariantPipeline(variant).fit_transform(data) if isinstance(data, Cohort) else data
    return matrix.feature_report()


def holdout_eval(train_data, test_data, variant="filtered_plus_clinical", settings: LearnerSettings | None = None):
    """Train on one cohort, score another; returns (AUC, model, test probabilities)."""
    settings = settings or LearnerSettings()
    variant = VariantConfig(variant) if isinstance(variant, str) else variant
    probs, model, _ = _fit_and_score(train_data, test_data, variant, settings, settings.seed)
    return auc(probs, test_data.labels), model, probs
