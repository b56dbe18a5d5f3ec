"""Command-line front end: ``distrec {preprocess,train,evaluate,synth,report}``.

Settings come from an INI run config (see ``example_config.ini`` shipped in
``distrec/data``); ``--variant``, ``--seed`` and ``--out`` override it.
Relative paths in the config resolve against the config file's directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as dt
import json
import sys
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import concept_tagger as ct
from . import synth
from .clinical import derive_radiation, derive_targeted_therapy, read_aux_csv, read_patients_csv
from .corpus import IngestError, ingest, load_cues, read_notes_jsonl
from .featurizer import VARIANTS, VariantConfig
from .learner import rank_coefficients, train
from .pipeline import (
    DEFAULT_CENSOR_DATE,
    VariantPipeline,
    cohort_from_sentences,
    preprocess,
    read_sentence_store,
    write_sentence_store,
)
from .stats_eval import (
    EvalReport,
    LearnerSettings,
    descriptive_table,
    holdout_eval,
    repeated_cv,
    stratified_split,
    t_test_two_sample,
    write_descriptive_tsv,
)

SENTENCE_STORE = "sentences.jsonl"
PREPROCESS_REPORT = "preprocess_report.json"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    base_dir: Path = Path(".")
    notes: Path | None = None
    patients: Path | None = None
    lexicon: Path | None = None
    cues: Path | None = None
    output: Path = Path("out")
    generator: Path | None = None
    medications: Path | None = None
    radiation_sites: Path | None = None
    censor_date: dt.date = DEFAULT_CENSOR_DATE
    filtering: bool = True
    variant: VariantConfig = field(default_factory=VariantConfig)
    learner: LearnerSettings = field(default_factory=LearnerSettings)
    k: int = 5
    replicates: int = 20
    base_seed: int = 0
    ratio: float = 0.7
    mode: str = "both"
    compare: tuple[str, ...] = ()
    aggregation: str = "pooled"
    synth_n: int | None = None
    sentence_store: Path | None = None

    @property
    def store(self) -> Path:
        return self.sentence_store or self.output / SENTENCE_STORE


_PATH_KEYS = ("notes", "patients", "lexicon", "cues", "output", "generator", "medications", "radiation_sites")
_CONFIG_PATHS = {"store": "sentence_store"}
_KNOWN = {
    "paths": set(_PATH_KEYS) | set(_CONFIG_PATHS),
    "preprocess": {"censor_date", "filtering"},
    "model": {"variant", "chi2_keep_fraction", "concept_encoding", "C", "tol", "seed", "max_epochs"},
    "evaluate": {"k", "replicates", "base_seed", "ratio", "mode", "compare", "aggregation"},
    "synth": {"n"},
}


def load_config(path: Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise UsageError(f"bad config {path}: {exc}".replace("\n", " ")) from None
    for section in cp.sections():
        if section not in _KNOWN:
            raise UsageError(f"config: unknown section [{section}]")
        for key in cp[section]:
            if key not in _KNOWN[section]:
                raise UsageError(f"config: unknown key {section}.{key}")
    base = Path(path).resolve().parent
    cfg = RunConfig(base_dir=base)

    def conv(section, key, fn):
        try:
            return fn(cp[section][key])
        except (ValueError, KeyError) as exc:
            raise UsageError(f"config: {section}.{key}: {exc}") from None

    paths = cp["paths"] if "paths" in cp else {}
    for key in _PATH_KEYS:
        if key in paths and paths[key].strip():
            setattr(cfg, key, base / paths[key].strip())
    for key, attr in _CONFIG_PATHS.items():
        if key in paths and paths[key].strip():
            setattr(cfg, attr, base / paths[key].strip())
    if "output" not in paths:
        cfg.output = base / "out"
    if "preprocess" in cp:
        sec = cp["preprocess"]
        if "censor_date" in sec:
            cfg.censor_date = conv("preprocess", "censor_date", dt.date.fromisoformat)
        if "filtering" in sec:
            cfg.filtering = conv("preprocess", "filtering", lambda _: cp.getboolean("preprocess", "filtering"))
    if "model" in cp:
        sec = cp["model"]
        try:
            cfg.variant = VariantConfig(
                sec.get("variant", "filtered_plus_clinical"),
                float(sec.get("chi2_keep_fraction", 0.05)),
                sec.get("concept_encoding", "count"),
            )
            cfg.learner = LearnerSettings(
                C=float(sec.get("C", 1.0)), tol=float(sec.get("tol", 1e-4)),
                seed=int(sec.get("seed", 0)), max_epochs=int(sec.get("max_epochs", 1000)),
            )
        except ValueError as exc:
            raise UsageError(f"config [model]: {exc}") from None
    if "evaluate" in cp:
        sec = cp["evaluate"]
        for key, fn in (("k", int), ("replicates", int), ("base_seed", int), ("ratio", float),
                        ("mode", str), ("aggregation", str)):
            if key in sec:
                setattr(cfg, key, conv("evaluate", key, fn))
        if "compare" in sec:
            cfg.compare = tuple(v.strip() for v in sec["compare"].split(",") if v.strip())
        if cfg.mode not in ("cv", "holdout", "both"):
            raise UsageError(f"config: evaluate.mode must be cv, holdout or both, got {cfg.mode!r}")
        for v in cfg.compare:
            if v not in VARIANTS:
                raise UsageError(f"config: evaluate.compare: unknown variant {v!r}")
    if "synth" in cp and "n" in cp["synth"]:
        cfg.synth_n = conv("synth", "n", int)
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        p = getattr(cfg, name)
        if p is None:
            raise UsageError(f"config: paths.{name} is required for this command")
        if not Path(p).exists():
            raise FileNotFoundError(f"{name} file not found: {p}")


def _writable_output(cfg: RunConfig) -> Path:
    cfg.output.mkdir(parents=True, exist_ok=True)
    return cfg.output


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _records(cfg: RunConfig):
    warnings = Counter()
    records, rejects = read_patients_csv(cfg.patients, warnings)
    if cfg.medications is not None or cfg.radiation_sites is not None:
        meds = read_aux_csv(cfg.medications) if cfg.medications is not None else None
        sites = read_aux_csv(cfg.radiation_sites) if cfg.radiation_sites is not None else None
        records = [
            replace(
                r,
                **({"targeted_therapy": derive_targeted_therapy(meds.get(r.patient_id, []))} if meds is not None else {}),
                **({"radiation": derive_radiation(sites.get(r.patient_id, []))} if sites is not None else {}),
            )
            for r in records
        ]
    return records, rejects, warnings


def _lexicon(cfg: RunConfig):
    return ct.load_lexicon(cfg.lexicon)


def _cohort(cfg: RunConfig):
    if not cfg.store.exists():
        raise FileNotFoundError(f"sentence store not found: {cfg.store} (run preprocess first)")
    _require(cfg, "patients")
    records, _, _ = _records(cfg)
    return cohort_from_sentences(read_sentence_store(cfg.store), records, _lexicon(cfg))


# -- commands ----------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> int:
    _require(cfg, "notes", "patients")
    if cfg.cues is not None:
        _require(cfg, "cues")
    out = _writable_output(cfg)
    corpus = ingest(read_notes_jsonl(cfg.notes))
    records, rejects, warnings = _records(cfg)
    cues = load_cues(cfg.cues)
    sentences, report = preprocess(corpus, records, cues, cfg.censor_date, cfg.filtering)
    write_sentence_store(sentences, out / SENTENCE_STORE)
    payload = report.to_json()
    payload["patient_rejects"] = rejects
    payload["patient_warnings"] = dict(sorted(warnings.items()))
    _write_json(out / PREPROCESS_REPORT, payload)
    print(f"notes {report.notes_in} -> {report.notes_out}; sentences {report.sentences_in} -> "
          f"{report.sentences_out} ({report.sentences_cue_dropped} cue-dropped)")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    cohort = _cohort(cfg)
    out = _writable_output(cfg)
    matrix = VariantPipeline(cfg.variant).fit_transform(cohort)
    s = cfg.learner
    model = train(matrix, C=s.C, seed=s.seed, tol=s.tol, max_epochs=s.max_epochs)
    model.save(out / "model.json")
    report = {"variant": cfg.variant.variant, "patients": len(cohort), **matrix.feature_report()}
    _write_json(out / "feature_report.json", report)
    _write_coefficients(out / "coefficients.tsv", model)
    print(f"{cfg.variant.variant}: {report['variables']} variables, {report['columns']} columns, "
          f"{model.epochs} epochs{'' if model.converged else ' (not converged)'}")
    return 0


def _write_coefficients(path: Path, model) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["rank", "feature", "source", "coefficient"])
        for i, (name, source, coef) in enumerate(rank_coefficients(model), 1):
            w.writerow([i, name, source, repr(coef)])


def cmd_evaluate(cfg: RunConfig) -> int:
    cohort = _cohort(cfg)
    out = _writable_output(cfg)
    summary: dict = {"variant": cfg.variant.variant, "patients": len(cohort),
                     "positives": int(np.sum(cohort.labels > 0))}
    variants = [cfg.variant] + [replace(cfg.variant, variant=v) for v in cfg.compare if v != cfg.variant.variant]
    settings = cfg.learner
    if cfg.mode in ("cv", "both"):
        reports: dict[str, EvalReport] = {}
        for v in variants:
            rep = repeated_cv(cohort, v, cfg.k, cfg.replicates, cfg.base_seed, settings, cfg.aggregation)
            rep.write(out, prefix=f"cv_{v.variant}")
            reports[v.variant] = rep
        summary["cv"] = {name: {"auc": r.summary, "auc_mean": r.mean, "auc_sd": r.sd,
                                "features": r.feature_counts} for name, r in reports.items()}
        main = reports[cfg.variant.variant]
        comparisons = {}
        for name, rep in reports.items():
            if name != cfg.variant.variant:
                res = t_test_two_sample(main.replicate_aucs, rep.replicate_aucs)
                comparisons[name] = {"t": res.statistic, "df": res.df, "p_value": res.p_value,
                                     "p_display": res.p_display}
        if comparisons:
            summary["t_test_vs"] = comparisons
    if cfg.mode in ("holdout", "both"):
        mask = stratified_split(cohort.labels, cfg.ratio, cfg.base_seed)
        train_part, test_part = cohort.subset(mask), cohort.subset(~mask)
        holdout = {}
        for v in variants:
            value, model, _ = holdout_eval(train_part, test_part, v, settings)
            holdout[v.variant] = value
            _write_coefficients(out / f"coefficients_{v.variant}.tsv", model)
        summary["holdout"] = {"train": len(train_part), "test": len(test_part),
                              "train_positives": int(np.sum(train_part.labels > 0)),
                              "test_positives": int(np.sum(test_part.labels > 0)), "auc": holdout}
    rows, notes = descriptive_table(cohort.records)
    write_descriptive_tsv(rows, cohort.records, out / "descriptive.tsv")
    summary["descriptive_notes"] = notes
    _write_json(out / "evaluation.json", summary)
    for name, block in summary.get("cv", {}).items():
        print(f"cv {name}: {block['auc']}")
    for name, value in summary.get("holdout", {}).get("auc", {}).items():
        print(f"holdout {name}: {value:.4f}")
    return 0


def cmd_synth(cfg: RunConfig, seed: int | None = None) -> int:
    if cfg.generator is not None:
        _require(cfg, "generator")
    spec = synth.load_spec(cfg.generator)
    if cfg.synth_n is not None:
        spec = spec.replace(n=cfg.synth_n)
    if seed is not None:
        spec = spec.replace(seed=seed)
    lexicon = synth.synth_lexicon(_lexicon(cfg))
    cohort = synth.generate(spec, lexicon)
    oracle = synth.bayes_oracle(spec, cohort, lexicon)
    out = _writable_output(cfg)
    synth.write_cohort(cohort, out, spec, oracle, lexicon)
    _write_run_config(out, spec)
    shown = "undefined" if oracle.bayes_auc is None else f"{oracle.bayes_auc:.4f}"
    print(f"{spec.n} patients, {len(cohort.notes)} notes, {int(np.sum(cohort.labels > 0))} positive; "
          f"bayes AUC {shown}")
    return 0


def _write_run_config(out: Path, spec) -> None:
    """A run config next to the synthetic files, so later commands need no edits."""
    text = (
        "# written by `distrec synth`\n"
        "[paths]\nnotes = notes.jsonl\npatients = patients.csv\nlexicon = lexicon.txt\n"
        "output = run\n\n"
        f"[preprocess]\ncensor_date = {spec.censor_date.isoformat()}\nfiltering = yes\n"
    )
    (out / "config.ini").write_text(text, encoding="utf-8")


def cmd_report(cfg: RunConfig) -> int:
    path = cfg.output / "evaluation.json"
    if not path.exists():
        raise FileNotFoundError(f"no evaluation results at {path} (run evaluate first)")
    with open(path, encoding="utf-8") as fh:
        ev = json.load(fh)
    lines = [f"{'Features':<24}{'Number of Features':>20}{'CV AUC':>16}{'Held-out AUC':>16}"]
    names = list(dict.fromkeys(list(ev.get("cv", {})) + list(ev.get("holdout", {}).get("auc", {}))))
    for name in names:
        cv = ev.get("cv", {}).get(name)
        ho = ev.get("holdout", {}).get("auc", {}).get(name)
        nfeat = str(cv["features"]["variables"]) if cv else "-"
        lines.append(f"{name:<24}{nfeat:>20}{cv['auc'] if cv else '-':>16}"
                     f"{f'{ho:.2f}' if ho is not None else '-':>16}")
    for name, res in ev.get("t_test_vs", {}).items():
        lines.append(f"t-test {ev['variant']} vs {name}: p = {res['p_display']}")
    text = "\n".join(lines) + "\n"
    (cfg.output / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distrec", description="Distant recurrence phenotyping pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("preprocess", "train", "evaluate", "synth", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI run config")
        p.add_argument("--variant", choices=VARIANTS, help="feature variant")
        p.add_argument("--seed", type=int, help="overrides learner seed, CV base seed and generator seed")
        p.add_argument("--out", type=Path, help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            # later stages keep reading the store written under the configured output
            if args.command in ("train", "evaluate"):
                cfg.sentence_store = cfg.store
            cfg.output = args.out
        if args.variant is not None:
            cfg.variant = replace(cfg.variant, variant=args.variant)
        if args.seed is not None:
            cfg.learner = replace(cfg.learner, seed=args.seed)
            cfg.base_seed = args.seed
        if args.command == "synth":
            return cmd_synth(cfg, args.seed)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.exit(2, f"distrec {args.command}: error: {exc}\n")
    except (OSError, ValueError, KeyError, RuntimeError, IngestError) as exc:
        msg = str(exc).replace("\n", " ") or type(exc).__name__
        print(f"distrec {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
