"""Clinical note ingestion, sentence segmentation and contextual-cue handling."""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Iterator, Mapping, Sequence

logger = logging.getLogger(__name__)

NOTE_TYPES = (
    "progress",
    "pathology",
    "telephone",
    "assessment_plan",
    "problem_overview",
    "treatment_summary",
    "radiology",
    "lab",
    "procedural",
    "nursing",
    "other",
)

CUE_CATEGORIES = (
    "negation_sentence",
    "uncertainty_sentence",
    "negex_trigger_pre",
    "negex_trigger_post",
    "negex_terminator",
)
SENTENCE_CUES = ("negation_sentence", "uncertainty_sentence")

NEGEX_WINDOW = 5

_SENTENCE_BREAK = re.compile(r"(?<=[.?!])\s+")
_TOKEN = re.compile(r"[A-Za-z0-9]+")
_NON_PRINTABLE = re.compile(r"[^\x20-\x7e]")
_OTHER_SPACE = re.compile(r"[\t\r\f\v]")


class IngestError(Exception):
    """The note stream could not be read at all."""


class CueFileError(ValueError):
    pass


@dataclass(frozen=True)
class ClinicalNote:
    patient_id: str
    note_id: str
    note_type: str
    date: dt.date
    text: str

    def to_json(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "note_id": self.note_id,
            "note_type": self.note_type,
            "date": self.date.isoformat(),
            "text": self.text,
        }


@dataclass(frozen=True)
class Sentence:
    note_id: str
    index: int
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class ContextCue:
    phrase: tuple[str, ...]
    category: str

    def __post_init__(self):
        if not self.phrase:
            raise ValueError("cue phrase must be non-empty")
        if self.category not in CUE_CATEGORIES:
            raise ValueError(f"unknown cue category {self.category!r}")


@dataclass
class Corpus:
    notes: list[ClinicalNote] = field(default_factory=list)
    rejects: int = 0
    counts: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.notes)

    def by_patient(self) -> dict[str, list[ClinicalNote]]:
        out: dict[str, list[ClinicalNote]] = {}
        for note in self.notes:
            out.setdefault(note.patient_id, []).append(note)
        return out


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN.findall(text)]


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def _parse_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value).strip()[:10])


# -- ingestion ---------------------------------------------------------------

def ingest(records: Iterable[Mapping]) -> Corpus:
    """Build a corpus from raw note rows.

    Rows lacking ``patient_id``, ``date`` or ``text``, rows with an unparseable
    date and rows reusing a ``note_id`` are rejected and counted.  Notes whose
    whitespace-normalized text repeats an earlier note of the same patient are
    collapsed onto the earliest-dated copy.
    """
    try:
        rows = list(records)
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read note stream: {exc}") from exc

    accepted: list[ClinicalNote] = []
    seen_ids: set[str] = set()
    rejects = 0
    for lineno, row in enumerate(rows):
        if row is None or not isinstance(row, Mapping):
            rejects += 1
            continue
        pid = row.get("patient_id")
        date = row.get("date")
        text = row.get("text")
        if pid in (None, "") or date in (None, "") or not isinstance(text, str):
            rejects += 1
            continue
        try:
            day = _parse_date(date)
        except ValueError:
            rejects += 1
            continue
        note_id = str(row.get("note_id") or f"{pid}:{lineno}")
        if note_id in seen_ids:
            rejects += 1
            continue
        seen_ids.add(note_id)
        note_type = str(row.get("note_type") or "other")
        if note_type not in NOTE_TYPES:
            note_type = "other"
        accepted.append(ClinicalNote(str(pid), note_id, note_type, day, text))

    # earliest copy wins; stable sort keeps input order among same-day copies
    order = sorted(range(len(accepted)), key=lambda i: accepted[i].date)
    keep: set[int] = set()
    seen_text: set[tuple[str, str]] = set()
    duplicates = 0
    for i in order:
        key = (accepted[i].patient_id, _normalize_ws(accepted[i].text))
        if key in seen_text:
            duplicates += 1
            continue
        seen_text.add(key)
        keep.add(i)
    notes = [n for i, n in enumerate(accepted) if i in keep]
    return Corpus(notes, rejects, Counter(duplicates=duplicates))


def read_notes_jsonl(path) -> Iterator[Mapping | None]:
    """Yield one row per line; lines that are not JSON objects yield ``None``."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
    with fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                yield None
                continue
            yield row if isinstance(row, dict) else None


def write_notes_jsonl(notes: Iterable[ClinicalNote], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for note in notes:
            fh.write(json.dumps(note.to_json(), sort_keys=True) + "\n")


def filter_notes(
    corpus: Corpus,
    diagnosis_date_by_patient: Mapping[str, dt.date],
    censor_date: dt.date,
) -> Corpus:
    """Keep notes written after diagnosis, on or before ``censor_date``, mentioning "breast"."""
    kept = []
    counts = Counter(corpus.counts)
    for note in corpus.notes:
        diagnosed = diagnosis_date_by_patient.get(note.patient_id)
        if diagnosed is None:
            counts["no_diagnosis_date"] += 1
            continue
        if note.date <= diagnosed:
            counts["before_diagnosis"] += 1
        elif note.date > censor_date:
            counts["after_censor"] += 1
        elif "breast" not in note.text.lower():
            counts["no_breast_mention"] += 1
        else:
            kept.append(note)
    if counts["no_diagnosis_date"]:
        logger.warning("%d notes dropped: patient has no diagnosis date", counts["no_diagnosis_date"])
    return Corpus(kept, corpus.rejects, counts)


# -- segmentation ------------------------------------------------------------

def clean_text(text: str) -> str:
    return _NON_PRINTABLE.sub("", _OTHER_SPACE.sub(" ", text))


def segment(note: ClinicalNote) -> list[Sentence]:
    sentences = []
    for line in note.text.split("\n"):
        for chunk in _SENTENCE_BREAK.split(clean_text(line)):
            tokens = tokenize(chunk)
            if tokens:
                sentences.append(Sentence(note.note_id, len(sentences), chunk.strip(), tuple(tokens)))
    return sentences


# -- contextual cues ---------------------------------------------------------

def parse_cues(lines: Iterable[str], source: str = "<cues>") -> list[ContextCue]:
    """Parse ``phrase|category|inflection1;inflection2`` lines.

    Each inflection becomes its own cue in the same category.  Blank lines and
    ``#`` comments are skipped.
    """
    cues: list[ContextCue] = []
    seen = set()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) not in (2, 3):
            raise CueFileError(f"{source}:{lineno}: expected 'phrase|category|inflections'")
        phrase, category = parts[0], parts[1].strip()
        if category not in CUE_CATEGORIES:
            raise CueFileError(f"{source}:{lineno}: unknown category {category!r}")
        forms = [phrase] + (parts[2].split(";") if len(parts) == 3 else [])
        for form in forms:
            toks = tuple(tokenize(form))
            if not toks:
                if form is phrase:
                    raise CueFileError(f"{source}:{lineno}: empty cue phrase")
                continue
            if (toks, category) not in seen:
                seen.add((toks, category))
                cues.append(ContextCue(toks, category))
    return cues


def load_cues(path=None) -> list[ContextCue]:
    """Load a cue lexicon; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("distrec.data").joinpath("default_cues.txt").read_text("utf-8")
        return parse_cues(text.splitlines(), "default_cues.txt")
    with open(path, encoding="utf-8") as fh:
        return parse_cues(fh, str(path))


def _find(tokens: Sequence[str], phrase: Sequence[str]) -> Iterator[int]:
    n = len(phrase)
    first = phrase[0]
    for i in range(len(tokens) - n + 1):
        if tokens[i] == first and tuple(tokens[i:i + n]) == tuple(phrase):
            yield i


def has_sentence_cue(sentence: Sentence, cues: Iterable[ContextCue]) -> bool:
    return any(
        c.category in SENTENCE_CUES and next(_find(sentence.tokens, c.phrase), None) is not None
        for c in cues
    )


def drop_cued_sentences(sentences: Iterable[Sentence], cues: Sequence[ContextCue]) -> tuple[list[Sentence], int]:
    sentence_cues = [c for c in cues if c.category in SENTENCE_CUES]
    kept = []
    dropped = 0
    for s in sentences:
        if has_sentence_cue(s, sentence_cues):
            dropped += 1
        else:
            kept.append(s)
    return kept, dropped


def negex_scope(sentence: Sentence | Sequence[str], cues: Iterable[ContextCue], window: int = NEGEX_WINDOW) -> list[bool]:
    """Per-token negation mask.

    Every trigger occurrence contributes a scope: up to ``window`` tokens after
    a pre-trigger or before a post-trigger, cut short at the first terminator.
    Scopes are unioned; trigger tokens themselves are not marked.
    """
    tokens = sentence.tokens if isinstance(sentence, Sentence) else tuple(sentence)
    n = len(tokens)
    mask = [False] * n
    cues = list(cues)
    stop = [False] * n
    for c in cues:
        if c.category == "negex_terminator":
            for i in _find(tokens, c.phrase):
                for j in range(i, i + len(c.phrase)):
                    stop[j] = True
    for c in cues:
        if c.category == "negex_trigger_pre":
            for i in _find(tokens, c.phrase):
                j = i + len(c.phrase)
                while j < min(n, i + len(c.phrase) + window) and not stop[j]:
                    mask[j] = True
                    j += 1
        elif c.category == "negex_trigger_post":
            for i in _find(tokens, c.phrase):
                j = i - 1
                while j >= max(0, i - window) and not stop[j]:
                    mask[j] = True
                    j -= 1
    return mask
