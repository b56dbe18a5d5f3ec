"""Dictionary concept tagging with a span-length surrogate for MetaMap's MMI score.

Every lexicon phrase occurrence in a sentence is a candidate mention scored by
its length in tokens.  Where several concepts share a span the highest score
wins, ties going to the lexicographically smallest CUI; overlapping spans are
then resolved longest first, left to right.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .corpus import tokenize

_CUI = re.compile(r"^C\d{7}$")


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class LexiconEntry:
    cui: str
    preferred_name: str
    phrases: tuple[tuple[str, ...], ...]
    in_custom_dictionary: bool = True

    def __post_init__(self):
        if not _CUI.match(self.cui):
            raise LexiconError(f"malformed CUI {self.cui!r}")
        if not self.phrases:
            raise LexiconError(f"{self.cui}: no phrases")
        if len(set(self.phrases)) != len(self.phrases):
            raise LexiconError(f"{self.cui}: repeated phrase")

    def to_line(self) -> str:
        phrases = ";".join(" ".join(p) for p in self.phrases)
        return f"{self.cui}|{self.preferred_name}|{phrases}|dict:{int(self.in_custom_dictionary)}"


@dataclass(frozen=True)
class ConceptMention:
    cui: str
    note_id: str
    sentence_index: int
    token_span: tuple[int, int]
    score: float
    negated: bool


def parse_lexicon(lines: Iterable[str], source: str = "<lexicon>") -> list[LexiconEntry]:
    entries: list[LexiconEntry] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 4 or not parts[3].startswith("dict:") or parts[3][5:] not in ("0", "1"):
            raise LexiconError(f"{source}:{lineno}: expected 'CUI|name|phrase;...|dict:0|1'")
        cui = parts[0].strip()
        phrases = []
        for p in parts[2].split(";"):
            toks = tuple(tokenize(p))
            if toks and toks not in phrases:
                phrases.append(toks)
        try:
            entry = LexiconEntry(cui, parts[1].strip(), tuple(phrases), parts[3][5:] == "1")
        except LexiconError as exc:
            raise LexiconError(f"{source}:{lineno}: {exc}") from None
        if cui in seen:
            raise LexiconError(f"{source}:{lineno}: duplicate CUI {cui}")
        seen.add(cui)
        entries.append(entry)
    return entries


def load_lexicon(path=None) -> list[LexiconEntry]:
    """Read a lexicon file; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("distrec.data").joinpath("default_lexicon.txt").read_text("utf-8")
        return parse_lexicon(text.splitlines(), "default_lexicon.txt")
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh, str(path))


def write_lexicon(entries: Iterable[LexiconEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# CUI|preferred_name|phrase1;phrase2;...|dict:{0,1}\n")
        for e in entries:
            fh.write(e.to_line() + "\n")


class PhraseIndex:
    """Token trie over every lexicon phrase; immutable once built."""

    def __init__(self, lexicon: Sequence[LexiconEntry]):
        self.lexicon = tuple(lexicon)
        self._root: dict = {}
        for entry in self.lexicon:
            for phrase in entry.phrases:
                node = self._root
                for tok in phrase:
                    node = node.setdefault(tok, {})
                node.setdefault(None, set()).add(entry.cui)

    def matches(self, tokens: Sequence[str]) -> list[tuple[int, int, str]]:
        """One ``(start, end, cui)`` per matched span, best CUI already chosen."""
        out = []
        for start in range(len(tokens)):
            node = self._root
            for end in range(start, len(tokens)):
                node = node.get(tokens[end])
                if node is None:
                    break
                cuis = node.get(None)
                if cuis:
                    out.append((start, end + 1, min(cuis)))
        return out


def _index(lexicon) -> PhraseIndex:
    return lexicon if isinstance(lexicon, PhraseIndex) else PhraseIndex(lexicon)


def tag(
    sentence,
    negation_mask: Sequence[bool],
    lexicon,
    note_id: str | None = None,
    sentence_index: int | None = None,
) -> list[ConceptMention]:
    """Tag one sentence.  ``sentence`` is a :class:`Sentence` or a token list."""
    tokens = getattr(sentence, "tokens", sentence)
    if len(negation_mask) != len(tokens):
        raise ValueError(f"mask length {len(negation_mask)} != token count {len(tokens)}")
    if note_id is None:
        note_id = getattr(sentence, "note_id", "")
    if sentence_index is None:
        sentence_index = getattr(sentence, "index", 0)

    # all spans at a given (start, end) carry the same score, so the
    # per-span winner is already the smallest CUI
    candidates = sorted(_index(lexicon).matches(tokens), key=lambda m: (m[0] - m[1], m[0]))
    taken = [False] * len(tokens)
    chosen = []
    for start, end, cui in candidates:
        if any(taken[start:end]):
            continue
        for i in range(start, end):
            taken[i] = True
        chosen.append((start, end, cui))
    chosen.sort()
    return [
        ConceptMention(cui, note_id, sentence_index, (s, e), float(e - s), any(negation_mask[s:e]))
        for s, e, cui in chosen
    ]


def aggregate(
    mentions: Iterable[ConceptMention],
    custom_dictionary: Iterable[str] | Iterable[LexiconEntry] | None,
    min_score: float = 1.0,
) -> Counter:
    """Per-CUI counts of non-negated, in-dictionary mentions scoring ``>= min_score``.

    ``custom_dictionary`` may be CUIs or lexicon entries (only entries flagged
    ``in_custom_dictionary`` count).  ``None`` disables the dictionary filter,
    which is how the full concept set is counted.
    """
    allowed = None if custom_dictionary is None else dictionary_cuis(custom_dictionary)
    counts: Counter = Counter()
    for m in mentions:
        if m.negated or m.score < min_score:
            continue
        if allowed is not None and m.cui not in allowed:
            continue
        counts[m.cui] += 1
    return counts


def dictionary_cuis(entries) -> set[str]:
    out = set()
    for e in entries:
        if isinstance(e, LexiconEntry):
            if e.in_custom_dictionary:
                out.add(e.cui)
        else:
            out.add(e)
    return out


def write_concept_vectors(vectors: Mapping[str, Mapping[str, int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pid, counts in vectors.items():
            fh.write(json.dumps({"patient_id": pid, "counts": dict(sorted(counts.items()))}) + "\n")


def read_concept_vectors(path) -> dict[str, Counter]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                out[row["patient_id"]] = Counter(row["counts"])
    return out
