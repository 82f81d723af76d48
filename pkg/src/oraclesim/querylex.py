"""Lexical metrics for oracle answers and the query taxonomy classifier.

Answers are reduced to a :class:`LexicalProfile` (word count, Shannon
entropy, modal and hedge densities, polarity, subjectivity) and corpora of
labelled query/answer pairs are summarised per :class:`QueryCategory`.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

APOSTROPHES = "'’"
NEGATORS = frozenset({"not", "no", "never", "nor", "neither", "none", "nothing"})

CSV_HEADER = (
    "category,occurrences,avg_word_count,avg_entropy,avg_modal_density,"
    "avg_hedge_density,avg_polarity,avg_subjectivity"
)


class LexiconUnavailable(RuntimeError):
    pass


class DuplicateId(ValueError):
    pass


class CorpusError(ValueError):
    """A corpus line failed to parse or validate."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class QueryCategory(str, Enum):
    DISCERNIBLE = "Discernible"
    SANCTIONED = "Sanctioned"
    RECONDITE = "Recondite"
    AMBIGUOUS = "Ambiguous"
    NON_EVENT = "NonEvent"
    COMPUTATIONAL = "Computational"

    def __str__(self) -> str:
        return self.value


class Answerability(str, Enum):
    MANY_OBSERVERS = "ManyObservers"
    AUTHORITY_SUBSET = "AuthoritySubset"
    SINGLE_EXCLUSIVE_SOURCE = "SingleExclusiveSource"
    NO_ONE = "NoOne"


@dataclass(frozen=True)
class QueryFeatures:
    answerable_by: Answerability
    is_pure_computation: bool = False
    honest_interpretation_conflict: bool = False

    def __post_init__(self):
        if not isinstance(self.answerable_by, Answerability):
            object.__setattr__(self, "answerable_by", Answerability(self.answerable_by))
        if self.answerable_by is Answerability.NO_ONE and self.is_pure_computation:
            raise ValueError("a pure computation is always answerable by someone")


@dataclass(frozen=True)
class LexicalProfile:
    word_count: int = 0
    shannon_entropy: float = 0.0
    modal_density: float = 0.0
    hedge_density: float = 0.0
    polarity: float = 0.0
    subjectivity: float = 0.0


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    category: QueryCategory
    question: str
    answer: str


@dataclass(frozen=True)
class CategoryAggregate:
    category: QueryCategory
    occurrences: int
    avg_word_count: float
    avg_entropy: float
    avg_modal_density: float
    avg_hedge_density: float
    avg_polarity: float
    avg_subjectivity: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["category"] = self.category.value
        return d


@dataclass(frozen=True)
class Lexicon:
    modals: frozenset[str]
    hedges: frozenset[str]
    sentiment: dict[str, tuple[float, float]]


# --------------------------------------------------------------------------
# data files

def default_data_dir() -> Path:
    env = os.environ.get("ORACLESIM_DATA_DIR")
    if env:
        return Path(env)
    return Path(str(resources.files("oraclesim") / "data"))


def _read_word_list(path: Path) -> frozenset[str]:
    words = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        word = line.strip().lower()
        if word:
            words.add(word)
    return frozenset(words)


def _read_sentiment(path: Path) -> dict[str, tuple[float, float]]:
    entries: dict[str, tuple[float, float]] = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise LexiconUnavailable(f"{path}:{n}: expected token<TAB>polarity<TAB>subjectivity")
        token, pol, subj = parts
        try:
            polarity, subjectivity = float(pol), float(subj)
        except ValueError:
            raise LexiconUnavailable(f"{path}:{n}: non-numeric score") from None
        if not (-1.0 <= polarity <= 1.0 and 0.0 <= subjectivity <= 1.0):
            raise LexiconUnavailable(f"{path}:{n}: score out of range")
        entries[token.strip().lower()] = (polarity, subjectivity)
    return entries


def load_lexicon(data_dir: str | Path | None = None) -> Lexicon:
    """Load modal, hedge and sentiment lexica from ``data_dir``.

    Raises :class:`LexiconUnavailable` if any of the three files is missing
    or malformed.
    """
    base = Path(data_dir) if data_dir is not None else default_data_dir()
    try:
        return Lexicon(
            modals=_read_word_list(base / "modal.txt"),
            hedges=_read_word_list(base / "hedge.txt"),
            sentiment=_read_sentiment(base / "sentiment.tsv"),
        )
    except OSError as exc:
        raise LexiconUnavailable(str(exc)) from exc


@lru_cache(maxsize=8)
def _cached_lexicon(data_dir: str) -> Lexicon:
    return load_lexicon(data_dir)


def _resolve(lexicon: Lexicon | None) -> Lexicon:
    if lexicon is not None:
        return lexicon
    return _cached_lexicon(str(default_data_dir()))


# --------------------------------------------------------------------------
# metrics

def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch in APOSTROPHES


def tokenize(text: str) -> list[str]:
    """Split ``text`` into lowercase word tokens.

    Whitespace separates fragments; characters other than letters, digits
    and apostrophes are stripped from the ends and split on inside a
    fragment. Curly apostrophes are normalised to ``'``. Fragments with no
    letter or digit are dropped.
    """
    tokens = []
    for chunk in text.split():
        word = []
        for ch in chunk + " ":
            if _is_word_char(ch):
                word.append("'" if ch in APOSTROPHES else ch)
                continue
            if word:
                token = "".join(word).lower()
                if any(c.isalnum() for c in token):
                    tokens.append(token)
                word = []
    return tokens


def shannon_entropy(tokens: Sequence[str]) -> float:
    n = len(tokens)
    if n <= 1:
        return 0.0
    h = 0.0
    for count in Counter(tokens).values():
        p = count / n
        h -= p * math.log2(p)
    # a single distinct type yields -0.0
    return abs(h)


def _density(tokens: Sequence[str], words: frozenset[str]) -> float:
    if not tokens:
        return 0.0
    return sum(1 for t in tokens if t in words) / len(tokens)


def modal_density(tokens: Sequence[str], lexicon: Lexicon | None = None) -> float:
    return _density(tokens, _resolve(lexicon).modals)


def hedge_density(tokens: Sequence[str], lexicon: Lexicon | None = None) -> float:
    return _density(tokens, _resolve(lexicon).hedges)


def sentiment(tokens: Sequence[str], lexicon: Lexicon | None = None) -> tuple[float, float]:
    """Return ``(polarity, subjectivity)`` as means over lexicon matches.

    A negator immediately before a matched token scales that token's
    polarity by -0.5. No matches gives ``(0.0, 0.0)``.
    """
    entries = _resolve(lexicon).sentiment
    polarities = []
    subjectivities = []
    for i, tok in enumerate(tokens):
        entry = entries.get(tok)
        if entry is None:
            continue
        pol, subj = entry
        if i > 0 and tokens[i - 1] in NEGATORS:
            pol *= -0.5
        polarities.append(pol)
        subjectivities.append(subj)
    if not polarities:
        return 0.0, 0.0
    n = len(polarities)
    return sum(polarities) / n, sum(subjectivities) / n


def profile(text: str, lexicon: Lexicon | None = None) -> LexicalProfile:
    lex = _resolve(lexicon)
    tokens = tokenize(text)
    if not tokens:
        return LexicalProfile()
    polarity, subjectivity = sentiment(tokens, lex)
    return LexicalProfile(
        word_count=len(tokens),
        shannon_entropy=shannon_entropy(tokens),
        modal_density=modal_density(tokens, lex),
        hedge_density=hedge_density(tokens, lex),
        polarity=polarity,
        subjectivity=subjectivity,
    )


# --------------------------------------------------------------------------
# taxonomy

def classify(features: QueryFeatures) -> QueryCategory:
    if features.is_pure_computation:
        return QueryCategory.COMPUTATIONAL
    if features.answerable_by is Answerability.NO_ONE:
        return QueryCategory.NON_EVENT
    if features.honest_interpretation_conflict:
        return QueryCategory.AMBIGUOUS
    if features.answerable_by is Answerability.SINGLE_EXCLUSIVE_SOURCE:
        return QueryCategory.RECONDITE
    if features.answerable_by is Answerability.AUTHORITY_SUBSET:
        return QueryCategory.SANCTIONED
    return QueryCategory.DISCERNIBLE


# --------------------------------------------------------------------------
# corpus

def parse_corpus(lines: Iterable[str]) -> list[CorpusRecord]:
    records = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise CorpusError(line_no, "expected a JSON object")
        for key in ("id", "category", "question", "answer"):
            if not isinstance(obj.get(key), str):
                raise CorpusError(line_no, f"field {key!r} missing or not a string")
        try:
            category = QueryCategory(obj["category"])
        except ValueError:
            raise CorpusError(line_no, f"unknown category {obj['category']!r}") from None
        if not obj["answer"].strip():
            raise CorpusError(line_no, "answer is empty")
        if obj["id"] in seen:
            raise DuplicateId(f"line {line_no}: duplicate id {obj['id']!r}")
        seen.add(obj["id"])
        records.append(CorpusRecord(obj["id"], category, obj["question"], obj["answer"]))
    return records


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh)


def aggregate(corpus: Sequence[CorpusRecord], lexicon: Lexicon | None = None) -> list[CategoryAggregate]:
    """Mean per-answer profile for each category present, ordered by name."""
    lex = _resolve(lexicon)
    seen: set[str] = set()
    groups: dict[QueryCategory, list[LexicalProfile]] = {}
    for rec in corpus:
        if rec.id in seen:
            raise DuplicateId(f"duplicate id {rec.id!r}")
        seen.add(rec.id)
        groups.setdefault(rec.category, []).append(profile(rec.answer, lex))

    out = []
    for category in sorted(groups, key=lambda c: c.value):
        profiles = groups[category]
        n = len(profiles)

        def mean(field: str) -> float:
            return sum(getattr(p, field) for p in profiles) / n

        out.append(CategoryAggregate(
            category=category,
            occurrences=n,
            avg_word_count=mean("word_count"),
            avg_entropy=mean("shannon_entropy"),
            avg_modal_density=mean("modal_density"),
            avg_hedge_density=mean("hedge_density"),
            avg_polarity=mean("polarity"),
            avg_subjectivity=mean("subjectivity"),
        ))
    return out


def aggregates_to_csv(rows: Sequence[CategoryAggregate]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for r in rows:
        writer.writerow([
            r.category.value,
            r.occurrences,
            *(f"{v:.2f}" for v in (
                r.avg_word_count, r.avg_entropy, r.avg_modal_density,
                r.avg_hedge_density, r.avg_polarity, r.avg_subjectivity,
            )),
        ])
    return buf.getvalue()


def aggregates_to_json(rows: Sequence[CategoryAggregate]) -> str:
    return json.dumps([r.to_dict() for r in rows], indent=2) + "\n"
