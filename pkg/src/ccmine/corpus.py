"""Caption corpora, concept lexicons, and whole-token concept matching.

A corpus is a line-delimited JSON file (optionally gzip-compressed; detected
by magic bytes) where each record carries a string ``id`` and a caption
``text``.  A lexicon is a plain text file with one concept per line and
``#`` comment lines.

Matching is deliberately simple and fast: captions are lowercased, split on
Unicode whitespace, and ASCII punctuation is stripped at token boundaries
only.  A concept matches when its token sequence appears as a contiguous run
of caption tokens.  Repeated matches within one caption count once (set
semantics).  No stemming is applied; an optional plural-folding switch
exists but defaults to off.
"""

from __future__ import annotations

import io
import json
import string
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

from .errors import FormatError
from .ioutil import open_maybe_gzip, sha256_file

_PUNCT = string.punctuation


def normalize_concept(raw: str) -> str:
    """Canonical concept form: lowercase, stripped, single internal spaces.

    Idempotent: ``normalize_concept(normalize_concept(s)) == normalize_concept(s)``.
    """
    return " ".join(raw.lower().split())


def _fold_plural(token: str) -> str:
    # naive fold; only used when plural folding is switched on
    if len(token) > 3 and token.endswith("s"):
        return token[:-1]
    return token


def tokenize(text: str, fold_plurals: bool = False) -> list[str]:
    """Lowercase whitespace tokens with boundary punctuation stripped.

    Punctuation interior to a token (hyphens, apostrophes) is preserved;
    tokens that are entirely punctuation disappear.
    """
    toks = [t.strip(_PUNCT) for t in text.lower().split()]
    if fold_plurals:
        toks = [_fold_plural(t) for t in toks]
    return [t for t in toks if t]


class Lexicon:
    """Ordered, unique, normalized concept strings with stable integer ids.

    Ids are assigned by position; id ``i`` always refers to ``concepts[i]``.
    """

    def __init__(self, concepts: Iterable[str]):
        normalized = [normalize_concept(c) for c in concepts]
        seen: dict[str, int] = {}
        for pos, c in enumerate(normalized):
            if not c:
                raise FormatError(f"lexicon entry {pos} is empty after normalization")
            if c in seen:
                raise FormatError(f"duplicate lexicon concept {c!r} (positions {seen[c]} and {pos})")
            seen[c] = pos
        self.concepts: tuple[str, ...] = tuple(normalized)
        self.index: dict[str, int] = seen
        self.source_digest: str | None = None

    def __len__(self) -> int:
        return len(self.concepts)

    def __contains__(self, concept: str) -> bool:
        return normalize_concept(concept) in self.index

    def id_of(self, concept: str) -> int:
        return self.index[normalize_concept(concept)]

    @classmethod
    def from_file(cls, path: str | Path) -> "Lexicon":
        concepts = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                concepts.append(line)
        lex = cls(concepts)
        lex.source_digest = sha256_file(path)
        return lex

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("".join(c + "\n" for c in self.concepts), encoding="utf-8")

    @cached_property
    def matcher(self) -> "ConceptMatcher":
        return ConceptMatcher(self)


class ConceptMatcher:
    """Precomputed token lookup tables for one lexicon.

    Single-token concepts resolve through one dict lookup per caption token.
    Multi-token concepts are indexed by their first token and verified as a
    contiguous slice.
    """

    def __init__(self, lexicon: Lexicon, fold_plurals: bool = False):
        self.fold_plurals = fold_plurals
        self._single: dict[str, int] = {}
        self._multi: dict[str, list[tuple[tuple[str, ...], int]]] = {}
        for cid, concept in enumerate(lexicon.concepts):
            toks = tuple(tokenize(concept, fold_plurals))
            if not toks:
                raise FormatError(f"concept {concept!r} has no matchable tokens")
            if len(toks) == 1:
                self._single[toks[0]] = cid
            else:
                self._multi.setdefault(toks[0], []).append((toks, cid))

    def match(self, caption: str) -> set[int]:
        toks = tokenize(caption, self.fold_plurals)
        single = self._single
        multi = self._multi
        out: set[int] = set()
        n = len(toks)
        for i in range(n):
            tok = toks[i]
            cid = single.get(tok)
            if cid is not None:
                out.add(cid)
            if multi:
                cands = multi.get(tok)
                if cands is not None:
                    for ctoks, mcid in cands:
                        ln = len(ctoks)
                        if i + ln <= n and tuple(toks[i : i + ln]) == ctoks:
                            out.add(mcid)
        return out


def match_concepts(caption: str, lexicon: Lexicon) -> set[int]:
    """Ids of lexicon concepts appearing in the caption as whole-token runs."""
    return lexicon.matcher.match(caption)


@dataclass
class ScanStats:
    """Diagnostics and occurrence counts accumulated by a corpus scan."""

    total: int = 0
    malformed: int = 0
    matched_captions: int = 0
    occurrence: list[int] = field(default_factory=list)

    def merge(self, other: "ScanStats") -> None:
        self.total += other.total
        self.malformed += other.malformed
        self.matched_captions += other.matched_captions
        if not self.occurrence:
            self.occurrence = list(other.occurrence)
        else:
            for i, v in enumerate(other.occurrence):
                self.occurrence[i] += v


def iter_caption_lines(path: str | Path):
    """Yield decoded text lines of a corpus file, gzip-transparent."""
    with open_maybe_gzip(path) as fh:
        for line in io.TextIOWrapper(fh, encoding="utf-8"):
            yield line


def parse_caption(line: str) -> tuple[str, str] | None:
    """Parse one corpus line into (id, text), or None when malformed."""
    try:
        rec = json.loads(line)
    except ValueError:
        return None
    if not isinstance(rec, dict):
        return None
    rid = rec.get("id")
    text = rec.get("text")
    if not isinstance(rid, str) or not isinstance(text, str):
        return None
    return rid, text


def scan_corpus(lines, lexicon: Lexicon, stats: ScanStats):
    """Yield the concept-id set of each caption while accumulating stats.

    Malformed records are counted into ``stats.malformed`` and skipped; the
    scan never raises on record content.  ``stats.occurrence[i]`` ends up as
    the number of captions containing concept ``i`` at least once.
    """
    if not stats.occurrence:
        stats.occurrence = [0] * len(lexicon)
    occurrence = stats.occurrence
    matcher = lexicon.matcher
    for line in lines:
        if not line or line.isspace():
            continue
        parsed = parse_caption(line)
        stats.total += 1
        if parsed is None:
            stats.malformed += 1
            continue
        matched = matcher.match(parsed[1])
        if matched:
            stats.matched_captions += 1
            for cid in matched:
                occurrence[cid] += 1
        yield matched
