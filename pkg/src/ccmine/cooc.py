"""Co-occurrence counting, row normalization, and candidate selection.

Counts are symmetric, so only pairs ``(i, j)`` with ``i < j`` are stored.
Row normalization divides by the occurrence count of the *row* concept,
which makes the normalized matrix directional: a rare concept can be
strongly associated with a frequent one without the converse holding.

On-disk text format (UTF-8)::

    ccmine-cooc v1 <dim>
    <i>\\t<j>\\t<count>        # ascending (i, j), i < j
    #sha256:<hex>

The trailing digest covers the triplet lines exactly as written.  Counts
are limited to 32 bits; anything larger aborts with an overflow error.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

from .corpus import Lexicon, ScanStats, iter_caption_lines, scan_corpus
from .errors import FormatError, ValidationError
from .ioutil import atomic_write_text

MAX_COUNT = 2**32 - 1
_COOC_HEADER = "ccmine-cooc v1"
_COUNTS_HEADER = "ccmine-counts v1"


@dataclass
class CoocMatrix:
    """Sparse symmetric co-occurrence counts over a lexicon of size ``dim``."""

    dim: int
    pairs: dict[tuple[int, int], int] = field(default_factory=dict)

    def get(self, i: int, j: int) -> int:
        if i == j:
            return 0
        key = (i, j) if i < j else (j, i)
        return self.pairs.get(key, 0)

    def add(self, i: int, j: int, count: int = 1) -> None:
        if i == j:
            raise ValidationError("co-occurrence is defined for distinct concepts only")
        key = (i, j) if i < j else (j, i)
        total = self.pairs.get(key, 0) + count
        if total > MAX_COUNT:
            raise ValidationError(
                f"co-occurrence count for pair {key} exceeds 32-bit range ({total})"
            )
        self.pairs[key] = total

    def merge(self, other: "CoocMatrix") -> None:
        """Add another matrix into this one; integer addition commutes, so
        merge order never affects the result."""
        if other.dim != self.dim:
            raise ValidationError(f"dimension mismatch: {self.dim} vs {other.dim}")
        pairs = self.pairs
        for key, count in other.pairs.items():
            pairs[key] = pairs.get(key, 0) + count
        self._check_overflow()

    def _check_overflow(self) -> None:
        for key, count in self.pairs.items():
            if count > MAX_COUNT:
                raise ValidationError(
                    f"co-occurrence count for pair {key} exceeds 32-bit range ({count})"
                )

    # ---- serialization ----

    def dumps(self) -> str:
        self._check_overflow()
        body = "".join(
            f"{i}\t{j}\t{count}\n" for (i, j), count in sorted(self.pairs.items())
        )
        digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
        return f"{_COOC_HEADER} {self.dim}\n{body}#sha256:{digest}\n"

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, self.dumps())

    @classmethod
    def loads(cls, text: str) -> "CoocMatrix":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(_COOC_HEADER + " "):
            raise FormatError("not a ccmine-cooc v1 file")
        try:
            dim = int(lines[0].rsplit(" ", 1)[1])
        except ValueError:
            raise FormatError("bad dimension in cooc header") from None
        if not lines[-1].startswith("#sha256:"):
            raise FormatError("missing sha256 trailer in cooc file")
        expected = lines[-1][len("#sha256:"):]
        body_lines = lines[1:-1]
        body = "".join(line + "\n" for line in body_lines)
        actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
        if actual != expected:
            raise FormatError("cooc file digest mismatch; file is corrupt or edited")
        pairs: dict[tuple[int, int], int] = {}
        prev: tuple[int, int] | None = None
        for line in body_lines:
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"bad cooc triplet line: {line!r}")
            try:
                i, j, count = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise FormatError(f"non-integer cooc triplet: {line!r}") from None
            if not (0 <= i < j < dim):
                raise FormatError(f"triplet ids out of order or range: {line!r}")
            if count <= 0 or count > MAX_COUNT:
                raise FormatError(f"triplet count out of range: {line!r}")
            if prev is not None and (i, j) <= prev:
                raise FormatError("cooc triplets are not strictly ascending")
            prev = (i, j)
            pairs[(i, j)] = count
        return cls(dim=dim, pairs=pairs)

    @classmethod
    def load(cls, path: str | Path) -> "CoocMatrix":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def build_cooc(concept_sets, dim: int) -> CoocMatrix:
    """Count concept pairs over a stream of per-caption concept-id sets.

    Each caption contributes at most one count per unordered pair, however
    often the concepts repeat in its text.
    """
    pairs: dict[tuple[int, int], int] = {}
    for matched in concept_sets:
        if len(matched) < 2:
            continue
        for key in combinations(sorted(matched), 2):
            pairs[key] = pairs.get(key, 0) + 1
    matrix = CoocMatrix(dim=dim, pairs=pairs)
    matrix._check_overflow()
    return matrix


# ---- occurrence-count artifact ----


def dumps_counts(occurrence: list[int]) -> str:
    body = "".join(f"{i}\t{count}\n" for i, count in enumerate(occurrence))
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return f"{_COUNTS_HEADER} {len(occurrence)}\n{body}#sha256:{digest}\n"


def save_counts(path: str | Path, occurrence: list[int]) -> None:
    for i, count in enumerate(occurrence):
        if count > MAX_COUNT:
            raise ValidationError(f"occurrence count for concept {i} exceeds 32-bit range")
    atomic_write_text(path, dumps_counts(occurrence))


def load_counts(path: str | Path) -> list[int]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_COUNTS_HEADER + " "):
        raise FormatError("not a ccmine-counts v1 file")
    try:
        dim = int(lines[0].rsplit(" ", 1)[1])
    except ValueError:
        raise FormatError("bad dimension in counts header") from None
    if not lines[-1].startswith("#sha256:"):
        raise FormatError("missing sha256 trailer in counts file")
    expected = lines[-1][len("#sha256:"):]
    body_lines = lines[1:-1]
    body = "".join(line + "\n" for line in body_lines)
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != expected:
        raise FormatError("counts file digest mismatch; file is corrupt or edited")
    if len(body_lines) != dim:
        raise FormatError("counts file row count does not match header dimension")
    occurrence = []
    for row, line in enumerate(body_lines):
        parts = line.split("\t")
        if len(parts) != 2 or int(parts[0]) != row:
            raise FormatError(f"bad counts line for row {row}: {line!r}")
        occurrence.append(int(parts[1]))
    return occurrence


# ---- row normalization and candidate selection ----


@dataclass
class FreqMatrix:
    """Row-normalized co-occurrence frequencies; directional by design."""

    dim: int
    rows: dict[int, dict[int, float]]
    lexicon: Lexicon


def normalize(matrix: CoocMatrix, occurrence: list[int], lexicon: Lexicon) -> FreqMatrix:
    """Divide each row of the symmetric counts by the row concept's
    occurrence count.

    A concept that never occurs but has stored pairs is an inconsistency in
    the inputs and raises, naming the offending pair.
    """
    if len(occurrence) != matrix.dim or len(lexicon) != matrix.dim:
        raise ValidationError("occurrence counts, lexicon, and matrix dimensions disagree")
    rows: dict[int, dict[int, float]] = {}
    for (i, j), count in matrix.pairs.items():
        for a, b in ((i, j), (j, i)):
            n = occurrence[a]
            if n == 0:
                raise ValidationError(
                    f"concept {lexicon.concepts[a]!r} has pairs (e.g. with "
                    f"{lexicon.concepts[b]!r}) but zero occurrences; inputs are inconsistent"
                )
            if count > n:
                raise ValidationError(
                    f"pair count {count} for ({lexicon.concepts[a]!r}, "
                    f"{lexicon.concepts[b]!r}) exceeds occurrence count {n}"
                )
            rows.setdefault(a, {})[b] = count / n
    return FreqMatrix(dim=matrix.dim, rows=rows, lexicon=lexicon)


@dataclass
class CandidateSet:
    """Concepts co-occurring with a target above the mining threshold."""

    target: int
    members: list[int]


def select_candidates(freq: FreqMatrix, i: int, gamma: float) -> CandidateSet:
    """Members are the concepts ``j`` with frequency strictly above ``gamma``,
    ordered by descending frequency, ties broken by ascending concept string.

    The threshold comparison is strict: a frequency exactly equal to
    ``gamma`` is excluded.
    """
    if not (0 <= i < freq.dim):
        raise ValidationError(f"concept id {i} out of range for dim {freq.dim}")
    row = freq.rows.get(i, {})
    chosen = [(j, f) for j, f in row.items() if f > gamma]
    concepts = freq.lexicon.concepts
    chosen.sort(key=lambda item: (-item[1], concepts[item[0]]))
    return CandidateSet(target=i, members=[j for j, _ in chosen])


# ---- parallel corpus mining ----

_WORKER_LEXICON: Lexicon | None = None


def _worker_init(concepts: list[str]) -> None:
    global _WORKER_LEXICON
    _WORKER_LEXICON = Lexicon(concepts)


def _count_chunk(lines: list[str]):
    lex = _WORKER_LEXICON
    assert lex is not None
    stats = ScanStats()
    pairs: Counter = Counter()
    for matched in scan_corpus(lines, lex, stats):
        if len(matched) >= 2:
            pairs.update(combinations(sorted(matched), 2))
    return stats, dict(pairs)


def _chunked(iterable, size: int):
    chunk: list[str] = []
    for item in iterable:
        chunk.append(item)
        if len(chunk) >= size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def mine_corpus(
    corpus_path: str | Path,
    lexicon: Lexicon,
    workers: int = 1,
    chunk_size: int = 8192,
) -> tuple[CoocMatrix, ScanStats]:
    """Scan a corpus file and produce co-occurrence counts plus scan stats.

    With ``workers > 1`` the caption stream is processed in chunks by a
    process pool.  Partial counts merge by integer addition, so the result
    is identical for every worker count and chunk size.
    """
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    lines = iter_caption_lines(corpus_path)
    stats = ScanStats(occurrence=[0] * len(lexicon))
    if workers == 1:
        matrix = build_cooc(scan_corpus(lines, lexicon, stats), dim=len(lexicon))
        return matrix, stats
    matrix = CoocMatrix(dim=len(lexicon))
    pairs: dict[tuple[int, int], int] = matrix.pairs
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_worker_init, initargs=(lexicon.concepts,)
    ) as pool:
        for chunk_stats, chunk_pairs in pool.map(
            _count_chunk, _chunked(lines, chunk_size)
        ):
            stats.merge(chunk_stats)
            for key, count in chunk_pairs.items():
                pairs[key] = pairs.get(key, 0) + count
    matrix._check_overflow()
    return matrix, stats
