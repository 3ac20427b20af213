"""Candidate filtering: stop-words, visibility, semantic similarity.

Mined candidate lists pass through three stages in a fixed order:

1. stop-words: drop generic photography vocabulary,
2. visibility: drop concepts that name nothing visible in an image,
3. semantic: drop concepts too similar to the target, which would
   otherwise steal the target's own pixels.

Each stage only removes items and preserves the incoming order, so the
pipeline output is always a subsequence of its input.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .corpus import normalize_concept
from .embed import EmbeddingTable, cosine
from .errors import CCMineError, FormatError, ValidationError
from .ioutil import atomic_write_text

DEFAULT_STOPWORDS = frozenset({"image", "photo", "picture", "view"})
DEFAULT_DELTA = 0.8

_ALLOWED_SOURCES = ("cached", "llm", "manual")

# An oracle answers "is this concept visible?" and may raise on outage.
VisibilityOracle = Callable[[str], bool]


def reject_unknown(_concept: str) -> bool:
    """Policy oracle: concepts without a cached answer are dropped."""
    return False


def accept_unknown(_concept: str) -> bool:
    """Policy oracle: concepts without a cached answer are kept."""
    return True


@dataclass
class FilterConfig:
    """Knobs for the filtering pipeline."""

    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    delta: float = DEFAULT_DELTA


class VisibilityTable:
    """Cached yes/no visibility answers, persisted as line-delimited JSON.

    Entries are (concept -> visible, source) where source records how the
    answer was obtained.  get-or-insert is atomic under a lock so parallel
    filters never ask the oracle twice for one concept.
    """

    def __init__(self, entries: dict[str, tuple[bool, str]] | None = None):
        self._entries: dict[str, tuple[bool, str]] = dict(entries or {})
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, concept: str) -> bool:
        return normalize_concept(concept) in self._entries

    def get(self, concept: str) -> bool | None:
        entry = self._entries.get(normalize_concept(concept))
        return entry[0] if entry is not None else None

    def set(self, concept: str, visible: bool, source: str = "manual") -> None:
        if source not in _ALLOWED_SOURCES:
            raise ValidationError(f"unknown visibility source {source!r}")
        with self._lock:
            self._entries[normalize_concept(concept)] = (bool(visible), source)

    def resolve(self, concept: str, oracle: VisibilityOracle, source: str = "llm") -> bool:
        """Return the cached answer or ask the oracle exactly once."""
        key = normalize_concept(concept)
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None:
                return entry[0]
            visible = bool(oracle(key))
            self._entries[key] = (visible, source)
            return visible

    # ---- serialization ----

    @classmethod
    def from_file(cls, path: str | Path) -> "VisibilityTable":
        entries: dict[str, tuple[bool, str]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except ValueError:
                    raise FormatError(f"visibility table line {lineno} is not JSON") from None
                if (
                    not isinstance(rec, dict)
                    or not isinstance(rec.get("concept"), str)
                    or not isinstance(rec.get("visible"), bool)
                    or rec.get("source") not in _ALLOWED_SOURCES
                ):
                    raise FormatError(
                        f"visibility table line {lineno} needs string 'concept', "
                        f"bool 'visible', and source in {_ALLOWED_SOURCES}"
                    )
                key = normalize_concept(rec["concept"])
                if key in entries:
                    raise FormatError(
                        f"visibility table line {lineno} repeats concept {key!r}"
                    )
                entries[key] = (rec["visible"], rec["source"])
        return cls(entries)

    def save(self, path: str | Path) -> None:
        lines = []
        for concept in sorted(self._entries):
            visible, source = self._entries[concept]
            lines.append(
                json.dumps(
                    {"concept": concept, "visible": visible, "source": source},
                    ensure_ascii=False,
                )
                + "\n"
            )
        atomic_write_text(path, "".join(lines))


@dataclass
class FilterOutcome:
    """What the pipeline kept and why the rest went away.

    ``unresolved_kept`` lists the subset of ``kept`` whose visibility was
    never resolved; a run that produced any is not a publishable artifact.
    """

    kept: list[str] = field(default_factory=list)
    removed_stopword: list[str] = field(default_factory=list)
    removed_invisible: list[str] = field(default_factory=list)
    removed_similar: list[str] = field(default_factory=list)
    unresolved_kept: list[str] = field(default_factory=list)


def remove_stopwords(candidates: list[str], stopwords=DEFAULT_STOPWORDS) -> list[str]:
    """Drop candidates whose normalized form is a stop-word; keep order."""
    stop = {normalize_concept(s) for s in stopwords}
    return [c for c in candidates if normalize_concept(c) not in stop]


def filter_abstract(
    candidates: list[str],
    table: VisibilityTable,
    oracle: VisibilityOracle | None = None,
    source: str = "llm",
    outcome: FilterOutcome | None = None,
) -> list[str]:
    """Keep candidates that name something visible.

    Unknown concepts are resolved through the oracle and cached.  If the
    oracle fails (service outage) or none is configured, the candidate is
    kept and flagged in ``outcome.unresolved_kept``: availability problems
    must not silently shrink candidate lists.
    """
    kept: list[str] = []
    for candidate in candidates:
        cached = table.get(candidate)
        if cached is None:
            if oracle is None:
                kept.append(candidate)
                if outcome is not None:
                    outcome.unresolved_kept.append(candidate)
                continue
            try:
                cached = table.resolve(candidate, oracle, source=source)
            except CCMineError:
                kept.append(candidate)
                if outcome is not None:
                    outcome.unresolved_kept.append(candidate)
                continue
        if cached:
            kept.append(candidate)
        elif outcome is not None:
            outcome.removed_invisible.append(candidate)
    return kept


def filter_semantic(
    candidates: list[str],
    target: str,
    table: EmbeddingTable,
    delta: float = DEFAULT_DELTA,
    outcome: FilterOutcome | None = None,
) -> list[str]:
    """Drop candidates with cosine similarity to the target strictly above
    ``delta``; similarity exactly equal to ``delta`` survives."""
    target_vec = table.vector(normalize_concept(target))
    kept = []
    for candidate in candidates:
        sim = cosine(table.vector(normalize_concept(candidate)), target_vec)
        if sim > delta:
            if outcome is not None:
                outcome.removed_similar.append(candidate)
        else:
            kept.append(candidate)
    return kept


def run_pipeline(
    candidates: list[str],
    target: str,
    embeddings: EmbeddingTable,
    visibility: VisibilityTable,
    config: FilterConfig | None = None,
    oracle: VisibilityOracle | None = None,
    oracle_source: str = "llm",
) -> FilterOutcome:
    """Apply stop-word, visibility, and semantic filters in that order."""
    config = config or FilterConfig()
    outcome = FilterOutcome(kept=[])
    stage = []
    stop = {normalize_concept(s) for s in config.stopwords}
    for c in candidates:
        if normalize_concept(c) in stop:
            outcome.removed_stopword.append(c)
        else:
            stage.append(c)
    stage = filter_abstract(stage, visibility, oracle, source=oracle_source, outcome=outcome)
    stage = filter_semantic(stage, target, embeddings, config.delta, outcome=outcome)
    outcome.kept = stage
    final = set(stage)
    outcome.unresolved_kept = [c for c in outcome.unresolved_kept if c in final]
    return outcome
