"""Building contrastive concept sets for a query.

A contrastive concept (CC) set is a list of extra prompts that compete
with the query during segmentation and are discarded afterwards.  Four
sources exist:

- ``bg``: the single word "background",
- ``dictionary``: concepts mined from caption co-occurrence and filtered,
- ``llm``: concepts generated by a language model,
- ``privileged``: all other dataset classes (an upper-bound reference that
  uses information unavailable in the open-vocabulary setting).

Dictionary lookups generalize beyond the lexicon by mapping an arbitrary
query to its nearest lexicon concept in embedding space; lexicon members
map to themselves.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .cooc import CoocMatrix, FreqMatrix, normalize as cooc_normalize, select_candidates
from .corpus import Lexicon, normalize_concept
from .embed import EmbeddingProvider, EmbeddingTable, cosine, nearest_neighbor
from .errors import FormatError, ValidationError
from .filters import FilterConfig, FilterOutcome, VisibilityOracle, VisibilityTable, run_pipeline
from .ioutil import atomic_write_text
from .llm import LLMClient, ask_cc

BACKGROUND = "background"

DEFAULT_GAMMA = 0.01
DEFAULT_BETA = 0.9


@dataclass
class CCSet:
    """Contrastive concepts for one query."""

    query: str
    kind: str  # bg | dictionary | llm | privileged | none
    concepts: list[str]
    source_concept: str | None = None  # lexicon concept used for dictionary lookups


def cc_bg(q: str) -> CCSet:
    """The background-word baseline."""
    qn = normalize_concept(q)
    if not qn:
        raise ValidationError("query is empty")
    if qn == BACKGROUND:
        raise ValidationError('"background" cannot be a query for the background baseline')
    return CCSet(query=qn, kind="bg", concepts=[BACKGROUND])


def cc_none(q: str) -> CCSet:
    """No contrastive concepts; the query segments alone."""
    qn = normalize_concept(q)
    if not qn:
        raise ValidationError("query is empty")
    return CCSet(query=qn, kind="none", concepts=[])


def cc_privileged(q: str, classes: list[str]) -> CCSet:
    """All other dataset classes, order preserved."""
    qn = normalize_concept(q)
    if not qn:
        raise ValidationError("query is empty")
    concepts = [c for c in (normalize_concept(x) for x in classes) if c != qn]
    return CCSet(query=qn, kind="privileged", concepts=concepts)


def cc_llm(q: str, client: LLMClient, include_markers: bool = True) -> CCSet:
    """Concepts generated by the language model, plus "background"."""
    qn = normalize_concept(q)
    if not qn:
        raise ValidationError("query is empty")
    if qn == BACKGROUND:
        raise ValidationError('"background" cannot be a query for LLM generation')
    generated = [c for c in ask_cc(client, qn, include_markers) if c != qn and c != BACKGROUND]
    return CCSet(query=qn, kind="llm", concepts=[BACKGROUND] + generated)


class CCDictionary:
    """Per-concept contrastive concepts mined from a corpus.

    ``cc`` maps every lexicon concept to its (possibly empty) filtered
    list.  ``meta`` records the build inputs so artifacts are traceable.
    """

    def __init__(self, cc: dict[str, list[str]], meta: dict | None = None):
        self.cc: dict[str, list[str]] = {
            normalize_concept(k): [normalize_concept(v) for v in vals]
            for k, vals in cc.items()
        }
        self.meta: dict = dict(meta or {})
        self._nn_cache: dict[int, EmbeddingTable] = {}

    def __contains__(self, concept: str) -> bool:
        return normalize_concept(concept) in self.cc

    def __len__(self) -> int:
        return len(self.cc)

    def get(self, concept: str) -> list[str]:
        return list(self.cc.get(normalize_concept(concept), []))

    def lexicon_table(self, table: EmbeddingTable) -> EmbeddingTable:
        """A view of ``table`` restricted to this dictionary's concepts, so
        nearest-neighbor lookups cannot land on non-lexicon entries."""
        key = id(table)
        cached = self._nn_cache.get(key)
        if cached is not None:
            return cached
        names = sorted(self.cc)
        vectors = np.vstack([table.vector(name) for name in names])
        sub = EmbeddingTable(names, vectors)
        self._nn_cache[key] = sub
        return sub

    # ---- serialization ----

    def dumps(self) -> str:
        payload = {"meta": self.meta, "cc": self.cc}
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, self.dumps())

    @classmethod
    def loads(cls, text: str) -> "CCDictionary":
        try:
            payload = json.loads(text)
        except ValueError:
            raise FormatError("CC dictionary is not valid JSON") from None
        if not isinstance(payload, dict) or "cc" not in payload:
            raise FormatError("CC dictionary must be an object with a 'cc' member")
        cc = payload["cc"]
        if not isinstance(cc, dict):
            raise FormatError("CC dictionary 'cc' member must be an object")
        for k, v in cc.items():
            if not isinstance(k, str) or not isinstance(v, list) or not all(
                isinstance(x, str) for x in v
            ):
                raise FormatError(f"CC dictionary entry {k!r} must map a string to a string list")
        meta = payload.get("meta", {})
        if not isinstance(meta, dict):
            raise FormatError("CC dictionary 'meta' member must be an object")
        return cls(cc, meta)

    @classmethod
    def load(cls, path: str | Path) -> "CCDictionary":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def build_timestamp() -> str:
    """Reproducible build timestamp.

    Honors SOURCE_DATE_EPOCH so identical inputs rebuild to identical
    bytes; without it the epoch-zero placeholder keeps artifacts stable
    rather than embedding wall-clock time.
    """
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        try:
            stamp = int(epoch)
        except ValueError:
            raise ValidationError("SOURCE_DATE_EPOCH must be an integer") from None
        return (
            datetime.fromtimestamp(stamp, tz=timezone.utc)
            .isoformat()
            .replace("+00:00", "Z")
        )
    return "1970-01-01T00:00:00Z"


def build_dictionary(
    matrix: CoocMatrix,
    occurrence: list[int],
    lexicon: Lexicon,
    embeddings: EmbeddingTable,
    visibility: VisibilityTable,
    gamma: float = DEFAULT_GAMMA,
    filter_config: FilterConfig | None = None,
    oracle: VisibilityOracle | None = None,
    oracle_source: str = "llm",
    extra_meta: dict | None = None,
) -> tuple[CCDictionary, dict[str, FilterOutcome]]:
    """Select candidates above ``gamma`` for every lexicon concept and run
    them through the filtering pipeline."""
    filter_config = filter_config or FilterConfig()
    freq: FreqMatrix = cooc_normalize(matrix, occurrence, lexicon)
    cc: dict[str, list[str]] = {}
    outcomes: dict[str, FilterOutcome] = {}
    for i, concept in enumerate(lexicon.concepts):
        candidates = [lexicon.concepts[j] for j in select_candidates(freq, i, gamma).members]
        outcome = run_pipeline(
            candidates,
            concept,
            embeddings,
            visibility,
            config=filter_config,
            oracle=oracle,
            oracle_source=oracle_source,
        )
        cc[concept] = outcome.kept
        outcomes[concept] = outcome
    meta = {
        "gamma": gamma,
        "delta": filter_config.delta,
        "built_at": build_timestamp(),
        "filter_version": "stopwords>visibility>semantic/v1",
    }
    meta.update(extra_meta or {})
    return CCDictionary(cc, meta), outcomes


def cc_d(
    q: str,
    dictionary: CCDictionary,
    embeddings: EmbeddingTable,
    provider: EmbeddingProvider | None = None,
) -> CCSet:
    """Dictionary lookup with nearest-neighbor generalization.

    A lexicon member uses its own entry.  Any other query needs a provider
    to embed it; the lookup then uses the entry of the nearest lexicon
    concept in embedding space.
    """
    qn = normalize_concept(q)
    if not qn:
        raise ValidationError("query is empty")
    if qn == BACKGROUND:
        raise ValidationError('"background" cannot be a query for dictionary lookup')
    if len(dictionary) == 0:
        raise ValidationError("CC dictionary is empty")
    if qn in dictionary:
        source = qn
    else:
        if provider is None:
            raise ValidationError(
                f"query {q!r} is not in the lexicon and no embedding provider is configured"
            )
        vec = provider.embed(qn)
        source, _ = nearest_neighbor(vec, dictionary.lexicon_table(embeddings))
    concepts = [c for c in dictionary.get(source) if c != qn and c != BACKGROUND]
    return CCSet(
        query=qn, kind="dictionary", concepts=[BACKGROUND] + concepts, source_concept=source
    )


def cc_multi(
    cc_sets: list[CCSet],
    embeddings: EmbeddingTable,
    beta: float = DEFAULT_BETA,
    scope: str = "all",
) -> tuple[list[str], list[str]]:
    """Merge per-query CC sets for multi-query segmentation.

    A merged concept is kept only while its cosine similarity to the
    queries stays at or below ``beta``; anything more similar would steal
    pixels from a query.  ``scope`` selects which queries a concept is
    checked against: ``"all"`` (default) checks every query, ``"source"``
    checks only the query whose CC set contributed the concept.

    Returns (kept, excluded), each deduplicated in first-seen order.
    """
    if scope not in ("all", "source"):
        raise ValidationError(f"scope must be 'all' or 'source', got {scope!r}")
    queries = [s.query for s in cc_sets]
    if len(queries) != len(set(queries)):
        raise ValidationError("duplicate queries in multi-query merge")
    query_vecs = {qn: embeddings.vector(qn) for qn in queries}
    order: list[str] = []
    sources: dict[str, list[str]] = {}
    for cc_set in cc_sets:
        for concept in cc_set.concepts:
            contributed = sources.setdefault(concept, [])
            if not contributed:
                order.append(concept)
            if cc_set.query not in contributed:
                contributed.append(cc_set.query)
    kept: list[str] = []
    excluded: list[str] = []
    for concept in order:
        if concept in query_vecs:
            excluded.append(concept)
            continue
        vec = embeddings.vector(concept)
        if scope == "all":
            ok = all(cosine(vec, query_vecs[qn]) <= beta for qn in queries)
        else:
            # the union over source queries keeps a concept admitted by any
            # of the queries that contributed it
            ok = any(cosine(vec, query_vecs[src]) <= beta for src in sources[concept])
        if ok:
            kept.append(concept)
        else:
            excluded.append(concept)
    return kept, excluded
