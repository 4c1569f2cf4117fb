"""Two-stage recall: titles first, then short prefixes located in context.

Stage 1 decodes a document title under the trie constraint and keeps the
top k distinct documents.  Stage 2 decodes a short prefix (prefix_len
tokens) constrained to be a verbatim substring of those documents, finds
the prefix's first occurrence with KMP, and extracts the surrounding
passage_len tokens.  The two stage scores are combined as
alpha * score1 + (1 - alpha) * score2 and references are ranked by the
combined value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import Corpus, Document
from .decode import (
    BeamConfig,
    BeamResult,
    SubstringConstraint,
    TrieConstraint,
    constrained_beam_search,
)
from .fmindex import BWTIndex, DocSetConstraint
from .scorer import (
    STAGE_ONE,
    STAGE_TWO,
    PromptTemplate,
    TokenScorer,
    default_templates,
    render_prompt,
)
from .trie import TitleTrie

logger = logging.getLogger(__name__)


class DeadEndError(RuntimeError):
    """A stage produced no output at all for this query."""


class InternalInconsistencyError(RuntimeError):
    """Two structures that must agree (index vs. raw text) disagreed."""


def _default_stage1() -> PromptTemplate:
    return default_templates()["qa"][STAGE_ONE]


def _default_stage2() -> PromptTemplate:
    return default_templates()["qa"][STAGE_TWO]


@dataclass(frozen=True)
class RecallConfig:
    """Knobs for one recall run; defaults are the working configuration."""

    alpha: float = 0.9
    k: int = 2
    beam1: int = 15
    beam2: int = 10
    prefix_len: int = 16
    passage_len: int = 150
    stage1_template: PromptTemplate = field(default_factory=_default_stage1)
    stage2_template: PromptTemplate = field(default_factory=_default_stage2)
    rescore_full_passage: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.beam1 < 1 or self.beam2 < 1:
            raise ValueError("beam sizes must be at least 1")
        if self.prefix_len < 1 or self.passage_len < 1:
            raise ValueError("lengths must be at least 1")
        if self.prefix_len > self.passage_len:
            raise ValueError("prefix_len must not exceed passage_len")

    def described(self) -> dict:
        """Config values for run metadata."""
        return {
            "alpha": self.alpha,
            "k": self.k,
            "beam1": self.beam1,
            "beam2": self.beam2,
            "prefix_len": self.prefix_len,
            "passage_len": self.passage_len,
            "stage1_template": self.stage1_template.template,
            "stage2_template": self.stage2_template.template,
            "rescore_full_passage": self.rescore_full_passage,
        }


@dataclass(frozen=True)
class StageOneResult:
    title: str
    doc_id: str
    score1: float


@dataclass(frozen=True)
class PrefixResult:
    tokens: tuple[int, ...]
    score2: float
    live_doc_ids: tuple[str, ...]


@dataclass(frozen=True)
class Reference:
    doc_id: str
    title: str
    start: int
    prefix: tuple[int, ...]
    passage: tuple[int, ...]
    passage_text: str
    score1: float
    score2: float
    combined: float


def kmp_find_first(haystack: Sequence[int], needle: Sequence[int]) -> int | None:
    """Smallest offset of ``needle`` in ``haystack``, or None."""
    if not needle:
        raise ValueError("needle must be nonempty")
    fail = [0] * len(needle)
    length = 0
    for i in range(1, len(needle)):
        while length and needle[i] != needle[length]:
            length = fail[length - 1]
        if needle[i] == needle[length]:
            length += 1
        fail[i] = length
    matched = 0
    for pos, symbol in enumerate(haystack):
        while matched and symbol != needle[matched]:
            matched = fail[matched - 1]
        if symbol == needle[matched]:
            matched += 1
            if matched == len(needle):
                return pos - len(needle) + 1
    return None


def recall_titles(
    query: str,
    corpus: Corpus,
    trie: TitleTrie,
    scorer: TokenScorer,
    config: RecallConfig,
) -> list[StageOneResult]:
    """Decode up to beam1 titles, best first, each resolved to its document."""
    prompt = render_prompt(config.stage1_template, query, corpus.codec)
    results = constrained_beam_search(
        scorer,
        prompt,
        TrieConstraint(trie),
        BeamConfig(beam_size=config.beam1, max_len=trie.max_depth),
    )
    if not results:
        raise DeadEndError("no title could be generated for this query")
    out = []
    for result in results:
        doc_id = trie.resolve_title(result.tokens)
        if doc_id is None:
            raise InternalInconsistencyError(
                "beam emitted a title absent from the trie"
            )
        out.append(
            StageOneResult(
                title=corpus.document(doc_id).title,
                doc_id=doc_id,
                score1=result.score,
            )
        )
    return out


def select_documents(
    results: Sequence[StageOneResult], k: int
) -> list[StageOneResult]:
    """Top-k distinct documents in stage-1 score order."""
    if not results:
        raise ValueError("no stage-1 results to select from")
    chosen: list[StageOneResult] = []
    seen: set[str] = set()
    for result in results:
        if result.doc_id in seen:
            continue
        seen.add(result.doc_id)
        chosen.append(result)
        if len(chosen) == k:
            break
    return chosen


def recall_prefixes(
    query: str,
    selected: Sequence[StageOneResult],
    indexes: Mapping[str, BWTIndex],
    corpus: Corpus,
    scorer: TokenScorer,
    config: RecallConfig,
) -> list[PrefixResult]:
    """Decode up to beam2 short prefixes constrained to the selected docs."""
    entries = []
    for result in selected:
        index = indexes.get(result.doc_id)
        if index is None:
            raise KeyError(f"missing index for document {result.doc_id!r}")
        entries.append((result.doc_id, index))
    constraint = SubstringConstraint(DocSetConstraint(entries))
    prompt = render_prompt(config.stage2_template, query, corpus.codec)
    results = constrained_beam_search(
        scorer,
        prompt,
        constraint,
        BeamConfig(beam_size=config.beam2, max_len=config.prefix_len),
    )
    out = []
    for result in results:
        state = result.constraint
        assert isinstance(state, SubstringConstraint)
        out.append(
            PrefixResult(
                tokens=result.tokens,
                score2=result.score,
                live_doc_ids=tuple(state.live_doc_ids()),
            )
        )
    return out


def localize(
    prefix: Sequence[int],
    selected: Sequence[StageOneResult],
    corpus: Corpus,
) -> tuple[str, int]:
    """First occurrence of ``prefix``, scanning documents in score order."""
    for result in selected:
        body = corpus.document(result.doc_id).body_tokens
        start = kmp_find_first(body, prefix)
        if start is not None:
            return result.doc_id, start
    raise InternalInconsistencyError(
        "generated prefix not found in any selected document"
    )


def extract_reference(doc: Document, start: int, passage_len: int) -> tuple[int, ...]:
    """Passage slice [start, start + passage_len), clamped at document end."""
    if not 0 <= start < len(doc.body_tokens):
        raise ValueError(f"start {start} out of range for {doc.doc_id!r}")
    return tuple(doc.body_tokens[start : start + passage_len])


def combine_scores(score1: float, score2: float, alpha: float) -> float:
    return alpha * score1 + (1 - alpha) * score2


def _rescore_passage(
    passage: Sequence[int],
    doc_id: str,
    indexes: Mapping[str, BWTIndex],
    prompt: Sequence[int],
    scorer: TokenScorer,
) -> float:
    """Mean log-prob of the whole passage under the single-document constraint."""
    constraint = SubstringConstraint(
        DocSetConstraint([(doc_id, indexes[doc_id])])
    )
    total = 0.0
    context = list(prompt)
    for token in passage:
        log_probs = scorer.log_probs(context, constraint.allowed())
        total += log_probs[token]
        constraint = constraint.step(token)
        context.append(token)
    return total / len(passage)


def recall(
    query: str,
    corpus: Corpus,
    trie: TitleTrie,
    indexes: Mapping[str, BWTIndex],
    scorer: TokenScorer,
    config: RecallConfig,
) -> list[Reference]:
    """End-to-end recall for one query, ranked by combined score."""
    stage1 = recall_titles(query, corpus, trie, scorer, config)
    selected = select_documents(stage1, config.k)
    prefixes = recall_prefixes(query, selected, indexes, corpus, scorer, config)
    if not prefixes:
        raise DeadEndError("no prefix could be generated for this query")
    score1_by_doc = {r.doc_id: r.score1 for r in selected}
    stage2_prompt = render_prompt(config.stage2_template, query, corpus.codec)

    references = []
    seen: set[tuple[str, int]] = set()
    for prefix in prefixes:
        doc_id, start = localize(prefix.tokens, selected, corpus)
        if (doc_id, start) in seen:
            continue
        seen.add((doc_id, start))
        doc = corpus.document(doc_id)
        passage = extract_reference(doc, start, config.passage_len)
        if tuple(passage[: len(prefix.tokens)]) != tuple(prefix.tokens):
            raise InternalInconsistencyError(
                "extracted passage does not begin with its prefix"
            )
        score2 = prefix.score2
        if config.rescore_full_passage:
            score2 = _rescore_passage(
                passage, doc_id, indexes, stage2_prompt, scorer
            )
        score1 = score1_by_doc[doc_id]
        references.append(
            Reference(
                doc_id=doc_id,
                title=doc.title,
                start=start,
                prefix=prefix.tokens,
                passage=passage,
                passage_text=corpus.codec.decode(passage),
                score1=score1,
                score2=score2,
                combined=combine_scores(score1, score2, config.alpha),
            )
        )
    references.sort(key=lambda r: (-r.combined, r.doc_id, r.start))
    return references


class RecallEngine:
    """Bundles the immutable artifacts one recall run needs."""

    def __init__(
        self,
        corpus: Corpus,
        trie: TitleTrie,
        indexes: Mapping[str, BWTIndex],
        scorer: TokenScorer,
        config: RecallConfig | None = None,
    ):
        self.corpus = corpus
        self.trie = trie
        self.indexes = dict(indexes)
        self.scorer = scorer
        self.config = config or RecallConfig()

    def recall(self, query: str) -> list[Reference]:
        return recall(
            query, self.corpus, self.trie, self.indexes, self.scorer, self.config
        )
