"""Constrained beam search over token-id sequences.

A constraint walks in lockstep with generation: at each step the candidate
set is whatever the constraint allows, so every emitted sequence exists in
the backing structure by construction.  The terminator (id 0) is a control
signal, not content: choosing it freezes the hypothesis without scoring the
terminator itself, and the final score is the mean log-probability of the
content tokens alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

from .corpus import END_ID
from .fmindex import DocSetConstraint
from .scorer import TokenScorer
from .trie import TitleTrie, TrieNode

logger = logging.getLogger(__name__)


class Constraint(Protocol):
    def allowed(self) -> set[int]:
        """Tokens legal right now; includes END_ID when stopping is legal."""
        ...

    def step(self, token: int) -> "Constraint":
        """Advance past a content token (never END_ID)."""
        ...

    def is_terminal(self) -> bool:
        """Whether the sequence so far is complete on its own."""
        ...


class TrieConstraint:
    """Restricts generation to exact root-to-terminal paths of a title trie."""

    def __init__(self, trie: TitleTrie, node: TrieNode | None = None):
        self.trie = trie
        self.node = trie.root if node is None else node

    def allowed(self) -> set[int]:
        return TitleTrie.allowed_at(self.node)

    def step(self, token: int) -> "TrieConstraint":
        if token == END_ID:
            raise ValueError("the search finishes on END_ID instead of stepping")
        child = self.node.children.get(token)
        if child is None:
            raise ValueError(f"token {token} not allowed here")
        return TrieConstraint(self.trie, child)

    def is_terminal(self) -> bool:
        return self.node.doc_id is not None


class SubstringConstraint:
    """Restricts generation to verbatim substrings of a live document set.

    END_ID only becomes legal when every live occurrence has reached its
    document's end; until then the prefix keeps growing and stops only at
    the search's length cap.  Any nonempty prefix is terminal, which is what
    lets length-capped prefixes finish cleanly.
    """

    def __init__(self, docs: DocSetConstraint, started: bool = False):
        self.docs = docs
        self.started = started

    def allowed(self) -> set[int]:
        successors = self.docs.allowed_successors()
        if successors:
            return successors
        if self.started:
            return {END_ID}
        return set()

    def step(self, token: int) -> "SubstringConstraint":
        if token == END_ID:
            raise ValueError("the search finishes on END_ID instead of stepping")
        advanced = self.docs.advance(token)
        if not advanced.live:
            raise ValueError(f"token {token} not allowed here")
        return SubstringConstraint(advanced, started=True)

    def is_terminal(self) -> bool:
        return self.started

    def live_doc_ids(self) -> list[str]:
        return self.docs.live_doc_ids()


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int
    max_len: int
    # When set, beam pruning compares mean rather than summed log-probs.
    # Final ranking is always length-normalized either way.  Because
    # finished hypotheses leave the pool, live ones always share a length,
    # making the two pruning orders coincide; the flag stays for parity
    # with decoders that keep finished hypotheses in the beam.
    prune_normalized: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be at least 1")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")


@dataclass
class Hypothesis:
    constraint: Constraint
    tokens: tuple[int, ...] = ()
    cum_logprob: float = 0.0
    finished: bool = False

    @property
    def normalized(self) -> float:
        if not self.tokens:
            raise ValueError("cannot normalize an empty hypothesis")
        return self.cum_logprob / len(self.tokens)


@dataclass(frozen=True)
class BeamResult:
    tokens: tuple[int, ...]
    score: float
    constraint: Constraint


def constrained_beam_search(
    scorer: TokenScorer,
    prompt: Sequence[int],
    constraint: Constraint,
    config: BeamConfig,
) -> list[BeamResult]:
    """Beam-decode under a constraint; ranked best-first by mean log-prob.

    Ties break toward the lexicographically smaller token sequence so runs
    are reproducible.  Finished hypotheses are parked and only compete at
    the end, so an early short finisher cannot crowd live ones out of the
    beam.  Returns at most beam_size results; an all-dead beam returns an
    empty list after logging the dead end.
    """
    if not constraint.allowed():
        raise ValueError("constraint offers no tokens at the start")
    prompt = list(prompt)
    live = [Hypothesis(constraint=constraint)]
    finished: list[Hypothesis] = []

    for _ in range(config.max_len):
        if not live:
            break
        expansions: list[Hypothesis] = []
        for hyp in live:
            allowed = hyp.constraint.allowed()
            if not allowed:
                continue
            log_probs = scorer.log_probs(prompt + list(hyp.tokens), allowed)
            for token in sorted(allowed):
                if token == END_ID:
                    if hyp.tokens:
                        finished.append(
                            Hypothesis(
                                constraint=hyp.constraint,
                                tokens=hyp.tokens,
                                cum_logprob=hyp.cum_logprob,
                                finished=True,
                            )
                        )
                    continue
                expansions.append(
                    Hypothesis(
                        constraint=hyp.constraint.step(token),
                        tokens=hyp.tokens + (token,),
                        cum_logprob=hyp.cum_logprob + log_probs[token],
                    )
                )
        if config.prune_normalized:
            expansions.sort(key=lambda h: (-h.normalized, h.tokens))
        else:
            expansions.sort(key=lambda h: (-h.cum_logprob, h.tokens))
        live = expansions[: config.beam_size]

    for hyp in live:
        if hyp.tokens and hyp.constraint.is_terminal():
            finished.append(
                Hypothesis(
                    constraint=hyp.constraint,
                    tokens=hyp.tokens,
                    cum_logprob=hyp.cum_logprob,
                    finished=True,
                )
            )

    if not finished:
        logger.warning(
            "beam search dead-ended with no finished hypothesis "
            "(beam_size=%d, max_len=%d)",
            config.beam_size,
            config.max_len,
        )
        return []
    finished.sort(key=lambda h: (-h.normalized, h.tokens))
    return [
        BeamResult(tokens=h.tokens, score=h.normalized, constraint=h.constraint)
        for h in finished[: config.beam_size]
    ]
