import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers
import oracles
from passrecall.corpus import ingest_corpus
from passrecall.pipeline import (
    InternalInconsistencyError,
    RecallConfig,
    RecallEngine,
    StageOneResult,
    combine_scores,
    extract_reference,
    kmp_find_first,
    localize,
    recall_prefixes,
    recall_titles,
    select_documents,
)
from passrecall.scorer import NGramScorer, corpus_scorer

token_lists = st.lists(st.integers(min_value=3, max_value=6), max_size=30)


class TestKMP:
    def test_first_occurrence(self):
        # "x x a b c x x a b c" with x=9 a=3 b=4 c=5
        haystack = [9, 9, 3, 4, 5, 9, 9, 3, 4, 5]
        assert kmp_find_first(haystack, [3, 4, 5]) == 2

    def test_absent_pattern(self):
        assert kmp_find_first([3, 4, 5], [4, 3]) is None

    def test_empty_needle_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            kmp_find_first([3, 4], [])

    def test_needle_longer_than_haystack(self):
        assert kmp_find_first([3], [3, 4]) is None

    def test_self_overlapping_needle(self):
        haystack = [3, 3, 3, 4, 3, 3, 4]
        assert kmp_find_first(haystack, [3, 3, 4]) == 1

    @given(haystack=token_lists, needle=token_lists.filter(lambda t: t))
    @settings(max_examples=300, deadline=None)
    def test_matches_naive_scan(self, haystack, needle):
        occurrences = oracles.naive_locate(haystack, needle)
        expected = occurrences[0] if occurrences else None
        assert kmp_find_first(haystack, needle) == expected


class TestSelectDocuments:
    def results(self):
        return [
            StageOneResult("T1", "d1", -0.1),
            StageOneResult("T1b", "d1", -0.2),
            StageOneResult("T2", "d2", -0.3),
            StageOneResult("T3", "d3", -0.4),
        ]

    def test_takes_top_k_distinct(self):
        chosen = select_documents(self.results(), 2)
        assert [r.doc_id for r in chosen] == ["d1", "d2"]
        assert chosen[0].score1 == -0.1

    def test_k_larger_than_distinct_pool(self):
        chosen = select_documents(self.results(), 10)
        assert [r.doc_id for r in chosen] == ["d1", "d2", "d3"]

    def test_empty_results_rejected(self):
        with pytest.raises(ValueError, match="no stage-1"):
            select_documents([], 2)


class TestLocalize:
    def corpus(self):
        return ingest_corpus(
            [
                {"id": "d1", "title": "one", "text": ["cat dog fox cat dog"]},
                {"id": "d2", "title": "two", "text": ["fox cat dog bird"]},
            ]
        )

    def test_scans_documents_in_given_order(self):
        corpus = self.corpus()
        prefix = corpus.codec.encode("cat dog")
        ordered = [StageOneResult("two", "d2", -0.1), StageOneResult("one", "d1", -0.2)]
        doc_id, start = localize(prefix, ordered, corpus)
        assert (doc_id, start) == ("d2", 1)
        flipped = list(reversed(ordered))
        assert localize(prefix, flipped, corpus) == ("d1", 0)

    def test_falls_through_to_later_documents(self):
        corpus = self.corpus()
        prefix = corpus.codec.encode("bird")
        ordered = [StageOneResult("one", "d1", -0.1), StageOneResult("two", "d2", -0.2)]
        assert localize(prefix, ordered, corpus) == ("d2", 3)

    def test_absent_prefix_is_internal_inconsistency(self):
        corpus = self.corpus()
        ordered = [StageOneResult("one", "d1", -0.1)]
        with pytest.raises(InternalInconsistencyError, match="not found"):
            localize([99, 98], ordered, corpus)

    def test_randomized_against_naive_scan(self):
        rng = random.Random(17)
        for _ in range(40):
            bodies = {
                f"d{i}": [3 + rng.randrange(4) for _ in range(rng.randrange(4, 30))]
                for i in range(rng.randrange(1, 4))
            }
            records = []
            for doc_id, body in bodies.items():
                surface = " ".join(f"t{t}" for t in body)
                records.append(
                    {"id": doc_id, "title": f"title {doc_id}", "text": [surface]}
                )
            corpus = ingest_corpus(records)
            ordered = [
                StageOneResult(f"title {doc_id}", doc_id, -float(i))
                for i, doc_id in enumerate(bodies)
            ]
            source = rng.choice(list(bodies))
            tokens = corpus.document(source).body_tokens
            m = rng.randrange(1, min(4, len(tokens)) + 1)
            i = rng.randrange(len(tokens) - m + 1)
            prefix = list(tokens[i : i + m])
            got = localize(prefix, ordered, corpus)
            expected = None
            for result in ordered:
                occurrences = oracles.naive_locate(
                    corpus.document(result.doc_id).body_tokens, prefix
                )
                if occurrences:
                    expected = (result.doc_id, occurrences[0])
                    break
            assert got == expected


class TestExtractReference:
    def doc(self):
        corpus = ingest_corpus(
            [{"id": "d1", "title": "t", "text": ["a b c d e f g h"]}]
        )
        return corpus.document("d1")

    def test_whole_body_when_passage_len_covers_it(self):
        doc = self.doc()
        assert extract_reference(doc, 0, 100) == doc.body_tokens

    def test_exact_length_mid_document(self):
        doc = self.doc()
        assert extract_reference(doc, 2, 3) == doc.body_tokens[2:5]

    def test_tail_is_clamped(self):
        doc = self.doc()
        assert extract_reference(doc, 6, 5) == doc.body_tokens[6:]

    def test_out_of_range_start_rejected(self):
        doc = self.doc()
        for bad in (-1, len(doc.body_tokens)):
            with pytest.raises(ValueError, match="out of range"):
                extract_reference(doc, bad, 3)


class TestCombineScores:
    def test_worked_arithmetic(self):
        assert combine_scores(-1.0, -2.0, 0.9) == -1.1

    def test_boundaries(self):
        assert combine_scores(-1.5, -7.0, 1.0) == -1.5
        assert combine_scores(-1.5, -7.0, 0.0) == -7.0

    @given(
        scores=st.lists(
            st.tuples(
                st.floats(min_value=-50, max_value=0),
                st.floats(min_value=-50, max_value=0),
            ),
            min_size=2,
            max_size=6,
        ),
        scale=st.floats(min_value=0.01, max_value=100),
        alpha=st.floats(min_value=0, max_value=1),
    )
    @settings(max_examples=200, deadline=None)
    def test_scaling_both_scores_keeps_the_argmax(self, scores, scale, alpha):
        plain = [combine_scores(s1, s2, alpha) for s1, s2 in scores]
        scaled = [combine_scores(scale * s1, scale * s2, alpha) for s1, s2 in scores]
        assert plain.index(max(plain)) == scaled.index(max(scaled))


def small_fixture(num_docs=8, body_len=120, seed=5):
    corpus = ingest_corpus(
        helpers.synthetic_records(num_docs=num_docs, body_len=body_len, seed=seed)
    )
    trie, indexes = helpers.build_artifacts(corpus)
    scorer = corpus_scorer(corpus)
    return corpus, trie, indexes, scorer


class TestRecallTitles:
    def test_single_document_corpus_returns_its_title(self):
        corpus = ingest_corpus(
            [{"id": "d1", "title": "only doc", "text": ["some words here"]}]
        )
        trie, _ = helpers.build_artifacts(corpus)
        results = recall_titles(
            "anything at all", corpus, trie, NGramScorer(), helpers.plain_config()
        )
        assert [r.doc_id for r in results] == ["d1"]
        assert results[0].title == "only doc"

    def test_query_equal_to_title_ranks_that_title_first(self):
        corpus, trie, _, scorer = small_fixture()
        config = helpers.plain_config()
        for doc in corpus.documents[:4]:
            results = recall_titles(doc.title, corpus, trie, scorer, config)
            assert results[0].doc_id == doc.doc_id, doc.title
            # Cross-check the top score against exhaustive scoring.
            titles = [d.title_tokens for d in corpus.documents]
            prompt = corpus.codec.encode(doc.title)
            expected = max(
                oracles.score_sequence(
                    scorer,
                    prompt,
                    t,
                    lambda prefix: oracles.naive_title_allowed(titles, prefix),
                )
                for t in titles
            )
            assert abs(results[0].score1 - expected) <= 1e-9

    def test_results_sorted_by_score(self):
        corpus, trie, _, scorer = small_fixture()
        results = recall_titles(
            corpus.documents[0].title, corpus, trie, scorer, helpers.plain_config()
        )
        scores = [r.score1 for r in results]
        assert scores == sorted(scores, reverse=True)


class TestRecallPrefixes:
    def test_planted_sentence_recalled_from_its_opening(self):
        # Filler walks every ordered pad pair, so pad paths always branch
        # and never outscore the deterministic planted continuation.
        pads = ["pada", "padb", "padc", "padd"]
        pairs = [(a, b) for a in pads for b in pads if a != b]
        filler = " ".join(word for pair in pairs for word in pair)
        planted = "the quick silver owl wrote nine cryptic letters"
        corpus = ingest_corpus(
            [
                {"id": "d1", "title": "planted page", "text": [f"{filler} {planted}"]},
                {"id": "d2", "title": "other page", "text": [filler]},
            ]
        )
        _, indexes = helpers.build_artifacts(corpus)
        planted_tokens = corpus.codec.encode(planted)
        scorer = NGramScorer(order=3)
        scorer.add_stream(planted_tokens)
        config = helpers.plain_config(prefix_len=8, passage_len=20, beam2=20)
        selected = [
            StageOneResult("planted page", "d1", -0.1),
            StageOneResult("other page", "d2", -0.2),
        ]
        results = recall_prefixes(
            "the quick silver owl", selected, indexes, corpus, scorer, config
        )
        assert results
        assert results[0].tokens == tuple(planted_tokens)
        assert results[0].live_doc_ids == ("d1",)
        # Exhaustive check: no length-8 substring of either body scores higher.
        bodies = [list(d.body_tokens) for d in corpus.documents]
        prompt = corpus.codec.encode("the quick silver owl")
        best = max(
            oracles.score_sequence(
                scorer,
                prompt,
                seq,
                lambda prefix: (
                    oracles.naive_successors(bodies, prefix)
                    or ({0} if prefix else set())
                ),
            )
            for seq in oracles.enumerate_substring_finishers(bodies, 8)
        )
        assert abs(results[0].score2 - best) <= 1e-9

    def test_missing_index_names_document(self):
        corpus, _, indexes, scorer = small_fixture(num_docs=3)
        selected = [StageOneResult("t", corpus.documents[0].doc_id, -0.1)]
        del indexes[corpus.documents[0].doc_id]
        with pytest.raises(KeyError, match=corpus.documents[0].doc_id):
            recall_prefixes(
                "whatever", selected, indexes, corpus, scorer, helpers.plain_config()
            )


class TestRecallEndToEnd:
    def engine(self, **config_overrides):
        corpus, trie, indexes, scorer = small_fixture()
        config = helpers.plain_config(
            prefix_len=8, passage_len=40, **config_overrides
        )
        return corpus, RecallEngine(corpus, trie, indexes, scorer, config)

    def test_excerpt_queries_hit_their_documents(self):
        corpus, engine = self.engine()
        queries = helpers.excerpt_queries(corpus, count=12, excerpt_len=15, seed=3)
        for query, source_doc in queries:
            references = engine.recall(query)
            assert references
            assert references[0].doc_id == source_doc

    def test_reference_invariants(self):
        corpus, engine = self.engine()
        queries = helpers.excerpt_queries(corpus, count=8, excerpt_len=15, seed=4)
        for query, _ in queries:
            references = engine.recall(query)
            seen = set()
            for ref in references:
                body = corpus.document(ref.doc_id).body_tokens
                assert ref.passage == body[ref.start : ref.start + 40]
                assert ref.passage[: len(ref.prefix)] == ref.prefix
                assert ref.passage_text == corpus.codec.decode(ref.passage)
                recombined = combine_scores(ref.score1, ref.score2, 0.9)
                assert abs(ref.combined - recombined) <= 1e-12
                assert (ref.doc_id, ref.start) not in seen
                seen.add((ref.doc_id, ref.start))

    def test_alpha_boundaries_order_by_single_stage(self):
        corpus, engine_zero = self.engine(alpha=0.0)
        queries = helpers.excerpt_queries(corpus, count=5, excerpt_len=15, seed=6)
        _, engine_one = self.engine(alpha=1.0)
        for query, _ in queries:
            for engine, field in ((engine_zero, "score2"), (engine_one, "score1")):
                references = engine.recall(query)
                got = [(r.doc_id, r.start) for r in references]
                expected = [
                    (r.doc_id, r.start)
                    for r in sorted(
                        references,
                        key=lambda r: (-getattr(r, field), r.doc_id, r.start),
                    )
                ]
                assert got == expected

    def test_rescore_full_passage_changes_score2_only(self):
        corpus, engine_plain = self.engine()
        _, engine_rescore = self.engine(rescore_full_passage=True)
        query = helpers.excerpt_queries(corpus, count=1, excerpt_len=15, seed=9)[0][0]
        plain_refs = engine_plain.recall(query)
        rescored_refs = engine_rescore.recall(query)
        plain_by_key = {(r.doc_id, r.start): r for r in plain_refs}
        rescored_by_key = {(r.doc_id, r.start): r for r in rescored_refs}
        assert set(plain_by_key) == set(rescored_by_key)
        for key, rescored in rescored_by_key.items():
            assert plain_by_key[key].score1 == rescored.score1
            assert rescored.combined == combine_scores(
                rescored.score1, rescored.score2, 0.9
            )

    def test_single_document_corpus_always_returns_it(self):
        corpus = ingest_corpus(
            [{"id": "solo", "title": "alone here", "text": ["just a few words inside"]}]
        )
        trie, indexes = helpers.build_artifacts(corpus)
        engine = RecallEngine(
            corpus,
            trie,
            indexes,
            NGramScorer(),
            helpers.plain_config(prefix_len=3, passage_len=5),
        )
        for query in ("first", "second unrelated query"):
            references = engine.recall(query)
            assert references
            assert all(r.doc_id == "solo" for r in references)


class TestConfig:
    def test_defaults_match_the_working_configuration(self):
        config = RecallConfig()
        assert config.alpha == 0.9
        assert config.k == 2
        assert config.beam1 == 15
        assert config.beam2 == 10
        assert config.prefix_len == 16
        assert config.passage_len == 150
        assert config.rescore_full_passage is False

    def test_validation(self):
        with pytest.raises(ValueError, match="alpha"):
            helpers.plain_config(alpha=1.5)
        with pytest.raises(ValueError, match="k"):
            helpers.plain_config(k=0)
        with pytest.raises(ValueError, match="beam"):
            helpers.plain_config(beam1=0)
        with pytest.raises(ValueError, match="prefix_len"):
            helpers.plain_config(prefix_len=200, passage_len=100)

    def test_described_lists_every_field(self):
        described = helpers.plain_config().described()
        assert described["alpha"] == 0.9
        assert described["stage1_template"] == "{}"
        assert set(described) == {
            "alpha",
            "k",
            "beam1",
            "beam2",
            "prefix_len",
            "passage_len",
            "stage1_template",
            "stage2_template",
            "rescore_full_passage",
        }
