import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnrank.bpe import pretokenize
from vulnrank.errors import ContractViolation
from vulnrank.features import (
    TrimmedLexicon,
    assemble_features,
    build_trimmed_lexicon,
    feature_matrix,
    function_length,
    longest_line,
    read_features_csv,
    token_prevalence,
    write_features_csv,
)
from vulnrank.ingest import FunctionRecord

FIXTURE = Path(__file__).parent / "fixtures" / "feature_fixture.json"


def make_record(idx, body, label=0, param_count=0):
    return FunctionRecord(
        id=idx, name=f"fn{idx}", file_path="a.c", line_start=1,
        line_end=1 + body.count("\n"), body=body, param_count=param_count,
        label=label,
    )


def lexicon_of(tokens, lower_cut=1, upper_cut=100.0):
    return TrimmedLexicon(tokens=frozenset(tokens), lower_cut=lower_cut,
                          upper_cut_percentile=upper_cut)


class TestFunctionLength:
    def test_empty_body(self):
        assert function_length(pretokenize("")) == 0

    def test_counts_with_multiplicity(self):
        # x = x + x ; -> three x's count three times
        assert function_length(pretokenize("x = x + x ;")) == 6

    def test_additive_over_concatenation(self):
        a, b = "free ( p ) ;", "return q ;"
        total = function_length(pretokenize(a + "\n" + b))
        assert total == function_length(pretokenize(a)) + function_length(pretokenize(b))


class TestLongestLine:
    def test_hand_counted(self):
        # line 1 has 4 tokens (a = b ;), line 2 has 3 (return a ;)
        assert longest_line("a = b ;\nreturn a ;") == 4

    def test_single_line_equals_function_length(self):
        body = "free ( p ) ;"
        assert longest_line(body) == function_length(pretokenize(body))

    def test_empty_body(self):
        assert longest_line("") == 0

    def test_never_exceeds_function_length(self):
        rng = np.random.default_rng(0)
        pieces = ["a b", "c ;", "x = 1", "", "free ( p )"]
        for _ in range(20):
            body = "\n".join(rng.choice(pieces, size=rng.integers(1, 6)))
            assert longest_line(body) <= function_length(pretokenize(body))


class TestTrimmedLexicon:
    def test_no_trimming_keeps_all_cve_tokens(self):
        records = [make_record(0, "free ( p ) ;", label=1)]
        lex = build_trimmed_lexicon(records, lower_cut=1, upper_cut_percentile=100.0)
        assert lex.tokens == frozenset({"free", "(", "p", ")", ";"})

    def test_upper_cut_drops_most_frequent_corpus_tokens(self):
        # Corpus frequencies (hand-tallied over all three bodies):
        #   "(" 4, ")" 4, ";" 4, free 2, p 2, g/q/h/r 1 each.
        # Nine distinct tokens; cutting at the 60th percentile drops the
        # floor(40% * 9) = 3 most frequent, i.e. exactly the three
        # punctuation tokens at frequency 4.
        records = [
            make_record(0, "free ( p ) ; free ( p ) ;", label=1),
            make_record(1, "g ( q ) ;", label=0),
            make_record(2, "h ( r ) ;", label=0),
        ]
        lex = build_trimmed_lexicon(records, lower_cut=1, upper_cut_percentile=60.0)
        assert lex.tokens == frozenset({"free", "p"})

    def test_lower_cut_on_unique_tokens_empties_lexicon(self, caplog):
        records = [make_record(0, "alpha beta gamma", label=1)]
        with caplog.at_level("WARNING"):
            lex = build_trimmed_lexicon(records, lower_cut=2, upper_cut_percentile=100.0)
        assert lex.tokens == frozenset()
        assert any("empty" in m for m in caplog.messages)

    def test_no_positive_records_is_an_error(self):
        records = [make_record(0, "free ( p ) ;", label=0)]
        with pytest.raises(ValueError, match="label"):
            build_trimmed_lexicon(records)

    def test_lower_cut_monotone(self):
        records = [
            make_record(0, "free free len len len x", label=1),
            make_record(1, "free q", label=1),
        ]
        previous = None
        for cut in (1, 2, 3, 4):
            lex = build_trimmed_lexicon(records, lower_cut=cut, upper_cut_percentile=100.0)
            if previous is not None:
                assert lex.tokens <= previous
            previous = lex.tokens

    def test_upper_cut_monotone(self):
        records = [
            make_record(0, "free free free x y ; ; ; ; ;", label=1),
            make_record(1, "x x x x y", label=0),
        ]
        previous = None
        for pct in (20.0, 50.0, 80.0, 100.0):
            lex = build_trimmed_lexicon(records, lower_cut=1, upper_cut_percentile=pct)
            if previous is not None:
                assert previous <= lex.tokens
            previous = lex.tokens


class TestTokenPrevalence:
    def test_no_shared_tokens(self):
        assert token_prevalence(pretokenize("a b c"), lexicon_of({"free"})) == 0.0

    def test_hand_computed_two_fifths(self):
        # bag {free ( p ) ;} has N=5; lexicon {free, p} hits k=2
        tokens = pretokenize("free ( p ) ;")
        assert token_prevalence(tokens, lexicon_of({"free", "p"})) == pytest.approx(0.4, abs=1e-15)

    def test_empty_body_guarded(self):
        assert token_prevalence([], lexicon_of({"free"})) == 0.0

    def test_empty_lexicon_gives_zero(self):
        assert token_prevalence(pretokenize("free ( p )"), lexicon_of(set())) == 0.0

    def test_distinct_hits_not_multiplicity(self):
        # free appears 3 times but counts once in k; N counts all 4
        tokens = pretokenize("free free free len")
        assert token_prevalence(tokens, lexicon_of({"free", "len"})) == pytest.approx(0.5)

    @given(st.lists(st.sampled_from(["free", "p", "x", ";", "("]), max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_always_in_unit_interval(self, tokens):
        value = token_prevalence(tokens, lexicon_of({"free", ";"}))
        assert 0.0 <= value <= 1.0


class TestAnnotatedFixture:
    def test_all_twenty_functions_match_hand_annotations(self):
        data = json.loads(FIXTURE.read_text())
        lexicon = lexicon_of(set(data["lexicon"]))
        assert len(data["functions"]) == 20
        for i, case in enumerate(data["functions"]):
            tokens = pretokenize(case["body"])
            assert function_length(tokens) == case["fn_length"], f"case {i}"
            assert longest_line(case["body"]) == case["longest_line"], f"case {i}"
            expected = case["prevalence_num"] / case["prevalence_den"]
            got = token_prevalence(tokens, lexicon)
            assert got == pytest.approx(expected, abs=1e-12), f"case {i}"


class TestAssembly:
    def build_inputs(self, d=4, n=3):
        rng = np.random.default_rng(0)
        records = [
            make_record(i, f"free ( p{i} ) ;", label=i % 2, param_count=i)
            for i in range(n)
        ]
        emb = {r.id: rng.normal(size=d) for r in records}
        sums = {r.id: float(i) for i, r in enumerate(records)}
        lex = lexicon_of({"free"})
        return records, emb, sums, lex

    def test_row_width_is_d_plus_five(self):
        for d, width in ((32, 37), (128, 133)):
            records, emb, sums, lex = self.build_inputs(d=d)
            rows = assemble_features(records, emb, sums, lex)
            for row in rows:
                assert row.to_vector().shape == (width,)

    def test_column_order(self):
        records, emb, sums, lex = self.build_inputs(d=2)
        row = assemble_features(records, emb, sums, lex)[2]
        vec = row.to_vector()
        np.testing.assert_array_equal(vec[:2], row.embedding)
        assert vec[2] == row.fn_length
        assert vec[3] == row.token_prevalence
        assert vec[4] == row.row_sum
        assert vec[5] == row.longest_line
        assert vec[6] == row.param_count

    def test_permutation_invariance(self):
        records, emb, sums, lex = self.build_inputs()
        rows = assemble_features(records, emb, sums, lex)
        shuffled = assemble_features(records[::-1], emb, sums, lex)
        by_id = {r.function_id: r for r in shuffled}
        for row in rows:
            np.testing.assert_array_equal(row.to_vector(), by_id[row.function_id].to_vector())

    def test_missing_embedding_is_contract_violation(self):
        records, emb, sums, lex = self.build_inputs()
        del emb[1]
        with pytest.raises(ContractViolation):
            assemble_features(records, emb, sums, lex)

    def test_no_missing_values(self):
        records, emb, sums, lex = self.build_inputs(d=6, n=5)
        _, X, y = feature_matrix(assemble_features(records, emb, sums, lex))
        assert np.isfinite(X).all()
        assert X.shape == (5, 11)
        assert set(np.unique(y)) <= {0, 1}

    def test_csv_round_trip(self, tmp_path):
        records, emb, sums, lex = self.build_inputs(d=3, n=4)
        rows = assemble_features(records, emb, sums, lex)
        path = tmp_path / "features.csv"
        write_features_csv(rows, path)
        ids, X, y = read_features_csv(path)
        want_ids, want_X, want_y = feature_matrix(rows)
        np.testing.assert_array_equal(ids, want_ids)
        np.testing.assert_array_equal(X, want_X)
        np.testing.assert_array_equal(y, want_y)
