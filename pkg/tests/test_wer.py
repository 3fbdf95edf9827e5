import itertools
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rirbench.errors import ValidationError
from rirbench.wer import WerResult, tokenize, wer


def brute_force_edit_distance(ref, hyp):
    """Independent recursive alignment oracle."""

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        sub = go(i - 1, j - 1) + (0 if ref[i - 1] == hyp[j - 1] else 1)
        return min(sub, go(i, j - 1) + 1, go(i - 1, j) + 1)

    return go(len(ref), len(hyp))


class TestWer:
    def test_identical(self):
        r = wer("the cat sat on mats".split(), "the cat sat on mats".split())
        assert r.wer == 0.0 and r.errors == 0

    def test_single_substitution(self):
        r = wer("a b c d".split(), "a x c d".split())
        assert r.substitutions == 1 and r.deletions == 0 and r.insertions == 0
        assert r.wer == 0.25

    def test_single_deletion(self):
        r = wer("a b c".split(), "a c".split())
        assert r.deletions == 1 and r.wer == pytest.approx(1 / 3)

    def test_single_insertion(self):
        r = wer("a c".split(), "a b c".split())
        assert r.insertions == 1 and r.wer == 0.5

    def test_empty_reference_rejected(self):
        with pytest.raises(ValidationError):
            wer([], "a".split())

    def test_empty_hypothesis_all_deletions(self):
        r = wer("a b c".split(), [])
        assert r.deletions == 3 and r.wer == 1.0

    def test_wer_zero_iff_equal(self):
        assert wer(["a", "b"], ["a", "b"]).wer == 0.0
        assert wer(["a", "b"], ["b", "a"]).wer > 0.0

    def test_matches_oracle_exhaustive_small(self):
        vocab = ("a", "b", "c")
        seqs = [seq for k in range(0, 4) for seq in itertools.product(vocab, repeat=k)]
        for ref in seqs:
            if not ref:
                continue
            for hyp in seqs:
                r = wer(list(ref), list(hyp))
                assert r.errors == brute_force_edit_distance(ref, hyp)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
        st.lists(st.sampled_from("abc"), min_size=0, max_size=6),
    )
    def test_matches_oracle_random(self, ref, hyp):
        assert wer(ref, hyp).errors == brute_force_edit_distance(tuple(ref), tuple(hyp))

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
        st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
        st.lists(st.sampled_from("abc"), min_size=0, max_size=6),
    )
    def test_triangle_bound(self, a, b, c):
        # edit(a,c) <= edit(a,b) + edit(b,c)
        ac = wer(a, c).errors
        ab = wer(a, b).errors
        bc = brute_force_edit_distance(tuple(b), tuple(c))
        assert ac <= ab + bc


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        assert tokenize("Hello, World!") == ["hello", "world"]

    def test_keeps_apostrophes(self):
        assert tokenize("it's fine") == ["it's", "fine"]

    def test_collapses_whitespace(self):
        assert tokenize("  a\t b \n c ") == ["a", "b", "c"]

    def test_keeps_digits(self):
        assert tokenize("room 6 by 5") == ["room", "6", "by", "5"]
