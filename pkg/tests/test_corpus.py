import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neatread import corpus
from neatread.corpus import CorpusError, EyeTrackRecord


def test_build_vocab_hand_count():
    v = corpus.build_vocab("a b a c".split(), 2)
    assert v.words[2:] == ["a", "b"]
    assert v.counts[2:] == [2, 1]
    assert v.encode(["c"])[0] == v.oov_id
    assert v.counts[v.oov_id] == 1


def test_build_vocab_tie_first_occurrence():
    v = corpus.build_vocab("a a b b".split(), 1)
    assert v.words[2:] == ["a"]
    v = corpus.build_vocab("b b a a".split(), 1)
    assert v.words[2:] == ["b"]


def test_build_vocab_large_size_no_oov():
    toks = "x y z x".split()
    v = corpus.build_vocab(toks, 100)
    assert v.oov_id not in v.encode(toks)
    assert v.counts[v.oov_id] == 0


def test_build_vocab_errors():
    with pytest.raises(CorpusError):
        corpus.build_vocab([], 5)
    with pytest.raises(CorpusError):
        corpus.build_vocab(["a"], 0)


@given(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=60), st.integers(1, 8))
def test_vocab_deterministic_and_roundtrip(toks, size):
    v1, v2 = corpus.build_vocab(toks, size), corpus.build_vocab(list(toks), size)
    assert v1.words == v2.words and v1.counts == v2.counts
    kept = [t for t in toks if t in v1]
    assert v1.decode(v1.encode(kept)) == kept
    counts = v1.counts[2:]
    assert counts == sorted(counts, reverse=True)


def test_vocab_save_load(tmp_path):
    v = corpus.build_vocab("the cat the dog".split(), 10)
    v.save(tmp_path / "v.tsv", {"seed": 1})
    w = corpus.Vocabulary.load(tmp_path / "v.tsv")
    assert w.words == v.words and w.counts == v.counts


def test_log_frequency_add_one():
    v = corpus.build_vocab("a a b".split(), 5)
    assert v.log_frequency("a") == pytest.approx(math.log(3 / (3 + 4)))
    assert v.log_frequency("zzz") == pytest.approx(math.log(1 / 7))


@pytest.mark.parametrize("n_tok,n,expect", [(120, 50, 2), (50, 50, 1), (49, 50, 0)])
def test_chunk_counts(n_tok, n, expect):
    seqs = corpus.chunk_sequences(np.arange(n_tok), n)
    assert len(seqs) == expect
    assert all(len(s) == n for s in seqs)


@given(st.integers(0, 300), st.integers(2, 40))
def test_chunk_length_conservation(n_tok, n):
    seqs = corpus.chunk_sequences(np.arange(n_tok), n)
    dropped = n_tok - sum(len(s) for s in seqs)
    assert 0 <= dropped < n
    if seqs:
        assert seqs[1 if len(seqs) > 1 else 0].positions[0][1] == (n if len(seqs) > 1 else 0)


def test_chunk_bad_length():
    with pytest.raises(CorpusError):
        corpus.chunk_sequences([1, 2, 3], 1)


HEADER = "\t".join(corpus.EYETRACK_COLUMNS) + "\n"


def _write(tmp_path, rows):
    p = tmp_path / "et.tsv"
    p.write_text(HEADER + "".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return p


def test_load_eyetrack_aggregate(tmp_path):
    p = _write(tmp_path, [
        ["d1", "0", "The", "1,0,1,1,0,1,1,0,1,1", "210", "DET", "1.5", "0.3", "1"],
        ["d1", "1", "cat", "NA,NA,NA,NA,NA,NA,NA,NA,NA,NA", "NA", "NOUN", "NA", "NA", "2"],
    ])
    recs = corpus.load_eyetrack(p)
    assert recs[0].fixation_prob == pytest.approx(0.7)
    assert recs[0].word_length == 3
    assert recs[1].fixation_prob is None and recs[1].excluded
    assert recs[1].first_pass_ms is None


def test_load_eyetrack_negative_duration(tmp_path):
    p = _write(tmp_path, [["d1", "0", "a", "1", "-5", "X", "0", "0", "0"]])
    with pytest.raises(CorpusError, match="line 2, column first_pass_ms"):
        corpus.load_eyetrack(p)


@pytest.mark.parametrize("row,where", [
    (["d1", "x", "a", "1", "5", "X", "0", "0", "0"], "column token_idx"),
    (["d1", "0", "a", "2", "5", "X", "0", "0", "0"], "column fixations"),
    (["d1", "0", "a", "1", "5", "X", "zz", "0", "0"], "column launch_dist"),
    (["d1", "0", "a", "1", "5"], "line 2"),
])
def test_load_eyetrack_malformed(tmp_path, row, where):
    with pytest.raises(CorpusError, match=where):
        corpus.load_eyetrack(_write(tmp_path, [row]))


def test_load_eyetrack_missing_column(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("doc_id\tword\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="missing columns"):
        corpus.load_eyetrack(p)


def test_eyetrack_write_roundtrip(tmp_path):
    recs = [EyeTrackRecord("d", i, w, [1, None, 0], 180.5 if i else None, "NOUN", 2.0, 0.5, 3.0)
            for i, w in enumerate(["a", "bb", "ccc"])]
    corpus.write_eyetrack(tmp_path / "e.tsv", recs)
    back = corpus.load_eyetrack(tmp_path / "e.tsv")
    for a, b in zip(recs, back):
        assert (a.doc_id, a.token_idx, a.word, a.fixations, a.first_pass_ms) == (
            b.doc_id, b.token_idx, b.word, b.fixations, b.first_pass_ms)


def _records(words, doc="d", fix=(1,)):
    return [EyeTrackRecord(doc, i, w, list(fix), 200.0, "NOUN", 1.0, 0.5, 1.0) for i, w in enumerate(words)]


def test_filter_positions():
    words = [f"w{i}" for i in range(50)]
    vocab = corpus.build_vocab(words, 100)
    kept = corpus.filter_eval_points(_records(words), vocab, 50, 3)
    positions = {r.position for r in kept}
    assert 2 not in positions and 25 in positions
    assert positions == set(range(3, 47))


def test_filter_retained_fraction():
    # 10% OOV, placed as whole windows so it is exactly independent of position
    rng = np.random.default_rng(0)
    n_seq, n = 100, 50
    words = [f"v{i}" for i in range(n_seq * n)]
    grid = np.zeros((n_seq, n), dtype=bool)
    rows = rng.permutation(n_seq)[: n_seq // 10]
    grid[rows, :] = True
    words = [("OOV" if grid[k // n, k % n] else w) for k, w in enumerate(words)]
    vocab = corpus.build_vocab([w for w in words if w != "OOV"], 10**6)
    kept = corpus.filter_eval_points(_records(words), vocab, n, 3)
    assert len(kept) / len(words) == pytest.approx((1 - 0.10) * 44 / 50, abs=1e-9)


def test_filter_excludes_missing_and_bad_boundary():
    words = [f"w{i}" for i in range(10)]
    recs = _records(words, fix=(None,))
    vocab = corpus.build_vocab(words, 100)
    assert corpus.filter_eval_points(recs, vocab, 10, 2) == []
    with pytest.raises(CorpusError):
        corpus.filter_eval_points(recs, vocab, 10, 5)


def test_annotate_predictors():
    words = "a b a".split()
    recs = _records(words, fix=(1, 0, 0))
    vocab = corpus.build_vocab(words, 10)
    corpus.annotate_predictors(recs, vocab)
    assert recs[0].prev_log_freq is None
    assert recs[1].prev_log_freq == pytest.approx(vocab.log_frequency("a"))
    assert recs[1].prev_fixated == 0.0  # 1/3 < 0.5


def test_human_fixation_rate():
    recs = _records(["a", "b"], fix=(1, 0)) + _records(["c"], doc="e", fix=(1, 1))
    assert corpus.human_fixation_rate(recs) == pytest.approx((0.5 + 0.5 + 1) / 3)
    assert corpus.human_fixation_rate(recs, docs={"e"}) == 1.0
    assert corpus.human_fixation_rate(recs, docs={"zz"}) is None


def test_tokenize():
    assert corpus.tokenize("The cat, sat.") == ["The", "cat,", "sat."]
    assert corpus.tokenize("The Cat", lowercase=True) == ["the", "cat"]
