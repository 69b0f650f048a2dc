import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cknn import InvalidInputError, SearchIndex, bench_throughput, knn_pseudo_score_all, knn_score, knn_score_batch


def brute_force(bank, q, k, exclude_exact=False):
    d = np.sort(np.sqrt(((bank - q) ** 2).sum(axis=1)))
    if exclude_exact and d[0] <= 1e-12:
        d = d[1:]
    return d[:k].mean()


def test_three_four_five():
    assert knn_score(SearchIndex([[3.0, 4.0]]), [0.0, 0.0], 1) == 5.0


def test_self_match_without_exclusion_is_zero(rng):
    bank = rng.normal(size=(10, 3))
    assert knn_score(SearchIndex(bank), bank[4], 1) == 0.0
    assert knn_score(SearchIndex(bank), bank[4], 1, exclude_exact=True) > 0


def test_random_bank_matches_oracle(rng):
    bank = rng.normal(size=(200, 8))
    index = SearchIndex(bank)
    for q in rng.normal(size=(20, 8)):
        assert abs(knn_score(index, q, 4) - brute_force(bank, q, 4)) <= 1e-12


def test_exclusion_drops_at_most_one_duplicate():
    bank = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    assert knn_score(SearchIndex(bank), [0.0, 0.0], 1, exclude_exact=True) == 0.0
    assert knn_score(SearchIndex(bank), [0.0, 0.0], 2, exclude_exact=True) == 0.5


def test_k_too_large():
    index = SearchIndex(np.zeros((3, 2)))
    knn_score(index, [1.0, 1.0], 3)
    with pytest.raises(InvalidInputError):
        knn_score(index, [1.0, 1.0], 4)
    with pytest.raises(InvalidInputError):
        knn_score(index, [0.0, 0.0], 3, exclude_exact=True)
    with pytest.raises(InvalidInputError):
        knn_score(index, [1.0, 1.0], 0)


def test_batch_error_marking():
    index = SearchIndex(np.array([[0.0], [5.0]]))
    Q = np.array([[0.0], [1.0]])
    with pytest.raises(InvalidInputError):
        knn_score_batch(index, Q, 2, exclude_exact=True)
    out = knn_score_batch(index, Q, 2, exclude_exact=True, on_error="mark")
    assert np.isnan(out[0]) and out[1] == 2.5


def test_dim_mismatch_and_non_finite():
    index = SearchIndex(np.zeros((3, 2)))
    with pytest.raises(InvalidInputError):
        knn_score(index, [1.0, 1.0, 1.0], 1)
    with pytest.raises(InvalidInputError):
        knn_score(index, [np.nan, 1.0], 1)
    with pytest.raises(InvalidInputError):
        SearchIndex([[np.inf, 0.0]])


def test_index_is_read_only(rng):
    bank = rng.normal(size=(5, 2))
    index = SearchIndex(bank)
    bank[0, 0] = 100.0
    assert index.matrix[0, 0] != 100.0
    with pytest.raises(ValueError):
        index.matrix[0, 0] = 1.0
    assert np.allclose(index.sq_norms, (index.matrix ** 2).sum(axis=1))


def test_batch_of_one_and_permutation(rng):
    bank = rng.normal(size=(60, 5))
    Q = rng.normal(size=(25, 5))
    index = SearchIndex(bank)
    batch = knn_score_batch(index, Q, 3)
    assert knn_score_batch(index, Q[:1], 3)[0] == knn_score(index, Q[0], 3)
    perm = rng.permutation(25)
    assert np.array_equal(knn_score_batch(index, Q[perm], 3), batch[perm])


def test_bank_as_batch_equals_pseudo_scores(rng):
    X = rng.normal(size=(80, 6))
    assert np.array_equal(knn_score_batch(SearchIndex(X), X, 4, exclude_exact=True), knn_pseudo_score_all(X, 4))


def test_chunking_is_bit_identical(rng):
    bank = rng.normal(size=(300, 7))
    Q = rng.normal(size=(101, 7))
    index = SearchIndex(bank)
    ref = knn_score_batch(index, Q, 5, chunk_size=1024)
    for cs in (1, 7, 50):
        assert np.array_equal(knn_score_batch(index, Q, 5, chunk_size=cs), ref)
    assert np.array_equal(ref, [knn_score(index, q, 5) for q in Q])


def test_ties_at_kth_distance_are_deterministic():
    bank = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.0, 0.0]])
    s = knn_score(SearchIndex(bank), [0.0, 0.0], 2, exclude_exact=True)
    assert s == 1.0


bank_strategy = st.integers(2, 40).flatmap(
    lambda n: st.integers(1, 6).flatmap(
        lambda d: st.tuples(arrays(np.float64, (n, d), elements=st.floats(-100, 100)),
                            arrays(np.float64, (d,), elements=st.floats(-100, 100)))))


@given(bank_strategy, st.integers(1, 40))
def test_non_decreasing_in_k(data, k):
    bank, q = data
    k = min(k, bank.shape[0] - 1)
    index = SearchIndex(bank)
    assert knn_score(index, q, k) <= knn_score(index, q, k + 1) + 1e-12


@settings(deadline=None)
@given(bank_strategy, st.integers(1, 5), arrays(np.float64, (6,), elements=st.floats(-50, 50)),
       st.floats(0.01, 100))
def test_translation_and_scale(data, k, shift, c):
    bank, q = data
    k = min(k, bank.shape[0])
    d = bank.shape[1]
    base = knn_score(SearchIndex(bank), q, k)
    moved = knn_score(SearchIndex(bank + shift[:d]), q + shift[:d], k)
    scaled = knn_score(SearchIndex(bank * c), q * c, k)
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert scaled == pytest.approx(c * base, rel=1e-9, abs=1e-9)


def test_bench_tiny_bank(rng):
    rep = bench_throughput(SearchIndex(rng.normal(size=(10, 4))), k=4, duration=0.05)
    assert rep["stream_fps"] > 0 and rep["batch_fps"] > 0
    assert (rep["bank_size"], rep["d"], rep["k"]) == (10, 4, 4)
    assert "p" in rep


def test_bench_larger_bank_is_slower(rng):
    small = bench_throughput(SearchIndex(rng.normal(size=(1000, 16))), duration=0.3)
    large = bench_throughput(SearchIndex(rng.normal(size=(100_000, 16))), duration=0.3)
    assert large["stream_ms_per_query"] > small["stream_ms_per_query"]
