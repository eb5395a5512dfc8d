import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from feddag.errors import DimensionMismatch, EmptyDataset, NonFinite, ShapeMismatch
from feddag.types import (
    AdmmState,
    BinaryGraph,
    PenaltyConfig,
    SiteDataset,
    WeightedAdjacency,
    seeded_rng,
    split_rng,
    validate_problem,
)


def test_validate_problem_two_sites():
    rng = np.random.default_rng(0)
    desc = validate_problem([SiteDataset("a", rng.normal(size=(20, 5))), SiteDataset("b", rng.normal(size=(20, 5)))])
    assert (desc.K, desc.d, list(desc.n)) == (2, 5, [20, 20])


def test_validate_problem_dimension_mismatch_names_site():
    with pytest.raises(DimensionMismatch) as info:
        validate_problem([SiteDataset("a", np.zeros((3, 5))), SiteDataset("b", np.zeros((3, 6)))])
    assert info.value.site_id == "b"


def test_validate_problem_empty_site():
    with pytest.raises(EmptyDataset):
        validate_problem([SiteDataset("a", np.zeros((0, 5)))])


def test_validate_problem_rejects_empty_list_and_duplicate_ids():
    with pytest.raises(ValueError):
        validate_problem([])
    with pytest.raises(ValueError):
        validate_problem([SiteDataset("a", np.ones((2, 2))), SiteDataset("a", np.ones((2, 2)))])


def test_gram_matches_naive_loop():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 4))
    ds = SiteDataset("s", X)
    naive = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            naive[i, j] = sum(X[r, i] * X[r, j] for r in range(10)) / 10
    np.testing.assert_allclose(ds.gram, naive, rtol=1e-12)
    np.testing.assert_array_equal(ds.gram, ds.gram.T)
    assert np.linalg.eigvalsh(ds.gram).min() >= -1e-10 * np.trace(ds.gram)


def test_weighted_adjacency_diagonal_modes():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    W = WeightedAdjacency(M)
    assert np.all(np.diag(W.values) == 0)
    assert W.values[0, 1] == 2.0 and W.values[1, 0] == 3.0
    with pytest.raises(ValueError):
        WeightedAdjacency(M, diagonal="reject")
    with pytest.raises(NonFinite):
        WeightedAdjacency([[0.0, np.nan], [0.0, 0.0]])
    with pytest.raises(ShapeMismatch):
        WeightedAdjacency(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        W.values[0, 1] = 5.0  # read-only


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-1e6, 1e6)))
def test_weighted_adjacency_off_diagonal_round_trip(M):
    W = WeightedAdjacency(M)
    off = ~np.eye(4, dtype=bool)
    assert np.array_equal(W.values[off], M[off])
    assert np.all(np.diag(W.values) == 0.0)


def test_binary_graph_rejects_self_loops():
    with pytest.raises(ValueError):
        BinaryGraph(np.eye(3))
    G = BinaryGraph([[0, 1], [0, 0]])
    assert G.n_edges == 1 and G.edges() == [(0, 1)]
    assert G == BinaryGraph(np.array([[0, 2], [0, 0]]))


def test_penalty_config_validation():
    PenaltyConfig()
    for bad in (dict(lambda1=-1), dict(admm_tol=0), dict(edge_threshold=0), dict(admm_max_iter=0)):
        with pytest.raises(ValueError):
            PenaltyConfig(**bad)


def test_admm_state_initial():
    st_ = AdmmState.initial(3, 4, 1.0, 2.0, 1.1, 1.2)
    assert st_.K == 3 and all(np.all(z == 0) for z in st_.Z)
    assert np.all(st_.alpha == 0) and st_.rho2 == 2.0


def test_seeded_rng_contract():
    a = seeded_rng(42).random(1000)
    b = seeded_rng(42).random(1000)
    assert np.array_equal(a, b)
    assert not np.array_equal(seeded_rng(1).random(10), seeded_rng(2).random(10))
    assert abs(seeded_rng(7).standard_normal(100_000).mean()) < 0.02
    picks = seeded_rng(3).choice(50, size=50, replace=False)
    assert sorted(picks) == list(range(50))


def test_split_rng_streams_are_independent_and_reproducible():
    s1 = [g.random(5) for g in split_rng(9, 3)]
    s2 = [g.random(5) for g in split_rng(9, 3)]
    assert all(np.array_equal(x, y) for x, y in zip(s1, s2))
    assert not np.array_equal(s1[0], s1[1])
