import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcca import core
from fedcca.baselines import fedavg_aggregate
from fedcca.core import ClientState, FedccaHyper, SimilarityMatrix
from fedcca.data import ClientDataset
from fedcca.errors import InvalidInputError
from fedcca.model import Batch, ModelSpec, cross_entropy_loss, gradient, init_params, sgd_step

E_MINUS_1 = 0.36787944117144233
E_MINUS_10 = 4.5399929762484854e-05


def brute_force_selection(scores, n_max):
    """Filter by threshold, sort, truncate; written without sharing code with the package."""
    n = len(scores)
    out = []
    for i in range(n):
        crit = 0.0
        for j in range(n):
            if j != i:
                crit += scores[i][j]
        crit /= 2 * n
        passing = [(scores[i][j], j) for j in range(n) if j != i and scores[i][j] <= crit]
        passing.sort()
        out.append([j for _, j in passing[:n_max]])
    return out


def random_matrix(rng, n):
    raw = rng.uniform(0, 1, size=(n, n))
    m = np.triu(raw, 1)
    m = m + m.T
    # sprinkle exact ties and zeros to exercise tie-breaking and the boundary
    if n >= 3 and rng.random() < 0.3:
        m[0, 1] = m[1, 0] = m[0, 2] = m[2, 0] = 0.0
    return SimilarityMatrix(m * 0.999)


def make_client(rng, n=40, dim=2, classes=2, participating=True, spec=None):
    spec = spec or ModelSpec(dim, (), classes)
    means = np.array([[3.0, 0.0], [-3.0, 0.0]])
    labels = np.arange(n) % classes
    x = means[labels] + 0.5 * rng.normal(size=(n, dim))
    batch = Batch(x, labels)
    ds = ClientDataset(0, batch, batch, 0, np.bincount(labels), np.arange(n), np.arange(n))
    p0 = init_params(spec, rng)
    return ClientState(0, p0.copy(), p0.copy(), participating, ds), spec


def test_euclidean_distance():
    assert core.euclidean_distance(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert core.euclidean_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 5.0
    r = np.random.default_rng(0)
    p, q = r.normal(size=9), r.normal(size=9)
    assert core.euclidean_distance(p, q) == core.euclidean_distance(q, p)
    with pytest.raises(InvalidInputError):
        core.euclidean_distance(np.zeros(2), np.zeros(3))


def test_attention_score_values():
    assert core.attention_score(0.0, 3.0) == 0.0
    assert core.attention_score(2.5, 2.5) == pytest.approx(1 - E_MINUS_1, abs=1e-15)
    assert core.attention_score(10.0, 1.0) == pytest.approx(1 - E_MINUS_10, abs=1e-15)
    with pytest.raises(InvalidInputError):
        core.attention_score(-0.1, 1.0)
    with pytest.raises(InvalidInputError):
        core.attention_score(1.0, 0.0)


@given(a=st.floats(0, 1e3), b=st.floats(0, 1e3), sigma=st.floats(1e-3, 1e3))
def test_attention_monotone_and_bounded(a, b, sigma):
    lo, hi = sorted((a, b))
    s_lo, s_hi = core.attention_score(lo, sigma), core.attention_score(hi, sigma)
    assert 0 <= s_lo <= s_hi < 1 or (s_hi == 1.0 and hi / sigma > 36)
    if lo < hi and hi / sigma < 30 and (hi - lo) / sigma > 1e-9:
        assert s_lo < s_hi


def test_pairwise_dissimilarity():
    same = [np.ones(4)] * 3
    assert np.array_equal(core.pairwise_dissimilarity(same, sigma=1.0).scores, np.zeros((3, 3)))
    m = core.pairwise_dissimilarity([np.zeros(2), np.array([3.0, 4.0])], sigma=5.0)
    assert m.scores[0, 1] == pytest.approx(1 - E_MINUS_1, abs=1e-15)
    r = np.random.default_rng(1)
    m = core.pairwise_dissimilarity([r.normal(size=5) for _ in range(6)])
    assert np.array_equal(m.scores, m.scores.T)
    assert np.all(np.diag(m.scores) == 0)
    assert np.all((m.scores >= 0) & (m.scores < 1))
    with pytest.raises(InvalidInputError):
        core.pairwise_dissimilarity([np.zeros(2)])


def test_median_sigma_heuristic():
    vecs = [np.array([0.0]), np.array([1.0]), np.array([3.0])]
    # distances 1, 3, 2 -> median 2
    assert core.pairwise_dissimilarity(vecs).sigma == 2.0
    assert core.pairwise_dissimilarity([np.zeros(1)] * 3).sigma == 1.0


def test_selection_criteria():
    assert core.selection_criteria(SimilarityMatrix(np.zeros((4, 4))), 2) == 0.0
    m = np.array([[0, 0.6, 0.6], [0.6, 0, 0.1], [0.6, 0.1, 0]])
    assert core.selection_criteria(SimilarityMatrix(m), 0) == pytest.approx(0.2)
    b = 0.37
    assert core.selection_criteria(SimilarityMatrix(np.array([[0, b], [b, 0]])), 1) == pytest.approx(b / 4)


def test_selection_identical_clients_select_everyone_capped():
    report = core.client_centric_selection(SimilarityMatrix(np.zeros((5, 5))), n_max=3)
    assert report.selected[0] == [1, 2, 3]
    assert report.selected[4] == [0, 1, 2]
    # the id-ordered cap means nobody picks client 4
    assert report.next_participation == [True, True, True, True, False]
    full = core.client_centric_selection(SimilarityMatrix(np.zeros((5, 5))), n_max=10)
    assert full.selected[2] == [0, 1, 3, 4]


def test_selection_hand_example():
    m = np.array([[0.0, 0.0, 0.99], [0.0, 0.0, 0.5], [0.99, 0.5, 0.0]])
    report = core.client_centric_selection(SimilarityMatrix(m), n_max=5)
    assert report.criteria[0] == pytest.approx(0.165)
    assert report.selected[0] == [1]


@pytest.mark.parametrize("n", range(2, 9))
def test_equal_scores_select_nobody(n):
    b = 0.42
    m = SimilarityMatrix(b * (np.ones((n, n)) - np.eye(n)))
    report = core.client_centric_selection(m, n_max=n)
    assert all(s == [] for s in report.selected)
    assert not any(report.next_participation)
    assert all(c == pytest.approx((n - 1) * b / (2 * n)) for c in report.criteria)


def test_selection_matches_brute_force_oracle():
    r = np.random.default_rng(2024)
    for _ in range(300):
        n = int(r.integers(3, 7))
        n_max = int(r.integers(1, 6))
        m = random_matrix(r, n)
        report = core.client_centric_selection(m, n_max)
        assert report.selected == brute_force_selection(m.scores.tolist(), n_max)
        for i, s in enumerate(report.selected):
            assert len(s) <= n_max and i not in s
            assert all(m.scores[i, j] <= report.criteria[i] for j in s)


def test_selection_is_asymmetric():
    # client 2 sits far from 0 and 1, inflating client 0's threshold only
    m = np.array([
        [0.0, 0.1, 0.9],
        [0.1, 0.0, 0.05],
        [0.9, 0.05, 0.0],
    ])
    report = core.client_centric_selection(SimilarityMatrix(m), n_max=2)
    assert 1 in report.selected[0]
    assert 0 not in report.selected[1]


def test_next_participation_rule():
    m = np.array([[0.0, 0.0, 0.9], [0.0, 0.0, 0.9], [0.9, 0.9, 0.0]])
    report = core.client_centric_selection(SimilarityMatrix(m), n_max=2)
    assert report.selected == [[1], [0], []]
    assert report.next_participation == [True, True, False]


def test_select_all_capped():
    m = np.array([[0.0, 0.5, 0.2], [0.5, 0.0, 0.9], [0.2, 0.9, 0.0]])
    report = core.select_all_capped(SimilarityMatrix(m), n_max=1)
    assert report.selected == [[2], [0], [0]]


def test_aggregation_weights_cases():
    m = SimilarityMatrix(np.array([[0.0, 0.5, 0.0], [0.5, 0.0, 0.2], [0.0, 0.2, 0.0]]))
    assert core.aggregation_weights(m, 0, [], [True] * 3) == {0: 1.0}
    assert core.aggregation_weights(m, 0, [2], [True] * 3) == {0: 0.5, 2: 0.5}
    w = core.aggregation_weights(m, 0, [1], [True] * 3)
    assert w[0] == pytest.approx(2 / 3, abs=1e-15) and w[1] == pytest.approx(1 / 3, abs=1e-15)
    # an inactive source is not discounted
    assert core.aggregation_weights(m, 0, [1], [True, False, True]) == {0: 0.5, 1: 0.5}
    with pytest.raises(InvalidInputError):
        core.aggregation_weights(m, 0, [0], [True] * 3)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 7), n_max=st.integers(1, 6))
def test_aggregation_weights_sum_to_one(seed, n, n_max):
    m = random_matrix(np.random.default_rng(seed), n)
    report = core.client_centric_selection(m, n_max)
    for i in range(n):
        w = core.aggregation_weights(m, i, report.selected[i], report.next_participation)
        assert abs(math.fsum(w.values()) - 1.0) <= 1e-12
        assert w[i] > 0 and all(v > 0 for v in w.values())


def test_uniform_weights():
    m = SimilarityMatrix(np.zeros((3, 3)))
    assert core.uniform_weights(m, 1, [2], [True] * 3) == {1: 0.5, 2: 0.5}


def test_multi_source_aggregate_cases():
    a, b = np.array([0.0, 2.0]), np.array([4.0, 0.0])
    np.testing.assert_array_equal(core.multi_source_aggregate({0: a, 1: b}, {0: 1.0}), a)
    np.testing.assert_array_equal(core.multi_source_aggregate({0: a, 1: a}, {0: 0.3, 1: 0.7}), a)
    np.testing.assert_allclose(core.multi_source_aggregate({0: a, 1: b}, {0: 0.25, 1: 0.75}), [3.0, 0.5])
    with pytest.raises(InvalidInputError):
        core.multi_source_aggregate({0: a}, {0: 0.5, 1: 0.5})
    with pytest.raises(InvalidInputError):
        core.multi_source_aggregate({0: a, 1: b}, {0: 0.5, 1: 0.6})


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_multi_source_aggregate_permutation_invariant(seed, n):
    r = np.random.default_rng(seed)
    thetas = {k: r.normal(size=5) for k in range(n)}
    raw = r.uniform(0.1, 1.0, size=n)
    weights = {k: float(v) for k, v in zip(range(n), raw / raw.sum())}
    order = list(r.permutation(n))
    shuffled_t = {int(k): thetas[int(k)] for k in order}
    shuffled_w = {int(k): weights[int(k)] for k in reversed(order)}
    assert np.array_equal(core.multi_source_aggregate(thetas, weights), core.multi_source_aggregate(shuffled_t, shuffled_w))


def test_identical_fingerprints_reduce_to_fedavg():
    r = np.random.default_rng(5)
    n = 5
    thetas = {k: r.normal(size=8) for k in range(n)}
    m = core.pairwise_dissimilarity([np.ones(3)] * n)
    report = core.client_centric_selection(m, n_max=n - 1)
    reference = fedavg_aggregate(thetas, {k: 1 for k in range(n)})
    for i in range(n):
        w = core.aggregation_weights(m, i, report.selected[i], report.next_participation)
        np.testing.assert_allclose(core.multi_source_aggregate(thetas, w), reference, atol=1e-12)


def test_local_training_gate():
    r = np.random.default_rng(0)
    client, spec = make_client(r, participating=False)
    hyper = FedccaHyper(local_epochs=2, lr=0.1, batch_size=8)
    out = core.local_training(client, spec, hyper, np.random.default_rng(1))
    assert np.array_equal(out, client.theta)
    phi = core.client_specific_training(client, spec, hyper, np.random.default_rng(1))
    assert not np.array_equal(phi, client.phi)


def test_local_training_full_batch_is_one_step():
    r = np.random.default_rng(1)
    client, spec = make_client(r)
    hyper = FedccaHyper(local_epochs=1, lr=0.3, batch_size=1000)
    out = core.local_training(client, spec, hyper, np.random.default_rng(2))
    expected = sgd_step(client.theta, gradient(client.theta, spec, client.dataset.train), 0.3)
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_theta_and_phi_follow_same_procedure():
    r = np.random.default_rng(2)
    client, spec = make_client(r)
    hyper = FedccaHyper(local_epochs=3, lr=0.05, batch_size=7)
    th = core.local_training(client, spec, hyper, np.random.default_rng(9))
    ph = core.client_specific_training(client, spec, hyper, np.random.default_rng(9))
    assert np.array_equal(th, ph)


@pytest.mark.parametrize("which", ["theta", "phi"])
def test_training_decreases_loss(which):
    hyper = FedccaHyper(local_epochs=5, lr=0.01, batch_size=32)
    passed = 0
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        client, spec = make_client(r, n=64)
        before = cross_entropy_loss(client.theta, spec, client.dataset.train)
        if which == "theta":
            out = core.local_training(client, spec, hyper, np.random.default_rng(seed))
        else:
            out = core.client_specific_training(client, spec, hyper, np.random.default_rng(seed))
        passed += cross_entropy_loss(out, spec, client.dataset.train) <= before
    assert passed >= 9


def test_hyper_validation():
    with pytest.raises(InvalidInputError):
        FedccaHyper(sigma=0.0)
    with pytest.raises(InvalidInputError):
        FedccaHyper(n_max=0)
    with pytest.raises(InvalidInputError):
        FedccaHyper(lr=-1.0)
