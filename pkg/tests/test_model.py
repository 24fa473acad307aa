import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import corpus_from_arrays
from lthm.corpus import Corpus, Document, Vocabulary
from lthm.em import e_step
from lthm.errors import NumericalError
from lthm.model import (
    Hyperparams,
    ModelParams,
    SufficientStats,
    TrainConfig,
    init_params,
    log_map_objective,
    model_record,
    normalize,
    params_from_record,
    read_record,
    write_record,
)
from oracles import random_instance


def small_corpus(links=True):
    lengths = [3, 2, 4]
    words = [0, 1, 2, 2, 0, 1, 1, 3, 0]
    lk = [-1, 2, -1, -1, -1, 0, -1, -1, 2] if links else [-1] * 9
    return corpus_from_arrays(lengths, words, lk, 4)


def test_init_disable_links():
    c = small_corpus()
    v = c.view()
    p = init_params(v, Hyperparams.symmetric(2, 4), TrainConfig(2, disable_links=True))
    assert p.lam[-1] == 1.0
    assert (p.lam[:-1] == 0).all()


def test_init_deterministic():
    v = small_corpus().view()
    h = Hyperparams.symmetric(3, 4)
    a = init_params(v, h, TrainConfig(3, seed=5))
    b = init_params(v, h, TrainConfig(3, seed=5))
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.beta, b.beta) and np.array_equal(a.lam, b.lam)
    a.check()


def test_init_no_links_unit_gamma():
    v = small_corpus(links=False).view()
    p = init_params(v, Hyperparams.symmetric(2, 4, gamma_doc=1.0, gamma_null=1.0), TrainConfig(2))
    # counts (0, 0, 0, N) clamp the document entries to 1e-12
    assert p.lam[-1] == pytest.approx(1.0, abs=1e-10)


def test_init_lambda_follows_in_degree():
    v = small_corpus().view()
    h = Hyperparams.symmetric(2, 4, gamma_doc=2.0, gamma_null=3.0)
    p = init_params(v, h, TrainConfig(2))
    # in-degree (1, 0, 2); null count 9 - 3 + 2 = 8
    expected = np.array([2.0, 1.0, 3.0, 8.0]) / 14.0
    assert np.allclose(p.lam, expected, atol=1e-15)


def test_objective_degenerate_simplexes():
    c = Corpus((Document("x", (0, 0, 0)),), Vocabulary(("w",)))
    p = ModelParams(np.ones((1, 1)), np.ones((1, 1)), np.array([0.0, 1.0]))
    h = Hyperparams.symmetric(1, 1, 1.0, 1.0, 1.0, 1.0)
    # every token has probability 1; the only non-zero part is log Gamma(2) from the 2-entry lambda prior
    assert log_map_objective(c.view(), p, h) == pytest.approx(math.lgamma(2.0), abs=1e-14)


def test_objective_with_links_disabled_is_lda():
    c = small_corpus(links=False)
    rng = np.random.default_rng(0)
    theta = rng.dirichlet(np.ones(2), 3)
    beta = rng.dirichlet(np.ones(4), 2)
    lam = np.array([0.0, 0.0, 0.0, 1.0])
    h = Hyperparams.symmetric(2, 4, 1.3, 1.2)
    lda = sum(math.log(theta[d] @ beta[:, w]) for d, w in zip(c.token_doc, c.token_word))
    # Dirichlet log densities of theta and beta rows, spelled out
    for row, a in [(r, 1.3) for r in theta] + [(r, 1.2) for r in beta]:
        k = len(row)
        lda += math.lgamma(k * a) - k * math.lgamma(a) + (a - 1) * np.log(row).sum()
    got = log_map_objective(c.view(), ModelParams(theta, beta, lam), h, use_links=False)
    assert got == pytest.approx(lda, rel=1e-13)


def test_objective_worked_fixture(worked, unit_hyper):
    corpus, params = worked
    # token totals: unlinked w0 -> 0.08 + 0.05, linked w0 -> 0.02, w1 in e -> 1 * 0.8 * 0.8
    # unit Dirichlet priors leave log Gamma(3) from the 3-entry lambda prior
    expected = math.log(0.13) + math.log(0.02) + math.log(0.64) + math.lgamma(3.0)
    assert log_map_objective(corpus.view(), params, unit_hyper) == pytest.approx(expected, rel=1e-13)


def test_normalize_idempotent():
    x = normalize(np.array([[3.0, 1.0, 0.0], [0.2, 0.2, 0.6]]))
    # clamped entries may move by O(1e-12); well inside the simplex tolerance
    assert np.allclose(normalize(x), x, rtol=1e-12, atol=1e-11)
    assert np.abs(x.sum(1) - 1).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(0, 10)))
def test_normalize_on_simplex(x):
    y = normalize(x)
    assert (y >= 0).all()
    assert np.abs(y.sum(1) - 1).max() < 1e-9
    assert np.allclose(normalize(y), y, rtol=1e-12, atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_objective_invariant_to_topic_relabeling(seed):
    rng = np.random.default_rng(seed)
    D, K, W, lengths, docs, words, links, theta, beta, lam = random_instance(rng, 6, 4, 8, 6)
    c = corpus_from_arrays(lengths, words, links, W)
    h = Hyperparams.symmetric(K, W, 1.2, 1.1, 1.1, 5.0)
    perm = rng.permutation(K)
    a = log_map_objective(c.view(), ModelParams(theta, beta, lam), h)
    b = log_map_objective(c.view(), ModelParams(theta[:, perm], beta[perm], lam), h)
    assert a == pytest.approx(b, rel=1e-12)


def test_stats_merge_associative_commutative():
    rng = np.random.default_rng(1)

    def rand():
        s = SufficientStats.zeros(3, 2, 4)
        for name in ("F", "G", "V", "U", "u_inner"):
            setattr(s, name, rng.random(getattr(s, name).shape))
        s.loglik = rng.random()
        s.n_posteriors = int(rng.integers(10))
        return s

    a, b, c = rand(), rand(), rand()
    left, right = (a + b) + c, a + (b + c)
    for name in ("F", "G", "V", "U", "u_inner"):
        assert np.allclose(getattr(left, name), getattr(right, name), rtol=1e-15)
        assert np.array_equal(getattr(a + b, name), getattr(b + a, name))
    assert left.n_posteriors == right.n_posteriors


def test_model_file_reload_bit_exact(tmp_path):
    c = small_corpus()
    v = c.view()
    h = Hyperparams.reference(v, 3)
    cfg = TrainConfig(3, seed=2)
    p = init_params(v, h, cfg)
    buf = io.StringIO()
    write_record(model_record("lthm", p, h, cfg, c.doc_ids, c.vocabulary), buf)
    buf.seek(0)
    p2, h2, cfg2 = params_from_record(read_record(buf))
    assert np.array_equal(p.theta, p2.theta) and np.array_equal(p.beta, p2.beta) and np.array_equal(p.lam, p2.lam)
    a, b = log_map_objective(v, p, h), log_map_objective(v, p2, h2)
    assert abs(a - b) <= 1e-12 * abs(a)
    assert cfg2 == cfg


def test_e_step_objective_matches_direct_evaluation():
    c = small_corpus()
    v = c.view()
    h = Hyperparams.reference(v, 2)
    p = init_params(v, h, TrainConfig(2, seed=4))
    assert e_step(v, p, h).objective == pytest.approx(log_map_objective(v, p, h), rel=1e-13)


def test_params_check_rejects_bad_rows():
    p = ModelParams(np.array([[0.5, 0.6]]), np.array([[1.0]] * 2).reshape(2, 1), np.array([0.5, 0.5]))
    with pytest.raises(NumericalError):
        p.check()


def test_hyperparams_reject_nonpositive():
    with pytest.raises(ValueError):
        Hyperparams.symmetric(2, 2, alpha=0.0)
