import io
import json

import numpy as np
import pytest

from lthm.generator import GenConfig, empirical_link_rate, sample_corpus


def test_zero_links_when_lambda_is_null():
    # gamma_doc near zero makes the document entries of lambda vanish
    truth = sample_corpus(GenConfig(D=20, K=3, W=10, n_tokens=50, gamma_doc=1e-3, gamma_null=1e6))
    assert truth.corpus.total_links == 0
    pinned = sample_corpus(GenConfig(D=5, K=2, W=4, lam=np.r_[np.zeros(5), 1.0]))
    assert pinned.corpus.total_links == 0
    assert (pinned.tau == -1).all()
    rates, _ = empirical_link_rate(pinned)
    assert not rates.any()


def test_single_topic_every_candidate_links():
    truth = sample_corpus(GenConfig(D=10, K=1, W=5, n_tokens=40, gamma_null=5.0, seed=3))
    assert truth.corpus.total_links == int((truth.tau >= 0).sum()) > 0


def pinned_pair(n=10_000, seed=0):
    return sample_corpus(GenConfig(D=2, K=2, W=3, n_tokens=n, seed=seed,
                                   theta=np.eye(2), lam=np.array([0.5, 0.0, 0.5])))


def test_pinned_pair_binomial():
    truth = pinned_pair()
    c = truth.corpus
    n = c.documents[0].N
    # doc 1 (all topic 2) never links even when it considers doc 0
    assert c.documents[1].link_at == {}
    assert (truth.tau[c.token_doc == 1] == 0).any()
    k = len(c.documents[0].link_at)
    sigma = np.sqrt(0.25 / n)
    assert abs(k / n - 0.5) <= 3 * sigma
    rates, counts = empirical_link_rate(truth)
    assert counts.tolist() == [n, n]
    assert abs(rates[0, 0] - 0.5) <= 3 * sigma
    assert rates[1].tolist() == [0.0, 0.0]


def test_single_doc_rate():
    p = 0.3
    truth = sample_corpus(GenConfig(D=1, K=1, W=2, n_tokens=5000, lam=np.array([p, 1 - p]), seed=9))
    rates, counts = empirical_link_rate(truth)
    assert abs(rates[0, 0] - p) <= 3 * np.sqrt(p * (1 - p) / counts[0])


def test_replay_reproduces_links():
    for seed in range(5):
        truth = sample_corpus(GenConfig(D=15, K=4, W=20, n_tokens=(5, 30), gamma_null=30.0, seed=seed))
        c = truth.corpus
        observed = {(d, p, c.doc_index[t]) for d, doc in enumerate(c.documents) for p, t in doc.link_at.items()}
        assert truth.replay_links() == observed


def test_same_seed_same_truth():
    cfg = GenConfig(D=10, K=3, W=12, n_tokens=(3, 9), gamma_null=20.0, seed=11)
    a, b = sample_corpus(cfg), sample_corpus(cfg)
    assert a.corpus == b.corpus
    for name in ("theta", "beta", "lam", "z_word", "tau", "z_link"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert sample_corpus(GenConfig(D=10, K=3, W=12, n_tokens=(3, 9), gamma_null=20.0, seed=12)).corpus != a.corpus


def test_law_of_link_rates():
    truth = sample_corpus(GenConfig(D=4, K=2, W=5, n_tokens=20_000, gamma_doc=5.0, gamma_null=10.0, seed=1))
    rates, counts = empirical_link_rate(truth)
    expected = truth.lam[:-1][None, :] * truth.theta.T
    checked = 0
    for z in range(2):
        if counts[z] < 500:
            continue
        for d in range(4):
            sigma = np.sqrt(expected[z, d] * (1 - expected[z, d]) / counts[z])
            assert abs(rates[z, d] - expected[z, d]) <= 4 * sigma + 1e-12
            checked += 1
    assert checked > 0


def test_latents_consistent():
    truth = sample_corpus(GenConfig(D=8, K=3, W=6, n_tokens=20, gamma_null=10.0))
    no_cand = truth.tau < 0
    assert (truth.z_link[no_cand] == -1).all()
    assert (truth.z_link[~no_cand] >= 0).all()
    assert np.array_equal(truth.corpus.token_word.size, truth.z_word.size)


def test_truth_record():
    truth = sample_corpus(GenConfig(D=3, K=2, W=4, n_tokens=(1, 4)))
    buf = io.StringIO()
    truth.write(buf)
    rec = json.loads(buf.getvalue())
    assert rec["doc_ids"] == ["d0", "d1", "d2"]
    assert [len(t) for t in rec["tau"]] == truth.corpus.doc_lengths.tolist()
    assert np.allclose(rec["lambda"], truth.lam)


@pytest.mark.parametrize("kw", [dict(D=0, K=1, W=1), dict(D=1, K=0, W=1), dict(D=1, K=1, W=1, n_tokens=0)])
def test_config_rejects_nonpositive(kw):
    with pytest.raises(ValueError):
        GenConfig(**kw)
