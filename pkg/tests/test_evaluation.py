import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import hypergeom

from lthm.errors import CorpusError
from lthm.evaluation import EvalReport, MethodCurves, emit_curves, evaluate, load_curves
from lthm.ranking import rank_scores


def test_single_true_link():
    r = evaluate({0: [0, 1, 2]}, {0: {1}}, n_max=3)["method"]
    assert r.hit.tolist() == [0.0, 1.0, 1.0]
    assert r.precision[1] == 0.5
    assert r.recall[1] == 1.0


def test_perfect_ranking():
    r = evaluate({0: [3, 1, 4, 0, 2]}, {0: {1, 3, 4}}, n_max=5)["method"]
    assert r.precision[2] == 1.0 and r.recall[2] == 1.0


def test_empty_truth_excluded():
    r = evaluate({0: [0, 1], 1: [1, 0]}, {0: {0}, 1: set()}, n_max=2)["method"]
    assert r.n_docs == 1
    assert r.hit.tolist() == [1.0, 1.0]


def test_recall_reaches_one_at_d():
    rng = np.random.default_rng(0)
    D = 12
    preds = {d: rng.permutation(D) for d in range(6)}
    truth = {d: set(rng.choice(D, size=int(rng.integers(1, 5)), replace=False).tolist()) for d in range(6)}
    assert evaluate(preds, truth, n_max=D)["method"].recall[-1] == 1.0


def test_accepts_ranked_predictions():
    p = rank_scores(np.array([0.1, 0.9, 0.5]), source=0)
    assert evaluate({0: p}, {0: {2}}, n_max=2)["method"].hit.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("preds, truth, message", [
    ({}, {0: {1}}, "no ranking"),
    ({0: [0, 1]}, {0: {1}}, "shorter"),
    ({0: [0, 1, 2]}, {0: {7}}, "unknown document"),
])
def test_errors(preds, truth, message):
    with pytest.raises(CorpusError, match=message):
        evaluate(preds, truth, n_max=3, D=3)


def test_hypergeometric_oracle():
    D, n_docs, trials, n_max = 105, 100, 200, 20
    rng = np.random.default_rng(0)
    N = np.arange(1, n_max + 1)
    hits = []
    sizes = []
    for _ in range(trials):
        m = np.maximum(rng.poisson(799 / 105, n_docs), 1)
        truth = {d: set(rng.choice(D, size=int(m[d]), replace=False).tolist()) for d in range(n_docs)}
        preds = {d: rng.permutation(D) for d in range(n_docs)}
        hits.append(evaluate(preds, truth, n_max)["method"].hit)
        sizes.append(m)
    sizes = np.concatenate(sizes)
    # P(at least one of m true links in a random top-N) = 1 - P(hypergeometric draw = 0)
    p = 1 - hypergeom.pmf(0, D, sizes[:, None], N[None, :])
    expected = p.mean(0)
    sigma = np.sqrt((p * (1 - p)).sum(0)) / len(sizes)
    observed = np.mean(hits, axis=0)
    assert (np.abs(observed - expected) <= 3 * sigma).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 15), st.integers(1, 8))
def test_report_invariants(seed, D, n_docs):
    rng = np.random.default_rng(seed)
    preds = {d: rng.permutation(D) for d in range(n_docs)}
    truth = {d: set(rng.choice(D, size=int(rng.integers(0, D)), replace=False).tolist()) for d in range(n_docs)}
    r = evaluate(preds, truth, n_max=D)["method"]
    assert (np.diff(r.hit) >= 0).all() and (np.diff(r.recall) >= -1e-15).all()
    for arr in (r.hit, r.precision, r.recall):
        assert ((arr >= 0) & (arr <= 1)).all()


def test_emit_rows():
    report = evaluate({0: [0, 1, 2]}, {0: {1}}, n_max=2, method="lthm")
    buf = io.StringIO()
    emit_curves(report, buf)
    lines = buf.getvalue().splitlines()
    assert lines == ["method,N,hit,precision,recall", "lthm,1,0.0,0.0,0.0", "lthm,2,1.0,0.5,1.0"]


def test_emit_empty():
    buf = io.StringIO()
    emit_curves(EvalReport(5), buf)
    assert buf.getvalue() == "method,N,hit,precision,recall\n"


def test_reemission_byte_identical():
    rng = np.random.default_rng(3)
    a = evaluate({d: rng.permutation(9) for d in range(4)}, {d: {d, 8} for d in range(4)}, 9, "a")
    b = evaluate({d: rng.permutation(9) for d in range(4)}, {d: {1} for d in range(4)}, 9, "b")
    buf = io.StringIO()
    emit_curves(a.merge(b), buf)
    again = io.StringIO()
    emit_curves(load_curves(io.StringIO(buf.getvalue())), again)
    assert again.getvalue() == buf.getvalue()


def test_check_catches_decreasing_hit():
    bad = EvalReport(2, {"x": MethodCurves(np.array([1.0, 0.5]), np.zeros(2), np.zeros(2))})
    with pytest.raises(AssertionError):
        bad.check()
