import numpy as np
import pytest

from lthm.corpus import Corpus, Document, Vocabulary
from lthm.model import Hyperparams, ModelParams


def corpus_from_arrays(lengths, words, links, W):
    """Build a Corpus from flat token arrays (links: target index or -1)."""
    vocab = Vocabulary(tuple(f"w{j}" for j in range(W)))
    ids = [f"d{i}" for i in range(len(lengths))]
    docs = []
    start = 0
    for i, n in enumerate(lengths):
        toks = tuple(int(w) for w in words[start:start + n])
        link_at = {p: ids[links[start + p]] for p in range(n) if links[start + p] >= 0}
        docs.append(Document(ids[i], toks, link_at))
        start += n
    return Corpus(tuple(docs), vocab)


@pytest.fixture
def worked():
    """Two documents, two topics, two words.

    Document 0 has tokens (w0, w0), the second linking to document 1.
    Document 1 has the single unlinked token w1. theta_0 = (0.5, 0.5),
    theta_1 = (1, 0), beta(w0) = (0.2, 0.1), lambda = (0, 0.2, 0.8).
    """
    vocab = Vocabulary(("w0", "w1"))
    corpus = Corpus((Document("d", (0, 0), {1: "e"}), Document("e", (1,), {})), vocab)
    params = ModelParams(
        theta=np.array([[0.5, 0.5], [1.0, 0.0]]),
        beta=np.array([[0.2, 0.8], [0.1, 0.9]]),
        lam=np.array([0.0, 0.2, 0.8]),
    )
    return corpus, params


@pytest.fixture
def unit_hyper():
    return Hyperparams.symmetric(2, 2, 1.0, 1.0, 1.0, 1.0)


def pytest_terminal_summary(terminalreporter):
    reports = [r for r in terminalreporter.getreports("passed") + terminalreporter.getreports("failed")
               if "test_acceptance" in r.nodeid and r.when == "call"]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(reports, key=lambda r: r.nodeid):
        props = dict(r.user_properties)
        status = "PASS" if r.passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {props.get('criterion', r.nodeid)}: {props.get('detail', '')}")
