"""Sample hypertext corpora from the two-stage generative process.

Stage one writes the text with LDA. Stage two walks every token: it picks a
candidate target ``tau`` from ``lam`` (index D meaning "no candidate"), draws
a link topic from the target's mixture, and creates the link only when that
topic equals the token's own topic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from lthm.corpus import Corpus, Document, Vocabulary


@dataclass
class GenConfig:
    D: int
    K: int
    W: int
    # fixed length, or an inclusive (low, high) range
    n_tokens: int | tuple[int, int] = 100
    alpha: float = 1.1
    eta: float = 1.1
    gamma_doc: float = 1.1
    gamma_null: float = 1000.0
    seed: int = 0
    # pinned parameters bypass the Dirichlet draws
    theta: np.ndarray | None = None
    beta: np.ndarray | None = None
    lam: np.ndarray | None = None

    def __post_init__(self):
        if min(self.D, self.K, self.W) < 1:
            raise ValueError("D, K and W must be at least 1")
        lo = self.n_tokens if isinstance(self.n_tokens, int) else self.n_tokens[0]
        if lo < 1:
            raise ValueError("documents need at least one token")


@dataclass
class SyntheticTruth:
    theta: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    # flat per-token latents in corpus order; -1 marks "no candidate" / "not drawn"
    z_word: np.ndarray
    tau: np.ndarray
    z_link: np.ndarray
    corpus: Corpus

    def replay_links(self) -> set[tuple[int, int, int]]:
        """Re-apply the link rule to the recorded latents: {(doc, pos, target)}."""
        c = self.corpus
        made = (self.tau >= 0) & (self.z_link == self.z_word)
        idx = np.flatnonzero(made)
        docs = c.token_doc[idx]
        return {(int(d), int(t - c.doc_offsets[d]), int(self.tau[t])) for d, t in zip(docs, idx)}

    def to_record(self) -> dict:
        c = self.corpus
        split = lambda a: [a[s:e].tolist() for s, e in zip(c.doc_offsets[:-1], c.doc_offsets[1:])]
        return {
            "doc_ids": c.doc_ids,
            "vocabulary": list(c.vocabulary.words),
            "theta": self.theta.tolist(),
            "beta": self.beta.tolist(),
            "lambda": self.lam.tolist(),
            "z_word": split(self.z_word),
            "tau": split(self.tau),
            "z_link": split(self.z_link),
        }

    def write(self, fp: IO[str]) -> None:
        fp.write(json.dumps(self.to_record()) + "\n")


def _sample_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def sample_corpus(config: GenConfig) -> SyntheticTruth:
    rng = np.random.default_rng(config.seed)
    D, K, W = config.D, config.K, config.W

    # stage one: text
    beta = np.asarray(config.beta, float) if config.beta is not None else rng.dirichlet(np.full(W, config.eta), K)
    if isinstance(config.n_tokens, int):
        lengths = np.full(D, config.n_tokens)
    else:
        lengths = rng.integers(config.n_tokens[0], config.n_tokens[1] + 1, size=D)
    theta = np.asarray(config.theta, float) if config.theta is not None else rng.dirichlet(np.full(K, config.alpha), D)
    token_doc = np.repeat(np.arange(D), lengths)
    z_word = _sample_rows(rng, theta[token_doc])
    words = np.empty(len(token_doc), dtype=np.int64)
    for k in range(K):
        sel = z_word == k
        words[sel] = rng.choice(W, size=int(sel.sum()), p=beta[k])

    # stage two: links
    if config.lam is not None:
        lam = np.asarray(config.lam, float)
    else:
        lam = rng.dirichlet(np.concatenate([np.full(D, config.gamma_doc), [config.gamma_null]]))
    tau = rng.choice(D + 1, size=len(token_doc), p=lam / lam.sum())
    tau[tau == D] = -1
    z_link = np.full(len(token_doc), -1, dtype=np.int64)
    cand = tau >= 0
    z_link[cand] = _sample_rows(rng, theta[tau[cand]])
    linked = cand & (z_link == z_word)

    vocab = Vocabulary(tuple(f"w{j}" for j in range(W)))
    doc_ids = [f"d{i}" for i in range(D)]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    documents = []
    for d in range(D):
        s, e = offsets[d], offsets[d + 1]
        link_pos = np.flatnonzero(linked[s:e])
        documents.append(Document(doc_ids[d], tuple(int(w) for w in words[s:e]),
                                  {int(p): doc_ids[tau[s + p]] for p in link_pos}))
    corpus = Corpus(tuple(documents), vocab)
    return SyntheticTruth(theta, beta, lam, z_word.astype(np.int64), tau.astype(np.int64), z_link, corpus)


def empirical_link_rate(truth: SyntheticTruth) -> tuple[np.ndarray, np.ndarray]:
    """Observed link frequency per (source-token topic, target).

    Returns ``(rates, counts)``: ``rates[z, d]`` is the fraction of topic-z
    tokens that link to d, and ``counts[z]`` the number of topic-z tokens.
    """
    K, D = truth.theta.shape[1], truth.theta.shape[0]
    counts = np.bincount(truth.z_word, minlength=K).astype(float)
    made = (truth.tau >= 0) & (truth.z_link == truth.z_word)
    links = np.zeros((K, D))
    np.add.at(links, (truth.z_word[made], truth.tau[made]), 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(counts[:, None] > 0, links / counts[:, None], 0.0)
    return rates, counts
