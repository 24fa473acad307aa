"""Comparison link predictors: global in-degree ranking and link-LDA.

Link-LDA treats each visible outgoing link of a document as a "citation"
token drawn from a per-topic distribution over all D documents (``omega``),
sharing the document's topic mixture with its words. Plain LDA is
:func:`lthm.em.train` with ``disable_links``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lthm.corpus import CorpusView, in_degree
from lthm.em import TrainTrace, _normalize_log_rows, run_em
from lthm.errors import NumericalError
from lthm.model import Hyperparams, ModelParams, TrainConfig, dirichlet_logpdf, init_params, normalize
from lthm.ranking import RankedPrediction, rank_scores


def freq_rank(view: CorpusView) -> RankedPrediction:
    """One ranking for every source: visible in-degree, descending."""
    return rank_scores(in_degree(view).astype(float))


@dataclass
class LinkLdaParams:
    theta: np.ndarray  # D x K
    beta: np.ndarray  # K x W
    omega: np.ndarray  # K x D, per-topic citation distribution

    @property
    def D(self):
        return self.theta.shape[0]

    @property
    def K(self):
        return self.theta.shape[1]

    def check(self, tol: float = 1e-9) -> None:
        D, K = self.theta.shape
        if self.beta.shape[0] != K or self.omega.shape != (K, D):
            raise NumericalError("link-LDA parameter shapes disagree")
        for name, arr in (("theta", self.theta), ("beta", self.beta), ("omega", self.omega)):
            if (arr < 0).any() or np.abs(arr.sum(axis=1) - 1.0).max() > tol:
                raise NumericalError(f"{name} rows are not on the simplex")

    def copy(self) -> "LinkLdaParams":
        return LinkLdaParams(self.theta.copy(), self.beta.copy(), self.omega.copy())


def citations(view: CorpusView) -> tuple[np.ndarray, np.ndarray]:
    """(source, target) doc-index arrays of visible links; anchor positions are discarded."""
    links = view.token_link
    linked = links >= 0
    return view.corpus.token_doc[linked], links[linked]


def link_lda_init(view: CorpusView, hyper: Hyperparams, config: TrainConfig) -> LinkLdaParams:
    """theta and beta as :func:`init_params` draws them (so plain LDA can share the start)."""
    base = init_params(view, hyper, TrainConfig(config.K, seed=config.seed, disable_links=True))
    rng = np.random.default_rng([config.seed, 1])
    omega = normalize(rng.dirichlet(np.full(view.corpus.D, hyper.gamma_doc), size=config.K))
    return LinkLdaParams(base.theta, base.beta, omega)


def link_lda_e_step(view: CorpusView, params: LinkLdaParams, hyper: Hyperparams,
                    citation_weight: float = 1.0):
    """Return ``(word_doc, word_topic, cit_doc, cit_target, objective)`` statistics.

    ``word_doc`` D x K, ``word_topic`` K x W, ``cit_doc`` D x K and
    ``cit_target`` K x D hold expected topic counts.
    """
    c = view.corpus
    D, K = params.theta.shape
    W = params.beta.shape[1]
    with np.errstate(divide="ignore"):
        log_theta = np.log(params.theta)
        Lw = log_theta[c.token_doc] + np.log(params.beta[:, c.token_word].T)
    Pw, llw = _normalize_log_rows(Lw) if len(Lw) else (np.zeros((0, K)), np.zeros(0))
    word_doc = np.zeros((D, K))
    word_topic = np.zeros((K, W))
    for k in range(K):
        word_doc[:, k] = np.bincount(c.token_doc, weights=Pw[:, k], minlength=D)
        word_topic[k] = np.bincount(c.token_word, weights=Pw[:, k], minlength=W)

    src, tgt = citations(view)
    cit_doc = np.zeros((D, K))
    cit_target = np.zeros((K, D))
    llc = np.zeros(0)
    if len(src):
        with np.errstate(divide="ignore"):
            Lc = log_theta[src] + np.log(params.omega[:, tgt].T)
        Pc, llc = _normalize_log_rows(Lc)
        for k in range(K):
            cit_doc[:, k] = np.bincount(src, weights=Pc[:, k], minlength=D)
            cit_target[k] = np.bincount(tgt, weights=Pc[:, k], minlength=D)

    objective = (float(llw.sum()) + citation_weight * float(llc.sum())
                 + dirichlet_logpdf(params.theta, hyper.alpha) + dirichlet_logpdf(params.beta, hyper.eta)
                 + dirichlet_logpdf(params.omega, np.full(D, hyper.gamma_doc)))
    if not np.isfinite(objective):
        raise NumericalError("link-LDA objective is not finite")
    return word_doc, word_topic, cit_doc, cit_target, objective


def link_lda_m_step(word_doc, word_topic, cit_doc, cit_target, hyper: Hyperparams,
                    citation_weight: float = 1.0) -> LinkLdaParams:
    theta = normalize(word_doc + citation_weight * cit_doc + hyper.alpha[None, :] - 1.0)
    beta = normalize(word_topic + hyper.eta[None, :] - 1.0)
    omega = normalize(cit_target + hyper.gamma_doc - 1.0)
    return LinkLdaParams(theta, beta, omega)


def link_lda_train(view: CorpusView, hyper: Hyperparams, config: TrainConfig,
                   init: LinkLdaParams | None = None,
                   citation_weight: float = 1.0) -> tuple[LinkLdaParams, TrainTrace]:
    params = init.copy() if init is not None else link_lda_init(view, hyper, config)

    def step(p):
        *stats, obj = link_lda_e_step(view, p, hyper, citation_weight)
        return link_lda_m_step(*stats, hyper, citation_weight), obj, {}

    monotone = bool((hyper.alpha >= 1).all() and (hyper.eta >= 1).all() and hyper.gamma_doc >= 1)
    return run_em(view, params, hyper, config, step, monotone)


def link_lda_score(theta_source: np.ndarray, params: LinkLdaParams, source: int | None = None) -> RankedPrediction:
    return rank_scores(theta_source @ params.omega, source)


def link_lda_objective(view: CorpusView, params: LinkLdaParams, hyper: Hyperparams,
                       citation_weight: float = 1.0) -> float:
    return link_lda_e_step(view, params, hyper, citation_weight)[-1]


def as_lda_params(params: LinkLdaParams) -> ModelParams:
    """theta/beta with an all-null lambda, for fold-in and inspection helpers."""
    lam = np.zeros(params.D + 1)
    lam[-1] = 1.0
    return ModelParams(params.theta, params.beta, lam)


__all__ = [
    "freq_rank",
    "LinkLdaParams",
    "citations",
    "link_lda_init",
    "link_lda_e_step",
    "link_lda_m_step",
    "link_lda_train",
    "link_lda_score",
    "link_lda_objective",
    "as_lda_params",
]
