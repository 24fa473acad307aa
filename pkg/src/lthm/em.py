"""EM for the latent topic hypertext model.

Every token carries an observation of whether it anchors a link. A token in
document d with topic z links to document t with probability
``lam[t] * theta[t, z]`` and links nowhere with probability ``1 - m(z)``, where
``m(z) = sum_t lam[t] * theta[t, z]``. Token posteriors are exact given the
parameters; the quadratic number of (token, target) link latents is never
materialized. Their aggregate U factors into ``lam[d] * theta[d, z] * S(z)``
with S accumulated in one pass over unlinked tokens.
"""

from __future__ import annotations

import functools
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from lthm.corpus import CorpusView
from lthm.errors import NumericalError
from lthm.model import (
    Hyperparams,
    ModelParams,
    SufficientStats,
    TrainConfig,
    doc_link_mass,
    init_params,
    log_prior,
    normalize,
    token_log_terms,
)
from lthm.ranking import RankedPrediction, rank_scores

log = logging.getLogger(__name__)

__all__ = [
    "doc_link_mass",
    "token_posterior",
    "expected_u_naive",
    "expected_u_fast",
    "e_step",
    "m_step",
    "train",
    "fold_in",
    "score_links",
    "EStepResult",
    "TrainTrace",
]

MONOTONE_SLACK = 1e-8


def _normalize_log_rows(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize exp(L); also return each row's log normalizer."""
    mx = L.max(axis=1)
    if not np.isfinite(mx).all():
        raise NumericalError("token has zero likelihood")
    P = np.exp(L - mx[:, None])
    s = P.sum(axis=1)
    P /= s[:, None]
    return P, mx + np.log(s)


def _check_mass(params: ModelParams, mass: np.ndarray) -> None:
    # 1 - m(z) >= lam_null follows from the simplex constraints
    if (1.0 - mass < params.lam_null - 1e-12).any():
        raise NumericalError("no-link probability below lambda_null; parameters are not on the simplex")


def token_posterior(view: CorpusView, d: int, i: int, params: ModelParams,
                    mass: np.ndarray | None = None) -> np.ndarray:
    """Posterior over the topic of token ``i`` of document ``d``, given its word and link observation."""
    c = view.corpus
    if mass is None:
        mass = doc_link_mass(params)
    t = c.doc_offsets[d] + i
    sl = slice(t, t + 1)
    _, full = token_log_terms(params, c.token_doc[sl], c.token_word[sl], view.token_link[sl], mass)
    return _normalize_log_rows(full)[0][0]


def _u_inner(link_free: np.ndarray, mass: np.ndarray, counter: dict | None = None) -> np.ndarray:
    """S(z) = sum over unlinked tokens of (1 - p_hat(z)) / Pr(no link | everything else)."""
    nolink = link_free @ (1.0 - mass)
    if (nolink <= 0).any():
        raise NumericalError("no-link probability is not positive")
    if counter is not None:
        counter["u_token_ops"] = counter.get("u_token_ops", 0) + 3 * link_free.size
    return ((1.0 - link_free) / nolink[:, None]).sum(axis=0)


def _u_from_inner(params: ModelParams, inner: np.ndarray, counter: dict | None = None) -> np.ndarray:
    if counter is not None:
        counter["u_doc_ops"] = counter.get("u_doc_ops", 0) + params.theta.size
    return params.lam[:-1, None] * params.theta * inner[None, :]


def expected_u_fast(view: CorpusView, params: ModelParams, link_free: np.ndarray | None = None,
                    mass: np.ndarray | None = None, counter: dict | None = None) -> np.ndarray:
    """Expected counts of considered-but-unmatched link topics, D x K, in linear time.

    ``link_free`` holds the topic posteriors of the unlinked tokens (in corpus
    order) computed without their no-link observation; it is derived from
    ``params`` when omitted.
    """
    c = view.corpus
    if mass is None:
        mass = doc_link_mass(params)
    unlinked = view.token_link < 0
    if link_free is None:
        text, _ = token_log_terms(params, c.token_doc[unlinked], c.token_word[unlinked],
                                  view.token_link[unlinked], None)
        link_free = _normalize_log_rows(text)[0] if len(text) else np.zeros((0, params.K))
    return _u_from_inner(params, _u_inner(link_free, mass, counter), counter)


def expected_u_naive(view: CorpusView, params: ModelParams) -> np.ndarray:
    """Brute-force U: enumerate target, link topic and word topic for every unlinked token."""
    c = view.corpus
    D, K = params.theta.shape
    lam, theta, beta = params.lam, params.theta, params.beta
    mismatch = 1.0 - np.eye(K)  # [z_link, z_word]
    U = np.zeros((D, K))
    for t in np.flatnonzero(view.token_link < 0):
        src, w = c.token_doc[t], c.token_word[t]
        word_part = theta[src] * beta[:, w]  # over z_word
        # joint[target, z_link, z_word] for configurations that produce no link
        joint = lam[:D, None, None] * theta[:, :, None] * word_part[None, None, :] * mismatch[None]
        null_part = lam[D] * word_part.sum()
        Z = joint.sum() + null_part
        U += joint.sum(axis=2) / Z
    return U


@dataclass
class EStepResult:
    stats: SufficientStats
    objective: float
    # per-token posteriors, kept only on request
    posteriors: np.ndarray | None = None
    link_free: np.ndarray | None = None


def _shard_bounds(view: CorpusView, shard_tokens: int) -> list[tuple[int, int]]:
    """Token ranges aligned to document boundaries."""
    offsets = view.corpus.doc_offsets
    bounds = []
    start = 0
    total = int(offsets[-1])
    while start < total:
        stop_doc = int(np.searchsorted(offsets, start + shard_tokens, side="right")) - 1
        stop = int(offsets[max(stop_doc, 0)])
        if stop <= start:
            stop = int(offsets[np.searchsorted(offsets, start, side="right")])
        bounds.append((start, stop))
        start = stop
    return bounds


def _shard_stats(view: CorpusView, params: ModelParams, mass: np.ndarray | None,
                 start: int, stop: int, keep: bool):
    c = view.corpus
    D, K = params.theta.shape
    docs = c.token_doc[start:stop]
    words = c.token_word[start:stop]
    links = view.token_link[start:stop]
    text, full = token_log_terms(params, docs, words, links, mass)
    P, tok_ll = _normalize_log_rows(full)

    st = SufficientStats.zeros(D, K, params.W)
    for k in range(K):
        st.F[:, k] = np.bincount(docs, weights=P[:, k], minlength=D)
        st.G[k] = np.bincount(words, weights=P[:, k], minlength=params.W)
    st.loglik = float(tok_ll.sum())
    st.n_posteriors = len(docs)

    link_free = None
    if mass is not None:
        linked = links >= 0
        if linked.any():
            tgt = links[linked]
            for k in range(K):
                st.V[:, k] = np.bincount(tgt, weights=P[linked, k], minlength=D)
        unlinked = ~linked
        # direct form of the link-free posterior: normalize theta * beta
        link_free = _normalize_log_rows(text[unlinked])[0] if unlinked.any() else np.zeros((0, K))
        st.u_inner = _u_inner(link_free, mass)
    return st, (P if keep else None), (link_free if keep else None)


def e_step(view: CorpusView, params: ModelParams, hyper: Hyperparams, use_links: bool = True,
           threads: int = 1, deterministic: bool = True, shard_tokens: int = 200_000,
           keep_posteriors: bool = False, counter: dict | None = None) -> EStepResult:
    """Expected sufficient statistics and the MAP objective at ``params``.

    With ``use_links=False`` link observations are ignored and the step is
    the plain LDA E-step (V = U = 0).
    """
    mass = None
    if use_links:
        mass = doc_link_mass(params)
        _check_mass(params, mass)
    bounds = _shard_bounds(view, shard_tokens)
    run = functools.partial(_shard_stats, view, params, mass, keep=keep_posteriors)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            if deterministic:
                parts = list(pool.map(lambda b: run(*b), bounds))
            else:
                futures = [pool.submit(run, *b) for b in bounds]
                parts = [f.result() for f in as_completed(futures)]
    else:
        parts = [run(*b) for b in bounds]

    D, K = params.theta.shape
    stats = functools.reduce(lambda a, b: a + b, (p[0] for p in parts), SufficientStats.zeros(D, K, params.W))
    if use_links:
        stats.U = _u_from_inner(params, stats.u_inner)
    if counter is not None:
        counter["token_posteriors"] = counter.get("token_posteriors", 0) + stats.n_posteriors
        if use_links:
            counter["u_token_ops"] = counter.get("u_token_ops", 0) + 3 * K * int((view.token_link < 0).sum())
            counter["u_doc_ops"] = counter.get("u_doc_ops", 0) + D * K

    objective = stats.loglik + log_prior(params, hyper, use_links)
    if not np.isfinite(objective):
        raise NumericalError("objective is not finite")

    posteriors = link_free = None
    if keep_posteriors:
        posteriors = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, K))
        if use_links:
            link_free = np.concatenate([p[2] for p in parts]) if parts else np.zeros((0, K))
    return EStepResult(stats, objective, posteriors, link_free)


def m_step(stats: SufficientStats, hyper: Hyperparams, corpus, disable_links: bool = False) -> ModelParams:
    """MAP updates; negative numerators (priors below one) are clamped before normalizing."""
    beta = normalize(stats.G + hyper.eta[None, :] - 1.0)
    theta = normalize(stats.F + stats.V + stats.U + hyper.alpha[None, :] - 1.0)
    D = theta.shape[0]
    if disable_links:
        lam = np.zeros(D + 1)
        lam[-1] = 1.0
    else:
        T = stats.T
        lam = normalize(np.concatenate([T + hyper.gamma_doc - 1.0,
                                        [corpus.total_tokens - T.sum() + hyper.gamma_null - 1.0]]))
    return ModelParams(theta, beta, lam)


@dataclass
class TrainTrace:
    iters: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    checksums: list[dict] = field(default_factory=list)

    def append(self, it, objective, seconds, checksum=None):
        self.iters.append(it)
        self.objective.append(objective)
        self.seconds.append(seconds)
        self.checksums.append(checksum or {})

    def __len__(self):
        return len(self.iters)

    def write_csv(self, fp) -> None:
        fp.write("iter,objective,seconds\n")
        for it, obj, sec in zip(self.iters, self.objective, self.seconds):
            fp.write(f"{it},{obj!r},{sec:.6f}\n")


def _priors_at_least_one(hyper: Hyperparams) -> bool:
    return bool((hyper.alpha >= 1).all() and (hyper.eta >= 1).all()
                and hyper.gamma_doc >= 1 and hyper.gamma_null >= 1)


def run_em(view: CorpusView, params: ModelParams, hyper: Hyperparams, config: TrainConfig,
           step: Callable, check_monotone: bool = True,
           callback: Callable | None = None) -> tuple[ModelParams, TrainTrace]:
    """Generic EM driver: ``step(params) -> (new_params, objective_at_params, checksum)``."""
    trace = TrainTrace()
    prev = None
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        new, obj, checksum = step(params)
        if check_monotone and prev is not None and obj < prev - max(MONOTONE_SLACK, 1e-12 * abs(prev)):
            raise NumericalError(f"EM monotonicity violated at iteration {it}: {prev!r} -> {obj!r}")
        trace.append(it, obj, time.perf_counter() - t0, checksum)
        log.debug("iter %d objective %.6f", it, obj)
        params = new
        if callback is not None:
            callback(it, params, obj)
        if prev is not None and abs(obj - prev) <= config.tol * abs(prev):
            break
        prev = obj
    return params, trace


def train(view: CorpusView, hyper: Hyperparams, config: TrainConfig, init: ModelParams | None = None,
          callback: Callable | None = None, counter: dict | None = None) -> tuple[ModelParams, TrainTrace]:
    """Alternate E and M steps from ``init`` (or :func:`init_params`).

    ``config.disable_links`` pins lambda to all-null, which is plain LDA.
    """
    params = init.copy() if init is not None else init_params(view, hyper, config)
    use_links = not config.disable_links
    if config.disable_links:
        params.lam = np.zeros(params.D + 1)
        params.lam[-1] = 1.0

    def step(p):
        res = e_step(view, p, hyper, use_links, config.threads, config.deterministic,
                     config.shard_tokens, counter=counter)
        return m_step(res.stats, hyper, view.corpus, config.disable_links), res.objective, res.stats.checksum()

    # clamped M-steps are not exact maximizers, so monotonicity is not guaranteed then
    return run_em(view, params, hyper, config, step, _priors_at_least_one(hyper), callback)


def fold_in(words: Sequence[int], params: ModelParams, hyper: Hyperparams, iters: int = 50,
            tol: float = 1e-7) -> np.ndarray:
    """Topic mixture for an unseen document with beta and lambda frozen.

    Every token is treated as observed without a link.
    """
    words = np.asarray(words, dtype=np.int64)
    if len(words) == 0:
        return hyper.alpha / hyper.alpha.sum()
    K = params.K
    mass = doc_link_mass(params)
    with np.errstate(divide="ignore"):
        fixed = np.log(params.beta[:, words].T) + np.log(1.0 - mass)[None, :]
    theta = np.full(K, 1.0 / K)
    for _ in range(iters):
        with np.errstate(divide="ignore"):
            P, _ = _normalize_log_rows(fixed + np.log(theta)[None, :])
        new = normalize(P.sum(axis=0) + hyper.alpha - 1.0)
        done = np.abs(new - theta).max() < tol
        theta = new
        if done:
            break
    return theta


def expected_link_counts(words: Sequence[int], theta_source: np.ndarray, params: ModelParams) -> np.ndarray:
    """Expected number of links from a document's tokens to each of the D documents."""
    words = np.asarray(words, dtype=np.int64)
    if len(words) == 0:
        return np.zeros(params.D)
    with np.errstate(divide="ignore"):
        L = np.log(theta_source)[None, :] + np.log(params.beta[:, words].T)
    P, _ = _normalize_log_rows(L)
    topic_counts = P.sum(axis=0)
    return params.lam[:-1] * (params.theta @ topic_counts)


def score_links(words: Sequence[int], theta_source: np.ndarray, params: ModelParams,
                source: int | None = None) -> RankedPrediction:
    return rank_scores(expected_link_counts(words, theta_source, params), source)
