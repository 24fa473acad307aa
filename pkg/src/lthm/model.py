"""Parameter and statistic containers, MAP objective, initialization, model files."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import IO, Any

import numpy as np
from scipy.special import gammaln, logsumexp

from lthm.corpus import CorpusView, Vocabulary, in_degree
from lthm.errors import NumericalError

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
# floor applied to MAP numerators before normalizing
CLAMP = 1e-12
SIMPLEX_TOL = 1e-9


def normalize(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Clamp to CLAMP and rescale along ``axis`` to sum to one."""
    x = np.maximum(np.asarray(x, dtype=float), CLAMP)
    return x / x.sum(axis=axis, keepdims=True)


def dirichlet_logpdf(x: np.ndarray, a: np.ndarray) -> float:
    """Sum of Dirichlet log densities of the rows of ``x``."""
    x = np.atleast_2d(x)
    a = np.broadcast_to(a, x.shape)
    const = gammaln(a.sum(axis=1)) - gammaln(a).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a == 1.0, 0.0, (a - 1.0) * np.log(x))
    return float(const.sum() + terms.sum())


@dataclass
class Hyperparams:
    alpha: np.ndarray
    eta: np.ndarray
    gamma_doc: float
    gamma_null: float

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        if (self.alpha <= 0).any() or (self.eta <= 0).any() or self.gamma_doc <= 0 or self.gamma_null <= 0:
            raise ValueError("all Dirichlet hyperparameters must be positive")
        if self.gamma_doc >= self.gamma_null:
            log.warning("gamma_doc=%g is not much smaller than gamma_null=%g; the link prior "
                        "will not favour missing links", self.gamma_doc, self.gamma_null)

    @classmethod
    def symmetric(cls, K: int, W: int, alpha=1.1, eta=1.1, gamma_doc=1.1, gamma_null=1000.0):
        return cls(np.full(K, float(alpha)), np.full(W, float(eta)), float(gamma_doc), float(gamma_null))

    @classmethod
    def reference(cls, view: CorpusView, K: int, gamma_doc: float = 1.1) -> "Hyperparams":
        """alpha = eta = 1.1; gamma_null / gamma_doc matches the token-to-link ratio."""
        c = view.corpus
        ratio = c.total_tokens / max(view.n_links, 1)
        return cls.symmetric(K, c.W, 1.1, 1.1, gamma_doc, max(gamma_doc * ratio, gamma_doc + 1.0))

    @property
    def K(self) -> int:
        return len(self.alpha)

    def gamma(self, D: int) -> np.ndarray:
        return np.concatenate([np.full(D, self.gamma_doc), [self.gamma_null]])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "eta": self.eta.tolist(),
                "gamma_doc": self.gamma_doc, "gamma_null": self.gamma_null}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(np.array(d["alpha"], dtype=float), np.array(d["eta"], dtype=float),
                   float(d["gamma_doc"]), float(d["gamma_null"]))


@dataclass
class ModelParams:
    theta: np.ndarray  # D x K
    beta: np.ndarray  # K x W
    lam: np.ndarray  # D + 1, last entry is the no-link mass

    @property
    def D(self) -> int:
        return self.theta.shape[0]

    @property
    def K(self) -> int:
        return self.theta.shape[1]

    @property
    def W(self) -> int:
        return self.beta.shape[1]

    @property
    def lam_null(self) -> float:
        return float(self.lam[-1])

    def check(self, tol: float = SIMPLEX_TOL) -> None:
        D, K = self.theta.shape
        if self.beta.shape[0] != K or self.lam.shape != (D + 1,):
            raise NumericalError("parameter shapes disagree")
        for name, arr in (("theta", self.theta), ("beta", self.beta), ("lambda", self.lam[None, :])):
            if not np.isfinite(arr).all() or (arr < 0).any():
                raise NumericalError(f"{name} has negative or non-finite entries")
            if np.abs(arr.sum(axis=1) - 1.0).max() > tol:
                raise NumericalError(f"{name} rows do not sum to one")

    def copy(self) -> "ModelParams":
        return ModelParams(self.theta.copy(), self.beta.copy(), self.lam.copy())


@dataclass
class SufficientStats:
    """Expected counts from one E-step (or one shard of it).

    ``u_inner`` keeps the per-topic sum over unlinked tokens from which U is
    built, and ``loglik`` the summed token log-likelihood. Both add across
    shards like the counts do.
    """

    F: np.ndarray  # D x K, word topics per document
    G: np.ndarray  # K x W, word topics per vocabulary entry
    V: np.ndarray  # D x K, topics of incoming links
    U: np.ndarray  # D x K, considered-but-mismatched link topics
    u_inner: np.ndarray  # K
    loglik: float = 0.0
    n_posteriors: int = 0

    @classmethod
    def zeros(cls, D: int, K: int, W: int) -> "SufficientStats":
        return cls(np.zeros((D, K)), np.zeros((K, W)), np.zeros((D, K)), np.zeros((D, K)), np.zeros(K))

    @property
    def T(self) -> np.ndarray:
        return (self.V + self.U).sum(axis=1)

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(self.F + other.F, self.G + other.G, self.V + other.V, self.U + other.U,
                               self.u_inner + other.u_inner, self.loglik + other.loglik,
                               self.n_posteriors + other.n_posteriors)

    def checksum(self) -> dict[str, float]:
        return {"F": float(self.F.sum()), "G": float(self.G.sum()),
                "V": float(self.V.sum()), "U": float(self.U.sum())}


@dataclass
class TrainConfig:
    K: int
    max_iters: int = 600
    tol: float = 1e-6
    seed: int = 0
    disable_links: bool = False
    threads: int = 1
    deterministic: bool = True
    # tokens per E-step shard
    shard_tokens: int = 200_000
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1 or self.max_iters < 1 or self.tol < 0:
            raise ValueError("need K >= 1, max_iters >= 1 and tol >= 0")


def init_params(view: CorpusView, hyper: Hyperparams, config: TrainConfig, seed: int | None = None) -> ModelParams:
    c = view.corpus
    rng = np.random.default_rng(config.seed if seed is None else seed)
    theta = normalize(rng.dirichlet(hyper.alpha, size=c.D))
    beta = normalize(rng.dirichlet(hyper.eta, size=config.K))
    if config.disable_links:
        lam = np.zeros(c.D + 1)
        lam[-1] = 1.0
    else:
        counts = np.concatenate([in_degree(view) + hyper.gamma_doc - 1.0,
                                 [c.total_tokens - view.n_links + hyper.gamma_null - 1.0]])
        lam = normalize(counts)
    return ModelParams(theta, beta, lam)


def doc_link_mass(params: ModelParams) -> np.ndarray:
    """Per-topic probability that a token's link candidate matches its topic."""
    return params.lam[:-1] @ params.theta


def token_log_terms(params: ModelParams, docs: np.ndarray, words: np.ndarray, links: np.ndarray,
                    mass: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized log posteriors over topics for a batch of tokens.

    Returns ``(text, full)``: ``text`` is log theta + log beta, ``full`` adds
    the link-observation factor. With ``mass=None`` links are ignored.
    """
    with np.errstate(divide="ignore"):
        text = np.log(params.theta[docs]) + np.log(params.beta[:, words].T)
        if mass is None:
            return text, text
        full = text.copy()
        unlinked = links < 0
        full[unlinked] += np.log(1.0 - mass)[None, :]
        linked = ~unlinked
        if linked.any():
            tgt = links[linked]
            full[linked] += np.log(params.lam[tgt])[:, None] + np.log(params.theta[tgt])
    return text, full


def log_prior(params: ModelParams, hyper: Hyperparams, use_links: bool = True) -> float:
    lp = dirichlet_logpdf(params.theta, hyper.alpha) + dirichlet_logpdf(params.beta, hyper.eta)
    if use_links:
        lp += dirichlet_logpdf(params.lam[None, :], hyper.gamma(params.D))
    return lp


def log_map_objective(view: CorpusView, params: ModelParams, hyper: Hyperparams,
                      use_links: bool = True, chunk: int = 200_000) -> float:
    """Log joint of observed words, link observations and parameters.

    Each token contributes log sum_z theta_d(z) beta_z(w) Pr(link obs | z).
    ``use_links=False`` drops the link factor and the prior on lambda, giving
    the plain LDA objective.
    """
    c = view.corpus
    mass = doc_link_mass(params) if use_links else None
    links = view.token_link
    total = 0.0
    for start in range(0, c.total_tokens, chunk):
        sl = slice(start, start + chunk)
        _, full = token_log_terms(params, c.token_doc[sl], c.token_word[sl], links[sl], mass)
        total += float(logsumexp(full, axis=1).sum())
    total += log_prior(params, hyper, use_links)
    if not np.isfinite(total):
        raise NumericalError("objective is not finite")
    return total


def vocab_hash(vocabulary: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocabulary.words).encode("utf-8")).hexdigest()


def model_record(kind: str, params: ModelParams, hyper: Hyperparams, config: TrainConfig,
                 doc_ids: list[str], vocabulary: Vocabulary, **extra) -> dict:
    rec = {
        "version": MODEL_FORMAT_VERSION,
        "kind": kind,
        "K": params.K,
        "D": params.D,
        "W": params.W,
        "doc_ids": list(doc_ids),
        "vocab_hash": vocab_hash(vocabulary),
        "theta": params.theta.tolist(),
        "beta": params.beta.tolist(),
        "lambda": params.lam.tolist(),
        "hyper": hyper.to_dict(),
        "config": asdict(config),
    }
    rec.update(extra)
    return rec


def write_record(rec: dict, fp: IO[str]) -> None:
    # float repr round-trips exactly through json
    fp.write(json.dumps(rec, allow_nan=False) + "\n")


def read_record(fp: IO[str]) -> dict:
    line = fp.readline()
    if not line.strip():
        raise ValueError("empty model file")
    rec = json.loads(line)
    if rec.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {rec.get('version')!r}")
    return rec


def params_from_record(rec: dict) -> tuple[ModelParams, Hyperparams, TrainConfig]:
    params = ModelParams(np.array(rec["theta"], dtype=float).reshape(rec["D"], rec["K"]),
                         np.array(rec["beta"], dtype=float).reshape(rec["K"], rec["W"]),
                         np.array(rec["lambda"], dtype=float))
    return params, Hyperparams.from_dict(rec["hyper"]), TrainConfig(**rec["config"])
