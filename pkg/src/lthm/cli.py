"""Command line entry point: gen, train, predict, eval, inspect.

Every command writes into an output directory that receives a single
``manifest.json`` describing the run. Exit codes: 0 success, 1 usage error,
2 invalid input data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from lthm import __version__
from lthm.baselines import (
    LinkLdaParams,
    as_lda_params,
    link_lda_score,
    link_lda_train,
)
from lthm.corpus import (
    Corpus,
    CorpusView,
    in_degree,
    parse_corpus,
    read_split,
    serialize_corpus,
    split_train_test,
    write_split,
)
from lthm.em import fold_in, score_links, train
from lthm.errors import CorpusError, NumericalError
from lthm.evaluation import EvalReport, emit_curves, evaluate, truth_from_view
from lthm.generator import GenConfig, sample_corpus
from lthm.model import (
    MODEL_FORMAT_VERSION,
    Hyperparams,
    ModelParams,
    TrainConfig,
    model_record,
    params_from_record,
    read_record,
    vocab_hash,
    write_record,
)
from lthm.ranking import rank_scores

log = logging.getLogger("lthm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, inputs: dict[str, Path], seed, t0: float) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": file_hash(p)} for name, p in inputs.items()},
        "seed": seed,
        "timings": {"seconds": round(time.perf_counter() - t0, 6)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_corpus(path: Path, min_count: int = 1, stopwords: Path | None = None) -> Corpus:
    stop = Path(stopwords).read_text().split() if stopwords else ()
    with open(path, encoding="utf-8") as fp:
        return parse_corpus(fp, min_count=min_count, stopwords=stop)


def _hyper(args, view: CorpusView, K: int) -> Hyperparams:
    ref = Hyperparams.reference(view, K, args.gamma_doc)
    gamma_null = ref.gamma_null if args.gamma_null == "auto" else float(args.gamma_null)
    return Hyperparams.symmetric(K, view.corpus.W, args.alpha, args.eta, args.gamma_doc, gamma_null)


def cmd_train(args) -> None:
    t0 = time.perf_counter()
    corpus = load_corpus(args.corpus, args.min_count, args.stopwords)
    if args.split >= 1.0:
        train_view = corpus.view()
    else:
        train_view, _ = split_train_test(corpus, 1.0 - args.split, args.seed)
    hyper = _hyper(args, train_view, args.topics)
    config = TrainConfig(args.topics, args.iters, args.tol, args.seed, disable_links=args.model == "lda",
                         threads=args.threads, deterministic=args.deterministic,
                         extra={"model": args.model, "min_count": args.min_count,
                                "stopwords": Path(args.stopwords).read_text().split() if args.stopwords else []})
    common = {"corpus_hash": file_hash(args.corpus), "words": list(corpus.vocabulary.words)}

    trace = None
    if args.model in ("lthm", "lda"):
        params, trace = train(train_view, hyper, config)
        rec = model_record(args.model, params, hyper, config, corpus.doc_ids, corpus.vocabulary, **common)
    elif args.model == "link-lda":
        lparams, trace = link_lda_train(train_view, hyper, config)
        rec = model_record("link-lda", as_lda_params(lparams), hyper, config, corpus.doc_ids,
                           corpus.vocabulary, omega=lparams.omega.tolist(), **common)
    else:
        rec = {"version": MODEL_FORMAT_VERSION, "kind": "freq", "D": corpus.D, "doc_ids": corpus.doc_ids,
               "vocab_hash": vocab_hash(corpus.vocabulary), "in_degree": in_degree(train_view).tolist(),
               "config": asdict(config), **common}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "model.jsonl", "w") as fp:
        write_record(rec, fp)
    if trace is not None:
        with open(out / "trace.csv", "w") as fp:
            trace.write_csv(fp)
    with open(out / "split.tsv", "w") as fp:
        write_split(train_view, fp)
    with open(out / "vocab.tsv", "w") as fp:
        corpus.vocabulary.write(fp)
    cfg = {"model": args.model, "disable_links": config.disable_links,
           "train": {k: v for k, v in asdict(config).items() if k != "extra"},
           "hyper": {"alpha": args.alpha, "eta": args.eta, "gamma_doc": hyper.gamma_doc,
                     "gamma_null": hyper.gamma_null}, "split": args.split}
    write_manifest(out, "train", cfg, {"corpus": Path(args.corpus)}, args.seed, t0)
    log.info("wrote %s", out / "model.jsonl")


def _load_model(path: Path) -> dict:
    with open(path) as fp:
        try:
            return read_record(fp)
        except (ValueError, KeyError) as exc:
            raise CorpusError(f"{path}: {exc}") from None


def _corpus_for_model(rec: dict, corpus_path: Path) -> Corpus:
    if rec.get("corpus_hash") != file_hash(corpus_path):
        raise CorpusError("corpus does not match the one the model was trained on (hash mismatch)")
    extra = rec["config"].get("extra", {})
    with open(corpus_path, encoding="utf-8") as fp:
        corpus = parse_corpus(fp, min_count=extra.get("min_count", 1), stopwords=extra.get("stopwords", ()))
    if vocab_hash(corpus.vocabulary) != rec["vocab_hash"]:
        raise CorpusError("vocabulary hash mismatch")
    return corpus


def predict_rankings(rec: dict, corpus: Corpus, docs: list[int], theta_mode: str = "trained"):
    kind = rec["kind"]
    if kind == "freq":
        deg = np.array(rec["in_degree"], dtype=float)
        ranking = rank_scores(deg)
        return {d: ranking for d in docs}
    params, hyper, _ = params_from_record(rec)
    out = {}
    for d in docs:
        words = corpus.documents[d].tokens
        theta = params.theta[d] if theta_mode == "trained" else fold_in(words, params, hyper)
        if kind == "link-lda":
            omega = np.array(rec["omega"], dtype=float)
            out[d] = link_lda_score(theta, LinkLdaParams(params.theta, params.beta, omega), d)
        else:
            out[d] = score_links(words, theta, params, d)
    return out


def cmd_predict(args) -> None:
    t0 = time.perf_counter()
    rec = _load_model(args.model_file)
    corpus = _corpus_for_model(rec, args.corpus)
    if args.docs:
        try:
            docs = [corpus.doc_index[x] for x in args.docs.split(",")]
        except KeyError as exc:
            raise CorpusError(f"unknown doc id {exc.args[0]!r}") from None
    elif args.split:
        with open(args.split) as fp:
            _, test = read_split(corpus, fp)
        docs = sorted(test.visible_link_sources)
    else:
        docs = list(range(corpus.D))
    rankings = predict_rankings(rec, corpus, docs, args.theta)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = corpus.doc_ids
    with open(out / "rankings.jsonl", "w") as fp:
        for d in docs:
            r = rankings[d]
            row = {"doc": ids[d], "ranking": [[ids[t], float(s)] for t, s in zip(r.order, r.scores)]}
            fp.write(json.dumps(row) + "\n")
    inputs = {"model": Path(args.model_file), "corpus": Path(args.corpus)}
    if args.split:
        inputs["split"] = Path(args.split)
    write_manifest(out, "predict", {"theta": args.theta, "kind": rec["kind"], "docs": [ids[d] for d in docs]},
                   inputs, None, t0)


def _read_rankings(path: Path, corpus: Corpus) -> dict[int, list[int]]:
    out = {}
    with open(path) as fp:
        for lineno, line in enumerate(fp, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            try:
                out[corpus.doc_index[row["doc"]]] = [corpus.doc_index[t] for t, _ in row["ranking"]]
            except KeyError as exc:
                raise CorpusError(f"{path}: unknown doc id {exc.args[0]!r}", lineno) from None
    return out


def cmd_eval(args) -> None:
    t0 = time.perf_counter()
    with open(args.corpus, encoding="utf-8") as fp:
        corpus = parse_corpus(fp)
    with open(args.split) as fp:
        train_view, test_view = read_split(corpus, fp)
    view = test_view if args.on == "test" else train_view
    truth = truth_from_view(view)
    report = None
    inputs = {"corpus": Path(args.corpus), "split": Path(args.split)}
    for item in args.rankings:
        if "=" not in item:
            raise CorpusError(f"--rankings expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        preds = _read_rankings(Path(path), corpus)
        missing = [corpus.doc_ids[d] for d in truth if truth[d] and d not in preds]
        if missing:
            raise CorpusError(f"method {name!r} has no ranking for test documents {missing[:5]}")
        r = evaluate(preds, truth, args.n_max, name, corpus.D)
        report = r if report is None else report.merge(r)
        inputs[f"rankings:{name}"] = Path(path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "curves.csv", "w", newline="") as fp:
        emit_curves(report or EvalReport(args.n_max), fp)
    write_manifest(out, "eval", {"n_max": args.n_max, "on": args.on}, inputs, None, t0)


def cmd_gen(args) -> None:
    t0 = time.perf_counter()
    try:
        raw = json.loads(Path(args.config).read_text())
        if isinstance(raw.get("n_tokens"), list):
            raw["n_tokens"] = tuple(raw["n_tokens"])
        config = GenConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"bad generator config: {exc}") from None
    truth = sample_corpus(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "corpus.jsonl", "w") as fp:
        serialize_corpus(truth.corpus, fp)
    with open(out / "truth.jsonl", "w") as fp:
        truth.write(fp)
    write_manifest(out, "gen", raw, {"config": Path(args.config)}, config.seed, t0)


def topic_report(params: ModelParams, words: list[str], doc_ids: list[str], top_words: int, top_links: int) -> str:
    """Most probable words and link targets per topic."""
    lines = []
    link_mass = params.lam[:-1, None] * params.theta  # D x K
    for z in range(params.K):
        lines.append(f"topic {z}")
        order = np.lexsort((np.arange(params.W), -params.beta[z]))[:top_words]
        lines.append("  words: " + "  ".join(f"{words[w]} {params.beta[z, w]:.4f}" for w in order))
        col = link_mass[:, z]
        total = col.sum()
        probs = col / total if total > 0 else np.zeros_like(col)
        order = np.lexsort((np.arange(params.D), -probs))[:top_links]
        lines.append("  links: " + "  ".join(f"{doc_ids[d]} {probs[d]:.4f}" for d in order))
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> None:
    rec = _load_model(args.model_file)
    if rec["kind"] == "freq":
        raise CorpusError("inspect needs a topic model, not a frequency model")
    params, _, _ = params_from_record(rec)
    sys.stdout.write(topic_report(params, rec["words"], rec["doc_ids"], args.top_words, args.top_links))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lthm", description="Topic models for hypertext: train, predict, evaluate, generate, inspect.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress (default: off)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a model on the train split of a corpus")
    t.add_argument("corpus", type=Path, help="line-delimited JSON corpus")
    t.add_argument("--out", required=True, type=Path, help="output directory")
    t.add_argument("--model", choices=["lthm", "lda", "link-lda", "freq"], default="lthm", help="default: lthm")
    t.add_argument("--topics", type=int, default=20, help="number of topics (default: 20)")
    t.add_argument("--alpha", type=float, default=1.1, help="symmetric theta prior (default: 1.1)")
    t.add_argument("--eta", type=float, default=1.1, help="symmetric beta prior (default: 1.1)")
    t.add_argument("--gamma-doc", type=float, default=1.1, help="lambda prior per document (default: 1.1)")
    t.add_argument("--gamma-null", default="auto",
                   help="lambda prior for 'no link'; 'auto' scales gamma-doc by tokens/links (default: auto)")
    t.add_argument("--iters", type=int, default=600, help="maximum EM iterations (default: 600)")
    t.add_argument("--tol", type=float, default=1e-6, help="relative objective change to stop (default: 1e-6)")
    t.add_argument("--seed", type=int, default=0, help="seed for split and initialization (default: 0)")
    t.add_argument("--split", type=float, default=0.9,
                   help="fraction of documents whose links are visible; 1 disables the split (default: 0.9)")
    t.add_argument("--min-count", type=int, default=1, help="vocabulary frequency cutoff (default: 1)")
    t.add_argument("--stopwords", type=Path, help="whitespace-separated stopword file (default: none)")
    t.add_argument("--threads", type=int, default=1, help="E-step worker threads (default: 1)")
    t.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                   help="merge E-step shards in fixed order (default: on)")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="rank link targets for documents")
    pr.add_argument("model_file", type=Path)
    pr.add_argument("corpus", type=Path)
    pr.add_argument("--out", required=True, type=Path, help="output directory")
    pr.add_argument("--docs", help="comma-separated doc ids (default: test docs of --split, else all)")
    pr.add_argument("--split", type=Path, help="split file; its test documents are ranked")
    pr.add_argument("--theta", choices=["trained", "fold-in"], default="trained",
                    help="source topic mixture: trained row or re-estimated (default: trained)")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="hit/precision/recall curves for one or more ranking files")
    e.add_argument("corpus", type=Path)
    e.add_argument("split", type=Path)
    e.add_argument("--rankings", action="append", required=True, metavar="NAME=PATH",
                   help="rankings file per method; repeat for several methods")
    e.add_argument("--n-max", type=int, default=20, help="largest N on the curves (default: 20)")
    e.add_argument("--on", choices=["test", "train"], default="test", help="which documents to score (default: test)")
    e.add_argument("--out", required=True, type=Path, help="output directory")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen", help="sample a synthetic corpus")
    g.add_argument("config", type=Path, help="JSON generator config")
    g.add_argument("--out", required=True, type=Path, help="output directory")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("inspect", help="top words and link targets per topic")
    i.add_argument("model_file", type=Path)
    i.add_argument("--top-words", type=int, default=10, help="(default: 10)")
    i.add_argument("--top-links", type=int, default=2, help="(default: 2)")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CorpusError, FileNotFoundError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"lthm: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"lthm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"lthm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
