"""Link-prediction metrics over ranked target lists: hit@N, precision@N, recall@N."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from lthm.corpus import CorpusView
from lthm.errors import CorpusError
from lthm.ranking import RankedPrediction

CSV_HEADER = ["method", "N", "hit", "precision", "recall"]


@dataclass
class MethodCurves:
    hit: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    n_docs: int = 0


@dataclass
class EvalReport:
    n_max: int
    curves: dict[str, MethodCurves] = field(default_factory=dict)

    def __getitem__(self, method: str) -> MethodCurves:
        return self.curves[method]

    def merge(self, other: "EvalReport") -> "EvalReport":
        if other.n_max != self.n_max:
            raise ValueError("reports cover different N ranges")
        return EvalReport(self.n_max, {**self.curves, **other.curves})

    def check(self) -> None:
        for name, c in self.curves.items():
            for arr in (c.hit, c.precision, c.recall):
                if (arr < -1e-12).any() or (arr > 1 + 1e-12).any():
                    raise AssertionError(f"{name}: metric outside [0, 1]")
            if (np.diff(c.hit) < -1e-12).any() or (np.diff(c.recall) < -1e-12).any():
                raise AssertionError(f"{name}: hit or recall decreases in N")


def truth_from_view(view: CorpusView, docs: Sequence[int] | None = None) -> dict[int, set[int]]:
    """Distinct link targets per source; repeated links to one target count once."""
    docs = sorted(view.visible_link_sources) if docs is None else docs
    return {d: view.link_targets(d) for d in docs}


def _order(pred) -> np.ndarray:
    return np.asarray(pred.order if isinstance(pred, RankedPrediction) else pred)


def evaluate(predictions: Mapping[int, RankedPrediction | Sequence[int]], truth: Mapping[int, set[int]],
             n_max: int = 20, method: str = "method", D: int | None = None) -> EvalReport:
    """Average the three curves over test documents that have at least one true link."""
    docs = [d for d in truth if truth[d]]
    hit = np.zeros(n_max)
    prec = np.zeros(n_max)
    rec = np.zeros(n_max)
    N = np.arange(1, n_max + 1)
    for d in docs:
        if d not in predictions:
            raise CorpusError(f"no ranking for test document {d}")
        order = _order(predictions[d])
        if len(order) < n_max:
            raise CorpusError(f"ranking for document {d} is shorter than N_max={n_max}")
        targets = truth[d]
        if D is not None and any(not 0 <= t < D for t in targets):
            raise CorpusError(f"truth for document {d} references an unknown document")
        if not targets <= set(order.tolist()):
            raise CorpusError(f"truth for document {d} references a document absent from its ranking")
        found = np.cumsum(np.isin(order[:n_max], list(targets)))
        hit += found > 0
        prec += found / N
        rec += found / len(targets)
    if docs:
        hit, prec, rec = hit / len(docs), prec / len(docs), rec / len(docs)
    report = EvalReport(n_max, {method: MethodCurves(hit, prec, rec, len(docs))})
    report.check()
    return report


def emit_curves(report: EvalReport, fp: IO[str]) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for name, c in report.curves.items():
        for n in range(report.n_max):
            w.writerow([name, n + 1, repr(float(c.hit[n])), repr(float(c.precision[n])), repr(float(c.recall[n]))])


def load_curves(fp: IO[str]) -> EvalReport:
    rows = list(csv.reader(fp))
    if not rows or rows[0] != CSV_HEADER:
        raise CorpusError("curves file lacks the expected header")
    grouped: dict[str, list[tuple[int, float, float, float]]] = {}
    for r in rows[1:]:
        grouped.setdefault(r[0], []).append((int(r[1]), float(r[2]), float(r[3]), float(r[4])))
    n_max = max((len(v) for v in grouped.values()), default=0)
    report = EvalReport(n_max)
    for name, vals in grouped.items():
        vals.sort()
        arr = np.array([v[1:] for v in vals])
        report.curves[name] = MethodCurves(arr[:, 0], arr[:, 1], arr[:, 2])
    return report
