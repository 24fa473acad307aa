from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RankedPrediction:
    """Documents ordered by descending score; equal scores keep doc-index order."""

    source: int | None
    order: np.ndarray
    scores: np.ndarray  # aligned with ``order``

    def top(self, n: int) -> np.ndarray:
        return self.order[:n]

    def __len__(self):
        return len(self.order)


def rank_scores(scores: np.ndarray, source: int | None = None) -> RankedPrediction:
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return RankedPrediction(source, order, scores[order])
