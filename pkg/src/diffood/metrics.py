"""Detection metrics: AUROC (Mann-Whitney, ties at half weight) and FPR@TPR."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def auroc(id_scores, ood_scores) -> float:
    """Probability that a random OOD score exceeds a random ID score,
    ties counted half. Rank-based, so exact for tied inputs."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("score arrays must be nonempty")
    n, m = id_scores.size, ood_scores.size
    ranks = rankdata(np.concatenate([id_scores, ood_scores]), method="average")
    u = ranks[n:].sum() - m * (m + 1) / 2.0
    return float(u / (n * m))


def fpr_at_tpr(id_scores, ood_scores, tpr: float = 0.95) -> float:
    """False-positive rate at the loosest threshold that still flags at
    least ``tpr`` of the OOD scores (score >= threshold counts as flagged)."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValueError("score arrays must be nonempty")
    if not 0.0 < tpr <= 1.0:
        raise ValueError("tpr must lie in (0, 1]")
    m = ood_scores.size
    need = int(np.ceil(tpr * m))
    threshold = np.sort(ood_scores)[m - need]
    return float(np.mean(id_scores >= threshold))
