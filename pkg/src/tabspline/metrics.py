"""Task metrics and rank-based multi-method comparison (Friedman / Nemenyi)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInput, ShapeMismatch, SingleClass, UnsupportedK, ZeroRange

# Studentized range q_{alpha, k, inf} / sqrt(2), k = 2..20.
Q_TABLE = {
    0.05: (
        1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730, 3.163684,
        3.218654, 3.268004, 3.312739, 3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073, 3.543799,
    ),
    0.10: (
        1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606, 2.919889,
        2.977768, 3.029694, 3.076733, 3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224, 3.319233,
    ),
}


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.size == 0:
        raise EmptyInput("empty input")
    if a.size != b.size:
        raise ShapeMismatch(f"lengths differ: {a.size} vs {b.size}")
    return a, b


def rmse(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    return float(np.sqrt(np.mean((pred - target.astype(np.float64)) ** 2)))


def nrmse(pred, target, normalizer: str = "range") -> float:
    """RMSE divided by the range (default) or the standard deviation of ``target``."""
    pred, target = _check_pair(pred, target)
    target = target.astype(np.float64)
    if normalizer not in ("range", "std"):
        raise ValueError(f"unknown normalizer {normalizer!r}")
    scale = float(target.max() - target.min()) if normalizer == "range" else float(target.std())
    if scale == 0.0:
        raise ZeroRange("targets have zero spread")
    return rmse(pred, target) / scale


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores, labels = _check_pair(scores, labels)
    pos = labels.astype(bool) if labels.dtype == bool else labels == 1
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    r = rankdata(scores)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def weighted_ovr_auc(score_matrix, labels) -> float:
    """Sum over classes of (n_c / n) * AUC(c vs rest); absent classes get weight 0."""
    S = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if S.ndim != 2 or S.shape[0] != labels.size:
        raise ShapeMismatch("score matrix must be (n, C) with n labels")
    present = np.unique(labels)
    if present.size < 2:
        raise SingleClass("AUC needs at least two classes")
    total = 0.0
    for c in present:
        y = (labels == c).astype(int)
        total += y.mean() * roc_auc(S[:, int(c)], y)
    return float(total)


def brier(scores, labels) -> float:
    scores, labels = _check_pair(scores, labels)
    return float(np.mean((scores - labels.astype(np.float64)) ** 2))


def rank_block(values, higher_is_better: bool = True) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise ValueError("need at least two methods to rank")
    return rankdata(-v if higher_is_better else v)


def rank_matrix(values, higher_is_better: bool = True) -> np.ndarray:
    V = np.asarray(values, dtype=np.float64)
    return np.vstack([rank_block(row, higher_is_better) for row in V])


def q_alpha(k: int, alpha: float = 0.05) -> float:
    if alpha not in Q_TABLE:
        raise UnsupportedK(f"alpha={alpha} not tabulated (use 0.05 or 0.10)")
    if not 2 <= k <= 20:
        raise UnsupportedK(f"k={k} outside the tabulated range 2..20")
    return Q_TABLE[alpha][k - 2]


def critical_difference(k: int, N: int, alpha: float = 0.05) -> float:
    return q_alpha(k, alpha) * math.sqrt(k * (k + 1) / (6.0 * N))


@dataclass(frozen=True)
class RankTable:
    methods: tuple
    ranks: np.ndarray
    avg_ranks: np.ndarray
    friedman_stat: float
    iman_davenport: float
    cd: float
    alpha: float

    @property
    def N(self) -> int:
        return self.ranks.shape[0]

    @property
    def k(self) -> int:
        return self.ranks.shape[1]

    def cliques(self) -> list:
        return cd_cliques(self.avg_ranks, self.cd)

    def to_json(self) -> str:
        return json.dumps(cd_export(self), indent=2)


def friedman_nemenyi(ranks, alpha: float = 0.05):
    """Return ``(chi2_F, F_ID, CD)`` for an N x k rank matrix."""
    R = np.asarray(ranks, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 2 or R.shape[1] < 2:
        raise ValueError("need an N x k rank matrix with N >= 2 and k >= 2")
    N, k = R.shape
    avg = R.mean(axis=0)
    chi2 = 12.0 * N / (k * (k + 1)) * float(np.sum((avg - (k + 1) / 2.0) ** 2))
    denom = N * (k - 1) - chi2
    f_id = (N - 1) * chi2 / denom if denom > 0 else math.inf
    return chi2, f_id, critical_difference(k, N, alpha)


def build_rank_table(values, methods: Sequence[str], higher_is_better: bool = True, alpha: float = 0.05) -> RankTable:
    ranks = rank_matrix(values, higher_is_better)
    chi2, f_id, cd = friedman_nemenyi(ranks, alpha)
    return RankTable(tuple(methods), ranks, ranks.mean(axis=0), chi2, f_id, cd, alpha)


def cd_cliques(avg_ranks, cd: float) -> list:
    """Maximal runs of methods (sorted by rank) whose rank spread is below ``cd``."""
    avg = np.asarray(avg_ranks, dtype=np.float64)
    order = np.argsort(avg, kind="stable")
    runs = []
    for i in range(order.size):
        j = i
        while j + 1 < order.size and avg[order[j + 1]] - avg[order[i]] < cd:
            j += 1
        if not runs or j > runs[-1][1]:
            runs.append((i, j))
    return [sorted(order[a : b + 1].tolist()) for a, b in runs]


def cd_export(table: RankTable) -> dict:
    cliques = table.cliques()
    return {
        "alpha": table.alpha,
        "N": table.N,
        "k": table.k,
        "friedman_chi2": table.friedman_stat,
        # undefined (division by zero) when every block ranks identically
        "iman_davenport_F": table.iman_davenport if math.isfinite(table.iman_davenport) else None,
        "cd": table.cd,
        "cliques": [[table.methods[i] for i in c] for c in cliques],
        "methods": [
            {
                "method": table.methods[j],
                "avg_rank": float(table.avg_ranks[j]),
                "clique_memberships": [ci for ci, c in enumerate(cliques) if j in c],
            }
            for j in range(table.k)
        ],
    }
