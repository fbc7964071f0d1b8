"""Scoring utilities: adjusted mutual information, edge precision/recall,
metric reduction ratio."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .causality import DependencyGraph
from .clustering import ClusterModel


class EvaluateError(ValueError):
    pass


def _contingency(a: dict, b: dict) -> np.ndarray:
    items = sorted(a)
    labels_a = sorted({a[i] for i in items})
    labels_b = sorted({b[i] for i in items})
    index_a = {l: i for i, l in enumerate(labels_a)}
    index_b = {l: i for i, l in enumerate(labels_b)}
    table = np.zeros((len(labels_a), len(labels_b)), dtype=np.int64)
    for item in items:
        table[index_a[a[item]], index_b[b[item]]] += 1
    return table


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log(p)))


def _mutual_information(table: np.ndarray) -> float:
    n = table.sum()
    rows = table.sum(axis=1)
    cols = table.sum(axis=0)
    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            nij = table[i, j]
            if nij == 0:
                continue
            mi += (nij / n) * np.log(n * nij / (rows[i] * cols[j]))
    return float(mi)


def _expected_mi(table: np.ndarray) -> float:
    """E[MI] over the hypergeometric model of random contingency tables with
    the observed marginals."""
    n = int(table.sum())
    rows = table.sum(axis=1).astype(np.int64)
    cols = table.sum(axis=0).astype(np.int64)
    lgn = gammaln(np.arange(n + 2))  # lgn[k] = log((k-1)!)
    emi = 0.0
    for ai in rows:
        for bj in cols:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                log_term = (
                    lgn[ai + 1] - lgn[nij + 1] - lgn[ai - nij + 1]
                    + lgn[n - ai + 1] - lgn[bj - nij + 1] - lgn[n - ai - bj + nij + 1]
                    - (lgn[n + 1] - lgn[bj + 1] - lgn[n - bj + 1])
                )
                emi += (nij / n) * np.log(n * nij / (ai * bj)) * np.exp(log_term)
    return float(emi)


def ami(a: dict, b: dict) -> float:
    """Adjusted mutual information between two labelings of the same items.

    Chance-corrected with the hypergeometric expected MI and normalized by the
    arithmetic mean of the two entropies: (MI - E[MI]) / (mean(Ha, Hb) - E[MI]).
    Identical partitions (up to label renaming) score 1.0; independent random
    labelings score near 0.
    """
    if set(a) != set(b):
        raise EvaluateError("label assignments must cover the same items")
    if not a:
        raise EvaluateError("label assignments are empty")
    table = _contingency(a, b)
    if table.shape == (1, 1):
        return 1.0  # both sides a single cluster: trivially identical
    h_a = _entropy(table.sum(axis=1))
    h_b = _entropy(table.sum(axis=0))
    mi = _mutual_information(table)
    emi = _expected_mi(table)
    normalizer = 0.5 * (h_a + h_b)
    denom = normalizer - emi
    if abs(denom) < 1e-15:
        denom = 1e-15 if denom >= 0 else -1e-15
    return float((mi - emi) / denom)


def edge_prf(truth: DependencyGraph, inferred: DependencyGraph) -> tuple[float, float, float]:
    """Precision/recall/F1 over directed component pairs.

    An empty inferred graph reports precision 0 by convention.
    """
    true_pairs = truth.component_pairs()
    got_pairs = inferred.component_pairs()
    tp = len(true_pairs & got_pairs)
    precision = tp / len(got_pairs) if got_pairs else 0.0
    recall = tp / len(true_pairs) if true_pairs else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def reduction_ratio(total_metrics: int | list, models: list[ClusterModel]) -> float:
    """Total metrics divided by total representatives across all models."""
    if not isinstance(total_metrics, int):
        total_metrics = len(total_metrics)
    reps = sum(len(m.representatives) for m in models)
    if reps == 0:
        raise EvaluateError("models carry no representatives")
    return total_metrics / reps
