"""Scoring harness: ROC/AUC for importance rankings, shuffle-degradation
curves, and the marginal correlation / t-test baselines.

The Student-t tail probability is evaluated in-repo through the regularized
incomplete beta function (continued fraction), checked against a quadrature
oracle in the tests.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ratekit.bnn import Network, predict_proba

__all__ = [
    "RocCurve",
    "DegradationCurve",
    "roc_auc",
    "shuffle_degradation",
    "marginal_correlation",
    "ttest_stats",
    "student_t_sf_two_sided",
    "roc_curve_to_csv",
    "degradation_curve_to_csv",
]

THREADS_ENV_VAR = "RATEKIT_THREADS"


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept over score thresholds; first point is (0, 0)."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


@dataclass(frozen=True)
class DegradationCurve:
    """Test accuracy as growing top-ranked feature sets are shuffled."""

    fractions: np.ndarray
    mean_accuracy: np.ndarray
    std_accuracy: np.ndarray
    repeats: int


def roc_auc(scores, mask) -> RocCurve:
    """ROC of scores against a boolean ground-truth mask.

    Equal scores collapse into a single threshold, so the curve (and its
    trapezoidal area) is invariant under strictly monotone transforms.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != mask.shape or scores.ndim != 1:
        raise ValueError("scores and mask must be 1-d arrays of equal length")
    n_pos = int(mask.sum())
    n_neg = int((~mask).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("mask must contain at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = mask[order].astype(np.float64)
    # indices where the threshold changes (last element of each tie block)
    distinct = np.nonzero(np.r_[np.diff(sorted_scores) != 0, True])[0]
    tp = np.cumsum(sorted_pos)[distinct]
    fp = (distinct + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, sorted_scores[distinct]]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def _predicted_labels(net: Network, x: np.ndarray) -> np.ndarray:
    probs = predict_proba(net, x)
    if net.config.link == "sigmoid":
        return (probs[:, 0] > 0.5).astype(int)
    return probs.argmax(axis=1)


def _accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(_predicted_labels(net, x) == np.asarray(y).astype(int)))


def shuffle_degradation(
    net: Network,
    test,
    ranking,
    fractions=None,
    repeats: int = 10,
    seed: int = 0,
) -> DegradationCurve:
    """Accuracy drop as the top-ranked feature columns are permuted.

    For each fraction, the rows of each of the top ceil(fraction * p) ranked
    columns are permuted independently (de-correlating those features from
    the labels), the test accuracy is recomputed, and the whole procedure is
    repeated ``repeats`` times with independent permutations.
    """
    if net.config.link == "identity":
        raise ValueError("shuffle degradation requires a classification network")
    x = np.asarray(test.X, dtype=np.float64)
    y = np.asarray(test.y)
    if x.shape[0] == 0:
        raise ValueError("test set is empty")
    p = x.shape[1]
    ranking = np.asarray(ranking, dtype=int)
    if sorted(ranking.tolist()) != list(range(p)):
        raise ValueError("ranking must be a permutation of the feature indices")
    if fractions is None:
        fractions = np.round(np.arange(0.0, 0.5001, 0.05), 10)
    fractions = np.asarray(fractions, dtype=np.float64)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")

    children = np.random.SeedSequence(seed).spawn(repeats)

    def one_repeat(child) -> np.ndarray:
        rng = np.random.default_rng(child)
        accs = np.empty(len(fractions))
        for i, frac in enumerate(fractions):
            n_cols = int(math.ceil(frac * p))
            if n_cols == 0:
                accs[i] = _accuracy(net, x, y)
                continue
            shuffled = x.copy()
            for col in ranking[:n_cols]:
                shuffled[:, col] = shuffled[rng.permutation(x.shape[0]), col]
            accs[i] = _accuracy(net, shuffled, y)
        return accs

    workers = max(1, int(os.environ.get(THREADS_ENV_VAR, "1") or 1))
    if workers == 1:
        rows = [one_repeat(child) for child in children]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one_repeat, children))
    acc = np.stack(rows, axis=1)  # (fractions, repeats)
    if repeats > 1:
        std = acc.std(axis=1, ddof=1)
        # identical repeats (e.g. fraction 0) must report exactly zero spread
        std[acc.max(axis=1) == acc.min(axis=1)] = 0.0
    else:
        std = np.zeros(len(fractions))
    return DegradationCurve(
        fractions=fractions,
        mean_accuracy=acc.mean(axis=1),
        std_accuracy=std,
        repeats=repeats,
    )


def marginal_correlation(x, y) -> np.ndarray:
    """Pearson correlation of every feature column with y; constant columns
    score 0 (with a warning)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 observations")
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc**2, axis=0))
    sy = math.sqrt(float(np.sum(yc**2)))
    denom = sx * sy
    bad = denom == 0
    if np.any(bad):
        warnings.warn("zero-variance column(s) encountered; correlation set to 0", stacklevel=2)
    return np.divide(xc.T @ yc, denom, out=np.zeros(x.shape[1]), where=~bad)


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    max_iter = 300
    eps = 1e-15
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _betainc_regularized(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= t) for T Student-t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    return _betainc_regularized(0.5 * df, 0.5, df / (df + t * t))


def ttest_stats(x, y):
    """Two-sided marginal t-statistics and p-values for each feature column.

    T_j = rho_j sqrt((n-2)/(1-rho_j^2)) with n-2 degrees of freedom; columns
    perfectly correlated with y get t = +/-inf and p = 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n <= 2:
        raise ValueError("need more than 2 observations")
    rho = marginal_correlation(x, y)
    df = n - 2
    one_minus = 1.0 - rho**2
    perfect = one_minus <= 0.0
    t = rho * np.sqrt(df / np.where(perfect, 1.0, one_minus))
    t[perfect] = np.sign(rho[perfect]) * np.inf
    pvals = np.array([student_t_sf_two_sided(abs(tj), df) for tj in t])
    return t, pvals


def roc_curve_to_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "fpr", "tpr"])
        for thr, fp, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
            writer.writerow([repr(float(thr)), repr(float(fp)), repr(float(tp))])


def degradation_curve_to_csv(curve: DegradationCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fraction", "mean_accuracy", "std_accuracy"])
        for frac, mean, std in zip(curve.fractions, curve.mean_accuracy, curve.std_accuracy):
            writer.writerow([repr(float(frac)), repr(float(mean)), repr(float(std))])
