"""Closed-form relative-centrality scores over a Gaussian effect-size posterior.

For each variable j, the score is the KL divergence between the marginal
posterior of the remaining effects and their conditional posterior given
that effect j is pinned to zero. Two algebraically equivalent routes are
provided: a naive one built literally from submatrices (one dense inverse
per variable, O(p^4) total) and a fast one driven entirely by diagonal
entries of the covariance and its inverse (O(p^3) total). The same
divergence generalizes from single indices to index sets, which ranks
named groups of features, and the trace/log-det part alone yields the
mutual information between effect j and the rest.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ratekit.core import DEFAULT_JITTER, chol_spd, gram
from ratekit.esa import EffectSizePosterior

__all__ = [
    "PrecisionModel",
    "GroupMap",
    "ImportanceItem",
    "ImportanceReport",
    "InconsistentPrecisionError",
    "build_precision",
    "precision_from_covariance",
    "kld_variable_naive",
    "kld_variable_fast",
    "rate_scores",
    "kld_group",
    "group_rate",
    "mutual_info",
    "report_to_json",
    "report_to_csv",
]

THREADS_ENV_VAR = "RATEKIT_THREADS"


class InconsistentPrecisionError(ArithmeticError):
    """omega_j * lambda_j < 1 signals a covariance/precision pair that is not
    an inverse pair (impossible in exact arithmetic)."""


def _max_workers() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_maybe_parallel(fn, items):
    workers = _max_workers()
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class PrecisionModel:
    """Jittered effect-size covariance, its inverse, and the posterior mean.

    Every downstream score is computed against the same jittered ``omega``
    so the naive and fast routes see identical inputs.
    """

    mu: np.ndarray  # (p,)
    omega: np.ndarray  # (p, p), includes the jitter
    lam: np.ndarray  # (p, p) = omega^{-1}
    jitter: float
    log_det_omega: float
    feature_names: tuple[str, ...] = ()

    @property
    def p(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class GroupMap:
    """Named, non-empty index sets over the p features."""

    groups: dict[str, tuple[int, ...]]

    @staticmethod
    def from_indices(groups: dict, p: int) -> "GroupMap":
        clean: dict[str, tuple[int, ...]] = {}
        for name, idx in groups.items():
            members = tuple(sorted(set(int(j) for j in idx)))
            if not members:
                raise ValueError(f"group {name!r} is empty")
            if members[0] < 0 or members[-1] >= p:
                raise ValueError(f"group {name!r} has indices outside [0, {p})")
            if len(members) >= p:
                raise ValueError(f"group {name!r} has an empty complement")
            clean[name] = members
        return GroupMap(groups=clean)

    @staticmethod
    def from_names(groups: dict, feature_names) -> "GroupMap":
        """Resolve feature names to indices; unknown names are hard errors."""
        positions = {name: j for j, name in enumerate(feature_names)}
        resolved = {}
        for gname, members in groups.items():
            idx = []
            for feat in members:
                if feat not in positions:
                    raise ValueError(f"group {gname!r} names unknown feature {feat!r}")
                idx.append(positions[feat])
            resolved[gname] = idx
        return GroupMap.from_indices(resolved, len(positions))


@dataclass(frozen=True)
class ImportanceItem:
    name: str
    kld: float
    rate: float
    sign: int
    significant: bool
    mi: float | None = None
    members: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ImportanceReport:
    items: tuple[ImportanceItem, ...]
    threshold: float
    degenerate: bool = False

    def ranked(self) -> list[ImportanceItem]:
        return sorted(self.items, key=lambda it: it.rate, reverse=True)

    def rates(self) -> np.ndarray:
        return np.array([it.rate for it in self.items])

    def klds(self) -> np.ndarray:
        return np.array([it.kld for it in self.items])


def precision_from_covariance(
    mu, omega, base_jitter: float = DEFAULT_JITTER, feature_names=None
) -> PrecisionModel:
    """Build the jittered covariance/precision pair from raw moments."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    p = mu.shape[0]
    if p < 2:
        raise ValueError("need at least 2 variables")
    factor = chol_spd(omega, base_jitter)
    omega_t = np.asarray(omega, dtype=np.float64)
    omega_t = 0.5 * (omega_t + omega_t.T) + factor.jitter_used * np.eye(p)
    lam = factor.inverse()
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"f{j + 1}" for j in range(p)
    )
    if len(names) != p:
        raise ValueError("feature_names length does not match mu")
    model = PrecisionModel(
        mu=mu,
        omega=omega_t,
        lam=lam,
        jitter=factor.jitter_used,
        log_det_omega=factor.log_det,
        feature_names=names,
    )
    if np.any(np.diagonal(model.omega) <= 0) or np.any(np.diagonal(model.lam) <= 0):
        raise InconsistentPrecisionError("covariance or precision has a nonpositive diagonal")
    return model


def build_precision(
    esa: EffectSizePosterior, base_jitter: float = DEFAULT_JITTER, class_index: int = 0
) -> PrecisionModel:
    """Materialize Omega = G G^T (+ jitter if singular) and its inverse."""
    return precision_from_covariance(
        esa.mu[class_index],
        gram(esa.factors[class_index]),
        base_jitter=base_jitter,
        feature_names=esa.feature_names,
    )


def _submatrix(a: np.ndarray, keep: np.ndarray) -> np.ndarray:
    return a[np.ix_(keep, keep)]


def kld_variable_naive(pm: PrecisionModel, j: int) -> float:
    """Centrality of variable j built literally from submatrices.

    0.5 [ tr(Omega_-j Lambda_-j) - log|Omega_-j Lambda_-j| - (p-1)
          + delta_j mu_j^2 ],   delta_j = lambda_-j^T Lambda_-j^{-1} lambda_-j,
    the effect of variable j being conditioned to zero.
    """
    p = pm.p
    if p < 2:
        raise ValueError("need at least 2 variables")
    if not 0 <= j < p:
        raise IndexError(f"variable index {j} out of range [0, {p})")
    keep = np.arange(p) != j
    omega_mj = _submatrix(pm.omega, keep)
    lam_mj = _submatrix(pm.lam, keep)
    lam_off = pm.lam[keep, j]

    trace = float(np.sum(omega_mj * lam_mj))  # both symmetric
    f_omega = chol_spd(omega_mj, 0.0)
    f_lam = chol_spd(lam_mj, 0.0)
    log_det = f_omega.log_det + f_lam.log_det
    delta = float(lam_off @ f_lam.solve(lam_off))
    kld = 0.5 * (trace - log_det - (p - 1) + delta * pm.mu[j] ** 2)
    return max(kld, 0.0)


def kld_variable_fast(pm: PrecisionModel, j: int) -> float:
    """Same divergence via diagonal identities: O(1) once Lambda is known.

    With Lambda = Omega^{-1} exactly, tr(Omega_-j Lambda_-j) = p - 2 +
    omega_j lambda_j, log|Omega_-j Lambda_-j| = log(omega_j lambda_j), and
    delta_j = lambda_j - 1/omega_j.
    """
    omega_j = pm.omega[j, j]
    lam_j = pm.lam[j, j]
    a = omega_j * lam_j
    if a < 1.0 - 1e-9:
        raise InconsistentPrecisionError(
            f"omega_j * lambda_j = {a:.12f} < 1 at variable {j}; "
            "covariance and precision are not an inverse pair"
        )
    a = max(a, 1.0)
    delta = max(lam_j - 1.0 / omega_j, 0.0)
    kld = 0.5 * (a - 1.0 - math.log(a) + delta * pm.mu[j] ** 2)
    return max(kld, 0.0)


def _mutual_info_from_diag(omega_j: float, lam_j: float, j: int) -> float:
    a = omega_j * lam_j
    if a < 1.0 - 1e-9:
        raise InconsistentPrecisionError(
            f"omega_j * lambda_j = {a:.12f} < 1 at variable {j}; "
            "covariance and precision are not an inverse pair"
        )
    return 0.5 * math.log(max(a, 1.0))


def mutual_info(pm: PrecisionModel, j: int) -> float:
    """Gaussian mutual information between effect j and the remaining effects,
    0.5 log(omega_j |Omega_-j| / |Omega|) = 0.5 log(omega_j lambda_j)."""
    return _mutual_info_from_diag(pm.omega[j, j], pm.lam[j, j], j)


def _normalize(names, klds, signs, mis, members=None):
    klds = np.asarray(klds, dtype=np.float64)
    total = float(klds.sum())
    n_items = len(klds)
    threshold = 1.0 / n_items
    degenerate = total <= 0.0
    rates = np.full(n_items, threshold) if degenerate else klds / total
    items = []
    for i, name in enumerate(names):
        items.append(
            ImportanceItem(
                name=name,
                kld=float(klds[i]),
                rate=float(rates[i]),
                sign=int(signs[i]),
                significant=bool(rates[i] > threshold),
                mi=None if mis is None else float(mis[i]),
                members=None if members is None else tuple(members[i]),
            )
        )
    return ImportanceReport(items=tuple(items), threshold=threshold, degenerate=degenerate)


def rate_scores(pm: PrecisionModel, path: str = "fast") -> ImportanceReport:
    """Per-variable normalized centrality, plus sign and mutual information.

    ``path`` selects the naive or fast route; the two agree to round-off and
    the tests hold them to 1e-8 relative. If every divergence is zero the
    report is flagged degenerate and scores are uniform.
    """
    if path not in ("naive", "fast"):
        raise ValueError(f"unknown path: {path!r}")
    p = pm.p
    if path == "fast":
        klds = [kld_variable_fast(pm, j) for j in range(p)]
    else:
        klds = _map_maybe_parallel(lambda j: kld_variable_naive(pm, j), range(p))
    mis = [mutual_info(pm, j) for j in range(p)]
    signs = np.sign(pm.mu).astype(int)
    return _normalize(pm.feature_names, klds, signs, mis)


def kld_group(pm: PrecisionModel, indices) -> float:
    """Centrality of an index set J: KL between the marginal posterior of the
    complement and its conditional given the J-effects pinned to zero.

    0.5 [ tr(Omega_-J Lambda_-J) - log|Omega_-J Lambda_-J| - (p-m)
          + mu_J^T Delta_J mu_J ],
    Delta_J = Lambda_{J,-J} Lambda_-J^{-1} Lambda_{-J,J}.
    """
    p = pm.p
    idx = np.asarray(sorted(set(int(j) for j in indices)), dtype=int)
    if idx.size == 0:
        raise ValueError("group is empty")
    if idx[0] < 0 or idx[-1] >= p:
        raise IndexError(f"group indices outside [0, {p})")
    m = idx.size
    if m >= p:
        raise ValueError("group complement is empty")
    keep = np.ones(p, dtype=bool)
    keep[idx] = False

    omega_mj = _submatrix(pm.omega, keep)
    lam_mj = _submatrix(pm.lam, keep)
    lam_cross = pm.lam[np.ix_(keep, idx)]  # (p-m, m)

    trace = float(np.sum(omega_mj * lam_mj))
    f_omega = chol_spd(omega_mj, 0.0)
    f_lam = chol_spd(lam_mj, 0.0)
    log_det = f_omega.log_det + f_lam.log_det
    delta = lam_cross.T @ f_lam.solve(lam_cross)  # (m, m)
    quad = float(pm.mu[idx] @ delta @ pm.mu[idx])
    kld = 0.5 * (trace - log_det - (p - m) + quad)
    return max(kld, 0.0)


def group_rate(pm: PrecisionModel, groups: GroupMap) -> ImportanceReport:
    """Normalized centrality over the provided groups only.

    Overlapping groups are allowed (with a warning); the group sign is the
    direction of the summed mean effect over its members.
    """
    if len(groups.groups) < 2:
        raise ValueError("need at least 2 groups to rank")
    seen: set[int] = set()
    overlapping = False
    for members in groups.groups.values():
        if seen.intersection(members):
            overlapping = True
        seen.update(members)
    if overlapping:
        warnings.warn("groups overlap; scores are normalized as provided", stacklevel=2)

    names = list(groups.groups)
    klds = _map_maybe_parallel(lambda name: kld_group(pm, groups.groups[name]), names)
    signs = [int(np.sign(np.sum(pm.mu[list(groups.groups[name])]))) for name in names]
    members = [
        tuple(pm.feature_names[j] for j in groups.groups[name]) for name in names
    ]
    return _normalize(names, klds, signs, mis=None, members=members)


def report_to_json(report: ImportanceReport) -> str:
    items = []
    for it in report.items:
        entry = {
            "name": it.name,
            "kld": it.kld,
            "rate": it.rate,
            "sign": it.sign,
            "mi": it.mi,
            "significant": it.significant,
        }
        if it.members is not None:
            entry["members"] = list(it.members)
        items.append(entry)
    doc = {
        "items": items,
        "threshold": report.threshold,
        "degenerate": report.degenerate,
    }
    return json.dumps(doc, sort_keys=True)


def report_to_csv(report: ImportanceReport, path) -> None:
    has_members = any(it.members is not None for it in report.items)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["name", "kld", "rate", "sign", "mi", "significant"]
        if has_members:
            header.append("members")
        writer.writerow(header)
        for it in report.items:
            row = [
                it.name,
                repr(it.kld),
                repr(it.rate),
                it.sign,
                "" if it.mi is None else repr(it.mi),
                int(it.significant),
            ]
            if has_members:
                row.append("" if it.members is None else ";".join(it.members))
            writer.writerow(row)
