"""OLS fits and variable-importance decompositions over regressor subsets.

Everything R²-based (commonality, dominance, LMG) is computed from one
table of R² values for all ``2**k`` regressor subsets, indexed by bitmask:
bit ``i`` set means regressor ``i`` is in the model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .errors import NumericalError, SingularDesignError, ValidationError, ZeroVarianceError

MAX_SUBSET_REGRESSORS = 20
TIE_TOL = 1e-10


def stars(p):
    """Significance marks: ``**`` for p < 0.01, ``*`` for p < 0.05."""
    if p is None or not np.isfinite(p):
        return ""
    return "**" if p < 0.01 else "*" if p < 0.05 else ""


def adjusted_r2(r2, n, k):
    return 1.0 - (1.0 - r2) * (n - 1) / (n - k - 1)


def r2_from_adjusted(r2_adj, n, k):
    """Invert :func:`adjusted_r2`."""
    return 1.0 - (1.0 - r2_adj) * (n - k - 1) / (n - 1)


@dataclass(frozen=True)
class DesignSpec:
    """Target vector and regressor matrix for one OLS model (intercept implied)."""

    target: str
    regressors: tuple
    y: np.ndarray
    X: np.ndarray
    rows: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValidationError("y must be 1-d with one row of X per observation")
        if X.shape[1] != len(self.regressors):
            raise ValidationError("one regressor name per column of X is required")
        if len(set(self.regressors)) != len(self.regressors):
            raise ValidationError("regressor names must be unique")
        n, k = X.shape
        if k < 1:
            raise ValidationError("at least one regressor is required")
        if n < k + 2:
            raise ValidationError(f"{n} observations for {k} regressors; need at least {k + 2}")
        if not (np.isfinite(y).all() and np.isfinite(X).all()):
            raise ValidationError("design contains missing or non-finite values")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "rows", tuple(self.rows))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def k(self):
        return self.X.shape[1]

    @classmethod
    def from_frame(cls, df: pd.DataFrame, target, regressors):
        """Build from DataFrame columns; rows with a missing value in any used column are dropped."""
        cols = [target, *regressors]
        missing = [c for c in cols if c not in df.columns]
        if missing:
            raise ValidationError(f"unknown columns: {missing}")
        sub = df[cols].dropna()
        return cls(target, tuple(regressors), sub[target].to_numpy(), sub[list(regressors)].to_numpy(), tuple(sub.index))

    @classmethod
    def from_arrays(cls, X, y, names=None, target="y"):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        names = names or [f"x{i}" for i in range(X.shape[1])]
        return cls(target, tuple(names), y, X)


# ---------------------------------------------------------------------------
# OLS


@dataclass(frozen=True)
class OLSResult:
    regressors: tuple
    coef: np.ndarray
    se: np.ndarray
    ci: np.ndarray
    p_values: np.ndarray
    intercept: float
    intercept_se: float
    intercept_ci: tuple
    intercept_p: float
    r2: float
    r2_adj: float
    fitted: np.ndarray
    n: int
    k: int

    @property
    def df_resid(self):
        return self.n - self.k - 1

    @property
    def stars(self):
        return tuple(stars(p) for p in self.p_values)


def _collinear_columns(A, names):
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    tol = s.max() * max(A.shape) * np.finfo(float).eps
    null = vt[s <= tol]
    involved = np.abs(null).max(axis=0) > 1e-8 if len(null) else np.zeros(A.shape[1], bool)
    return [nm for nm, hit in zip(names, involved) if hit]


def ols_fit(spec: DesignSpec, alpha=0.05) -> OLSResult:
    """Least-squares fit with intercept and t-based inference.

    Confidence intervals and two-sided p-values use the t distribution with
    ``n - k - 1`` degrees of freedom under homoskedastic errors.

    Raises
    ------
    SingularDesignError
        The design (intercept included) is rank deficient; the message names
        the columns involved in the linear dependence.
    ZeroVarianceError
        The target is constant.
    """
    y, X = spec.y, spec.X
    n, k = X.shape
    A = np.column_stack([np.ones(n), X])
    names = ["(intercept)", *spec.regressors]
    if np.linalg.matrix_rank(A) < k + 1:
        cols = _collinear_columns(A, names)
        raise SingularDesignError(f"collinear design columns: {', '.join(cols)}", cols)
    yc = y - y.mean()
    sst = float(yc @ yc)
    if sst == 0:
        raise ZeroVarianceError(f"target {spec.target} is constant")

    q, r = np.linalg.qr(A)
    beta = np.linalg.solve(r, q.T @ y)
    fitted = A @ beta
    resid = y - fitted
    sse = float(resid @ resid)
    df = n - k - 1
    sigma2 = sse / df
    rinv = np.linalg.solve(r, np.eye(k + 1))
    cov = sigma2 * (rinv @ rinv.T)
    se = np.sqrt(np.diag(cov))
    tcrit = stats.t.ppf(1 - alpha / 2, df)
    with np.errstate(divide="ignore", invalid="ignore"):
        tval = beta / se
    p = 2 * stats.t.sf(np.abs(tval), df)
    p = np.where(se == 0, np.where(beta == 0, 1.0, 0.0), p)
    ci = np.column_stack([beta - tcrit * se, beta + tcrit * se])
    r2 = 1.0 - sse / sst
    return OLSResult(
        regressors=spec.regressors,
        coef=beta[1:],
        se=se[1:],
        ci=ci[1:],
        p_values=p[1:],
        intercept=float(beta[0]),
        intercept_se=float(se[0]),
        intercept_ci=(float(ci[0, 0]), float(ci[0, 1])),
        intercept_p=float(p[0]),
        r2=r2,
        r2_adj=adjusted_r2(r2, n, k),
        fitted=fitted,
        n=n,
        k=k,
    )


def _sd(v, name):
    s = float(np.std(v, ddof=1))
    if not s > 0:
        raise ZeroVarianceError(f"{name} has zero variance")
    return s


def beta_weights(spec: DesignSpec, fit: OLSResult | None = None) -> np.ndarray:
    """Standardized coefficients ``b_i * sd(x_i) / sd(y)``."""
    fit = fit or ols_fit(spec)
    sx = np.array([_sd(spec.X[:, i], nm) for i, nm in enumerate(spec.regressors)])
    return fit.coef * sx / _sd(spec.y, spec.target)


def zero_order_correlations(spec: DesignSpec) -> np.ndarray:
    sy = _sd(spec.y, spec.target)
    yc = spec.y - spec.y.mean()
    out = np.empty(spec.k)
    for i, nm in enumerate(spec.regressors):
        x = spec.X[:, i]
        sx = _sd(x, nm)
        out[i] = ((x - x.mean()) @ yc) / ((spec.n - 1) * sx * sy)
    return np.clip(out, -1.0, 1.0)


def structure_coefficients(spec: DesignSpec, fit: OLSResult | None = None) -> np.ndarray:
    """Correlation of each regressor with the fitted values, ``r_xy / R``."""
    fit = fit or ols_fit(spec)
    if not fit.r2 > 0:
        raise NumericalError("structure coefficients undefined: R = 0")
    return np.clip(zero_order_correlations(spec) / math.sqrt(fit.r2), -1.0, 1.0)


# ---------------------------------------------------------------------------
# All-subsets R²


@dataclass(frozen=True)
class SubsetR2Table:
    """R² of every regressor subset.

    Attributes
    ----------
    regressors : tuple of str
    r2 : ndarray (2**k,)
        ``r2[mask]``; ``r2[0] == 0``.
    degenerate : ndarray of bool (2**k,)
        Subset design was rank deficient; its R² comes from the
        minimum-norm least-squares solution.
    """

    regressors: tuple
    r2: np.ndarray
    degenerate: np.ndarray

    @property
    def k(self):
        return len(self.regressors)

    @property
    def full(self):
        return (1 << self.k) - 1

    def mask(self, subset):
        m = 0
        for s in subset:
            i = self.regressors.index(s) if isinstance(s, str) else int(s)
            m |= 1 << i
        return m

    def names(self, mask):
        return tuple(nm for i, nm in enumerate(self.regressors) if mask >> i & 1)

    def __getitem__(self, subset):
        m = subset if isinstance(subset, (int, np.integer)) else self.mask(subset)
        return float(self.r2[m])

    def as_dict(self):
        return {self.names(m): float(v) for m, v in enumerate(self.r2)}


def all_subsets_r2(spec: DesignSpec) -> SubsetR2Table:
    """One least-squares solve per regressor subset (``2**k`` models, intercept always in)."""
    k = spec.k
    if k > MAX_SUBSET_REGRESSORS:
        raise ValidationError(f"all-subsets analysis limited to {MAX_SUBSET_REGRESSORS} regressors")
    Xc = spec.X - spec.X.mean(axis=0)
    yc = spec.y - spec.y.mean()
    sst = float(yc @ yc)
    if sst == 0:
        raise ZeroVarianceError(f"target {spec.target} is constant")
    r2 = np.zeros(1 << k)
    degenerate = np.zeros(1 << k, dtype=bool)
    for m in range(1, 1 << k):
        cols = [i for i in range(k) if m >> i & 1]
        sub = Xc[:, cols]
        coef, _, rank, _ = np.linalg.lstsq(sub, yc, rcond=None)
        resid = yc - sub @ coef
        r2[m] = 1.0 - float(resid @ resid) / sst
        degenerate[m] = rank < len(cols)
    r2.setflags(write=False)
    degenerate.setflags(write=False)
    return SubsetR2Table(spec.regressors, r2, degenerate)


def _popcount(masks):
    masks = np.asarray(masks, dtype=np.int64)
    out = np.zeros_like(masks)
    while masks.any():
        out += masks & 1
        masks = masks >> 1
    return out


# ---------------------------------------------------------------------------
# Commonality


@dataclass(frozen=True)
class CommonalityResult:
    """Commonality coefficients.

    Attributes
    ----------
    components : ndarray (2**k,)
        ``components[mask]`` is the variance common to exactly the
        regressors in `mask` (index 0 unused, 0).
    unique, common, total : ndarray (k,)
        ``U_CA``, ``C_CA``, ``Tot_CA`` per regressor.
    """

    regressors: tuple
    components: np.ndarray
    unique: np.ndarray
    common: np.ndarray
    total: np.ndarray

    def component(self, subset_names):
        m = 0
        for s in subset_names:
            m |= 1 << self.regressors.index(s)
        return float(self.components[m])


def commonality(table: SubsetR2Table) -> CommonalityResult:
    """Commonality decomposition of the full-model R².

    ``C(S) = sum_{T ⊆ S} (-1)**(|T|+1) R²((V \\ S) ∪ T)``, evaluated for all
    ``S`` at once with a subset-sum (zeta) transform over bitmasks.
    """
    k = table.k
    full = table.full
    masks = np.arange(1 << k, dtype=np.int64)
    sign = np.where(_popcount(masks) % 2 == 0, 1.0, -1.0)
    g = sign * table.r2[full ^ masks]
    for b in range(k):
        bit = 1 << b
        has = (masks & bit) != 0
        g[has] += g[masks[has] ^ bit]
    comp = -sign * g
    comp[0] = 0.0
    size = _popcount(masks)
    unique = np.array([comp[1 << i] for i in range(k)])
    common = np.array([comp[((masks >> i) & 1).astype(bool) & (size >= 2)].sum() for i in range(k)])
    comp.setflags(write=False)
    return CommonalityResult(table.regressors, comp, unique, common, unique + common)


# ---------------------------------------------------------------------------
# LMG and dominance


def increments(table: SubsetR2Table):
    """``delta[i, mask] = R²(mask ∪ {i}) - R²(mask)`` (NaN where ``i`` ∈ mask)."""
    k = table.k
    masks = np.arange(1 << k)
    out = np.full((k, 1 << k), np.nan)
    for i in range(k):
        without = masks[(masks >> i & 1) == 0]
        out[i, without] = table.r2[without | (1 << i)] - table.r2[without]
    return out


def lmg(table: SubsetR2Table) -> np.ndarray:
    """LMG importance: increment averaged over all regressor orderings.

    ``LMG(i) = sum_{S ⊆ V \\ {i}} |S|! (k-|S|-1)! / k! * (R²(S ∪ {i}) - R²(S))``;
    the values sum to the full-model R².
    """
    k = table.k
    delta = increments(table)
    size = _popcount(np.arange(1 << k))
    w = np.array([math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) if s < k else 0.0 for s in size])
    out = np.empty(k)
    for i in range(k):
        ok = ~np.isnan(delta[i])
        out[i] = float((w[ok] * delta[i, ok]).sum())
    return out


def _verdict(diffs, tol):
    diffs = np.asarray(diffs)
    if (diffs >= -tol).all() and (diffs > tol).any():
        return 1
    if (diffs <= tol).all() and (diffs < -tol).any():
        return -1
    return 0


@dataclass(frozen=True)
class DominanceResult:
    """Pairwise dominance verdicts.

    Verdict dictionaries map ``(a, b)`` (regressor names, in regressor
    order) to the dominating name, or ``None`` when dominance cannot be
    established.

    Attributes
    ----------
    conditional_averages : ndarray (k, k)
        ``[i, s]``: mean increment of regressor ``i`` over models of size
        ``s`` without it.
    general_weights : ndarray (k,)
        Mean of the conditional averages over sizes (equals LMG).
    """

    regressors: tuple
    complete: dict
    conditional: dict
    general: dict
    conditional_averages: np.ndarray
    general_weights: np.ndarray
    tol: float = TIE_TOL

    def verdict_grid(self):
        """Rows ``(a, b, complete, conditional, general)`` with ✓ (a dominates b), × (b dominates a) or ''."""
        rows = []
        for (a, b) in self.complete:
            marks = []
            for d in (self.complete, self.conditional, self.general):
                w = d[(a, b)]
                marks.append("" if w is None else "✓" if w == a else "×")
            rows.append((a, b, *marks))
        return rows


def dominance(table: SubsetR2Table, tol=TIE_TOL) -> DominanceResult:
    """Complete, conditional and general dominance for every regressor pair.

    Differences within `tol` count as ties. ``i`` dominates ``j`` at a level
    when its quantity is never smaller and strictly larger at least once:

    * complete: ``Δ(i|S)`` vs ``Δ(j|S)`` for every ``S ⊆ V \\ {i, j}``;
    * conditional: size-``s`` averages of ``Δ(i|S)`` over ``S ⊆ V \\ {i}``,
      for every ``s``;
    * general: the mean of the conditional averages.
    """
    k = table.k
    names = table.regressors
    delta = increments(table)
    masks = np.arange(1 << k)
    size = _popcount(masks)
    cond = np.zeros((k, k))
    for i in range(k):
        for s in range(k):
            sel = (size == s) & ~np.isnan(delta[i])
            cond[i, s] = delta[i, sel].mean()
    gd = cond.mean(axis=1)

    complete, conditional, general = {}, {}, {}
    for i in range(k):
        for j in range(i + 1, k):
            pair = (names[i], names[j])
            shared = (masks >> i & 1 == 0) & (masks >> j & 1 == 0)
            pick = {1: names[i], -1: names[j], 0: None}
            complete[pair] = pick[_verdict(delta[i, shared] - delta[j, shared], tol)]
            conditional[pair] = pick[_verdict(cond[i] - cond[j], tol)]
            g = gd[i] - gd[j]
            general[pair] = names[i] if g > tol else names[j] if g < -tol else None
    return DominanceResult(names, complete, conditional, general, cond, gd, tol)


# ---------------------------------------------------------------------------
# Correlations


def correlation_matrix(df: pd.DataFrame, columns=None):
    """Pearson r and r² for every pair of `columns` (rows with NaN dropped).

    Returns
    -------
    r, r2 : DataFrame
        Symmetric, unit diagonal.
    """
    columns = list(columns if columns is not None else df.columns)
    if len(columns) < 2:
        raise ValidationError("correlation matrix needs at least 2 variables")
    data = df[columns].dropna().to_numpy(dtype=np.float64)
    sd = data.std(axis=0)
    if (sd == 0).any():
        bad = [c for c, s in zip(columns, sd) if s == 0]
        raise ZeroVarianceError(f"zero-variance columns: {bad}")
    z = (data - data.mean(axis=0)) / sd
    r = (z.T @ z) / len(data)
    r = np.clip((r + r.T) / 2, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    r = pd.DataFrame(r, index=columns, columns=columns)
    return r, r * r


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class ImportanceReport:
    target: str
    spec: DesignSpec
    fit: OLSResult
    beta: np.ndarray
    structure: np.ndarray
    zero_order: np.ndarray
    subsets: SubsetR2Table
    commonality: CommonalityResult
    lmg: np.ndarray
    dominance: DominanceResult
    notes: list = field(default_factory=list)

    @property
    def lmg_share(self):
        return self.lmg / self.fit.r2 if self.fit.r2 > 0 else np.full_like(self.lmg, np.nan)

    def regressor_rows(self):
        rows = []
        for i, nm in enumerate(self.spec.regressors):
            rows.append(
                {
                    "regressor": nm,
                    "b": float(self.fit.coef[i]),
                    "se": float(self.fit.se[i]),
                    "ci_low": float(self.fit.ci[i, 0]),
                    "ci_high": float(self.fit.ci[i, 1]),
                    "p_value": float(self.fit.p_values[i]),
                    "stars": self.fit.stars[i],
                    "beta": float(self.beta[i]),
                    "r": float(self.zero_order[i]),
                    "r_s": float(self.structure[i]),
                    "U_CA": float(self.commonality.unique[i]),
                    "C_CA": float(self.commonality.common[i]),
                    "Tot_CA": float(self.commonality.total[i]),
                    "LMG": float(self.lmg[i]),
                    "LMG_share": float(self.lmg_share[i]),
                }
            )
        return rows

    def to_dict(self):
        t = self.subsets
        return {
            "target": self.target,
            "n": self.fit.n,
            "k": self.fit.k,
            "regions": list(self.spec.rows),
            "R2": self.fit.r2,
            "R2_adj": self.fit.r2_adj,
            "intercept": {
                "b": self.fit.intercept,
                "se": self.fit.intercept_se,
                "ci_low": self.fit.intercept_ci[0],
                "ci_high": self.fit.intercept_ci[1],
                "p_value": self.fit.intercept_p,
            },
            "regressors": self.regressor_rows(),
            "subset_r2": [
                {"subset": list(t.names(m)), "R2": float(t.r2[m]), "degenerate": bool(t.degenerate[m])}
                for m in range(len(t.r2))
            ],
            "commonality_components": [
                {"subset": list(t.names(m)), "C": float(self.commonality.components[m])}
                for m in range(1, len(t.r2))
            ],
            "dominance": {
                "conditional_averages": {
                    nm: [float(v) for v in self.dominance.conditional_averages[i]]
                    for i, nm in enumerate(t.regressors)
                },
                "general_weights": {nm: float(v) for nm, v in zip(t.regressors, self.dominance.general_weights)},
                "pairs": [
                    {
                        "a": a,
                        "b": b,
                        "complete": self.dominance.complete[(a, b)],
                        "conditional": self.dominance.conditional[(a, b)],
                        "general": self.dominance.general[(a, b)],
                    }
                    for (a, b) in self.dominance.complete
                ],
                "tie_tolerance": self.dominance.tol,
            },
            "notes": list(self.notes),
        }


def importance_report(spec: DesignSpec) -> ImportanceReport:
    """Fit `spec` and run every importance measure on it."""
    fit = ols_fit(spec)
    table = all_subsets_r2(spec)
    return ImportanceReport(
        target=spec.target,
        spec=spec,
        fit=fit,
        beta=beta_weights(spec, fit),
        structure=structure_coefficients(spec, fit),
        zero_order=zero_order_correlations(spec),
        subsets=table,
        commonality=commonality(table),
        lmg=lmg(table),
        dominance=dominance(table),
    )


SUMMARY_COLUMNS = [
    "target", "regressor", "b", "ci_low", "ci_high", "p_value", "stars", "beta",
    "r_s", "U_CA", "C_CA", "Tot_CA", "LMG", "LMG_share", "R2", "R2_adj", "n",
]


def _cell(v):
    if isinstance(v, float):
        return "" if not np.isfinite(v) else repr(v)
    return v


def write_importance_summary(reports, path):
    """Table-style CSV: one row per (target, regressor)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for rep in reports:
            for row in rep.regressor_rows():
                row = {**row, "target": rep.target, "R2": rep.fit.r2, "R2_adj": rep.fit.r2_adj, "n": rep.fit.n}
                w.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])


def write_dominance_csv(reports, path):
    """Verdict grid per target: ``target,a,b,complete,conditional,general``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "a", "b", "complete", "conditional", "general"])
        for rep in reports:
            for row in rep.dominance.verdict_grid():
                w.writerow([rep.target, *row])


def write_correlation_csv(r: pd.DataFrame, path):
    """Long format ``var_a,var_b,r,r2`` over the upper triangle incl. diagonal."""
    cols = list(r.columns)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["var_a", "var_b", "r", "r2"])
        for i, a in enumerate(cols):
            for b in cols[i:]:
                v = float(r.loc[a, b])
                w.writerow([a, b, repr(v), repr(v * v)])
