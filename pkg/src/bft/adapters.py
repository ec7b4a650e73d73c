"""Builders that turn raw data or sufficient statistics into engine models.

Every adapter produces one of the model families in :mod:`bft.engine`
(Student-t, matrix-t, variance, correlation, Gaussian) with its default
prior fully determined, so the engine itself never touches data.
"""
from __future__ import annotations

import math

import numpy as np
import pandas as pd

from .distributions import RandomStream, StudentTSpec
from .engine import (
    CorrelationModel,
    GaussianModel,
    MatrixTModel,
    StudentTModel,
    VarianceModel,
)

PRIOR_STREAM_ID = 90_001  # reserved stream for shared correlation prior draws


class DataError(ValueError):
    """Raised when input data cannot support the requested analysis."""


# ---------------------------------------------------------------------------
# t tests


def ttest_model(*, n, mean, sd=None, ss=None, t_stat=None, null=0.0,
                name="mu") -> StudentTModel:
    """One-sample t test on sufficient statistics.

    Exactly one of `sd`, `ss`, `t_stat` fixes the spread.  The posterior for
    the mean is t(n-1) at the sample mean; the default prior is a Cauchy at
    the hypothesis boundary whose scale matches a minimal training fraction
    of the data.
    """
    n = int(n)
    if n < 3:
        raise DataError("one-sample t test needs n >= 3")
    given = [v is not None for v in (sd, ss, t_stat)]
    if sum(given) != 1:
        raise DataError("supply exactly one of sd, ss, or t_stat")
    if t_stat is not None:
        if mean == null and t_stat != 0:
            raise DataError("t statistic inconsistent with mean == null value")
        if t_stat == 0:
            raise DataError("cannot recover a spread from t = 0")
        se = (mean - null) / t_stat
        if se <= 0:
            raise DataError("t statistic has the wrong sign for this mean")
        ss = se * se * n * (n - 1)
    elif sd is not None:
        if sd <= 0:
            raise DataError("sd must be positive")
        ss = sd * sd * (n - 1)
    if ss <= 0:
        raise DataError("sum of squares must be positive")
    post = StudentTSpec(np.array([mean], float),
                        np.array([[ss / ((n - 1) * n)]]), n - 1)
    prior_scale = np.array([[ss / n]])
    return StudentTModel([name], post, prior_scale, 1.0, exploratory_center=null)


def ttest_model_two(*, n1, mean1, ss1, n2, mean2, ss2, null=0.0,
                    name="difference") -> StudentTModel:
    """Two-sample t test (equal variances) on sufficient statistics."""
    n1, n2 = int(n1), int(n2)
    if min(n1, n2) < 2 or n1 + n2 < 5:
        raise DataError("two-sample t test needs larger groups")
    if ss1 <= 0 or ss2 <= 0:
        raise DataError("sums of squares must be positive")
    df = n1 + n2 - 2
    sp2 = (ss1 + ss2) / df
    post = StudentTSpec(np.array([mean1 - mean2], float),
                        np.array([[sp2 * (1.0 / n1 + 1.0 / n2)]]), df)
    prior_scale = np.array([[ss1 / n1 + ss2 / n2]])
    return StudentTModel([name], post, prior_scale, 2.0, exploratory_center=null)


def ttest_from_data(y, null=0.0, name="mu") -> StudentTModel:
    y = np.asarray(y, float)
    _reject_missing(y, "outcome")
    ybar = float(y.mean())
    ss = float(((y - ybar) ** 2).sum())
    return ttest_model(n=y.size, mean=ybar, ss=ss, null=null, name=name)


def ttest_two_from_data(y, groups, null=0.0, name="difference") -> StudentTModel:
    y = np.asarray(y, float)
    _reject_missing(y, "outcome")
    groups = np.asarray(groups)
    levels = list(pd.unique(groups))
    if len(levels) != 2:
        raise DataError(f"two-sample t test needs 2 groups, found {len(levels)}")
    y1, y2 = y[groups == levels[0]], y[groups == levels[1]]
    return ttest_model_two(
        n1=y1.size, mean1=y1.mean(), ss1=((y1 - y1.mean()) ** 2).sum(),
        n2=y2.size, mean2=y2.mean(), ss2=((y2 - y2.mean()) ** 2).sum(),
        null=null, name=name)


# ---------------------------------------------------------------------------
# linear models


def _coef_names(predictors, outcomes):
    if len(outcomes) <= 1:
        return list(predictors)
    return [f"{pred}_on_{out}" for out in outcomes for pred in predictors]


def lm_model(X, Y, predictors, outcomes, groups=None) -> MatrixTModel:
    """(Multivariate) normal linear model from a design matrix and outcomes.

    `groups` (optional labels, one per row) splits the minimal training
    fraction across groups, which matters for unbalanced designs.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, k = X.shape
    p = Y.shape[1]
    if len(predictors) != k or len(outcomes) != p:
        raise DataError("name lists do not match the design dimensions")
    if n <= k + p:
        raise DataError("not enough observations for the model size")
    _reject_missing(X, "design matrix")
    _reject_missing(Y, "outcome")

    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < k:
        raise DataError("design matrix is rank deficient")
    V = np.linalg.inv(XtX)
    Bhat = V @ X.T @ Y
    resid = Y - X @ Bhat
    S = resid.T @ resid
    nu = n - k
    if nu <= p - 1:
        raise DataError("too few residual degrees of freedom")

    if groups is None:
        labels = np.zeros(n)
    else:
        labels = np.asarray(groups)
        if labels.shape[0] != n:
            raise DataError("group labels do not match the number of rows")
    levels = list(pd.unique(labels))
    J = len(levels)
    S0 = np.zeros((p, p))
    M0 = np.zeros((k, k))
    nu0 = -float(k)
    for lev in levels:
        sel = labels == lev
        nj = int(sel.sum())
        bj = (k / J + p) / nj
        if bj >= 1.0:
            raise DataError(f"group '{lev}' is too small for a training fraction")
        rj = resid[sel]
        S0 += bj * (rj.T @ rj)
        M0 += bj * (X[sel].T @ X[sel])
        nu0 += bj * nj
    V0 = np.linalg.inv(M0)
    names = _coef_names(predictors, outcomes)
    return MatrixTModel(names, Bhat, V, S, float(nu), V0, S0, float(nu0))


def lm_model_from_stats(coef, xtx, sscp, n, predictors, outcomes) -> MatrixTModel:
    """Linear model from sufficient statistics (single-group fraction)."""
    Bhat = np.atleast_2d(np.asarray(coef, float))
    XtX = np.atleast_2d(np.asarray(xtx, float))
    S = np.atleast_2d(np.asarray(sscp, float))
    k, p = Bhat.shape
    n = int(n)
    if XtX.shape != (k, k) or S.shape != (p, p):
        raise DataError("statistic dimensions are inconsistent")
    if n <= k + p:
        raise DataError("not enough observations for the model size")
    b = (k + p) / n
    V = np.linalg.inv(XtX)
    names = _coef_names(predictors, outcomes)
    return MatrixTModel(names, Bhat, V, S, float(n - k),
                        V / b, b * S, float(p))


# ---------------------------------------------------------------------------
# group variances


def variance_model(*, ss, n, names) -> VarianceModel:
    ss = np.asarray(ss, float)
    n = np.asarray(n, float)
    if ss.size != n.size or ss.size != len(names):
        raise DataError("variance statistics and names differ in length")
    if ss.size < 2:
        raise DataError("need at least two groups")
    if np.any(ss <= 0) or np.any(n < 3):
        raise DataError("each group needs n >= 3 and positive spread")
    return VarianceModel(list(names), ss, n)


def variance_model_from_data(y, groups) -> VarianceModel:
    y = np.asarray(y, float)
    _reject_missing(y, "outcome")
    groups = np.asarray(groups)
    levels = list(pd.unique(groups))
    ss, n = [], []
    for lev in levels:
        yi = y[groups == lev]
        ss.append(float(((yi - yi.mean()) ** 2).sum()))
        n.append(yi.size)
    return variance_model(ss=ss, n=n, names=[str(lev) for lev in levels])


# ---------------------------------------------------------------------------
# correlations


def _corr_names(variables, suffix=""):
    d = len(variables)
    names, aliases = [], {}
    for i in range(1, d):
        for j in range(i):
            canon = f"{variables[i]}_with_{variables[j]}{suffix}"
            names.append(canon)
            aliases[f"{variables[j]}_with_{variables[i]}{suffix}"] = canon
    return names, aliases


def correlation_model(groups, *, seed=0, prior_draws=100_000) -> CorrelationModel:
    """Correlation analysis from per-group matrices.

    `groups` is a list of dicts with keys ``r`` (correlation matrix), ``n``
    (sample size), ``variables`` (column names), and optional ``label``
    (appended to parameter names when there is more than one group).
    """
    names, z_mean, z_var, dims = [], [], [], []
    aliases = {}
    multi = len(groups) > 1
    for g in groups:
        R = np.asarray(g["r"], float)
        ng = int(g["n"])
        variables = list(g["variables"])
        d = len(variables)
        if R.shape != (d, d):
            raise DataError("correlation matrix does not match its variables")
        if not np.allclose(R, R.T) or np.any(np.abs(R) > 1) or d < 2:
            raise DataError("not a valid correlation matrix")
        if np.any(np.abs(R[np.tril_indices(d, -1)]) >= 1):
            raise DataError("correlations must be strictly inside (-1, 1)")
        if ng <= 3:
            raise DataError("correlation analysis needs n > 3 per group")
        suffix = f"_in_{g.get('label', '')}" if multi else ""
        gnames, galiases = _corr_names(variables, suffix)
        names += gnames
        aliases.update(galiases)
        rows, cols = np.tril_indices(d, -1)
        z_mean.append(np.arctanh(R[rows, cols]))
        if "se" in g:
            se_r = np.asarray(g["se"], float)[rows, cols]
            z_var.append((se_r / (1.0 - R[rows, cols] ** 2)) ** 2)
        else:
            z_var.append(np.full(rows.size, 1.0 / (ng - 3)))
        dims.append(d)
    model = CorrelationModel(names, np.concatenate(z_mean),
                             np.diag(np.concatenate(z_var)), dims,
                             RandomStream(seed, PRIOR_STREAM_ID),
                             prior_draws=prior_draws)
    model.aliases = aliases
    return model


def correlation_model_from_data(df, variables, group=None, *, seed=0,
                                prior_draws=100_000) -> CorrelationModel:
    groups = []
    if group is None:
        sub = df[variables].to_numpy(float)
        _reject_missing(sub, "variables")
        groups.append({"r": np.corrcoef(sub.T), "n": sub.shape[0],
                       "variables": variables})
    else:
        for lev in pd.unique(df[group]):
            sub = df.loc[df[group] == lev, variables].to_numpy(float)
            _reject_missing(sub, f"group {lev}")
            groups.append({"r": np.corrcoef(sub.T), "n": sub.shape[0],
                           "variables": variables, "label": f"{group}{lev}"})
    return correlation_model(groups, seed=seed, prior_draws=prior_draws)


# ---------------------------------------------------------------------------
# generic Gaussian


def gaussian_model(*, estimates, cov, n, names) -> GaussianModel:
    est = np.asarray(estimates, float)
    cov = np.atleast_2d(np.asarray(cov, float))
    if est.size != len(names) or cov.shape != (est.size, est.size):
        raise DataError("estimates, covariance, and names are inconsistent")
    if int(n) < 2:
        raise DataError("n must be at least 2")
    return GaussianModel(list(names), est, cov, int(n))


# ---------------------------------------------------------------------------
# data-frame plumbing shared by the CLI


def load_table(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read data file: {e}")
    if df.shape[0] == 0 or df.shape[1] == 0:
        raise DataError("data file is empty")
    return df


def design_matrix(df: pd.DataFrame, predictors):
    """Intercept-first design matrix with R-style dummy coding."""
    cols = [np.ones(len(df))]
    names = ["Intercept"]
    for pred in predictors:
        if pred not in df.columns:
            raise DataError(f"unknown column '{pred}'")
        col = df[pred]
        if col.dtype.kind in "ifu":
            cols.append(col.to_numpy(float))
            names.append(pred)
        else:
            levels = list(pd.unique(col))
            for lev in levels[1:]:
                cols.append((col == lev).to_numpy(float))
                names.append(f"{pred}{lev}")
    X = np.column_stack(cols)
    _reject_missing(X, "design matrix")
    return X, names


def outcome_matrix(df: pd.DataFrame, outcomes):
    for c in outcomes:
        if c not in df.columns:
            raise DataError(f"unknown column '{c}'")
    Y = df[list(outcomes)].to_numpy(float)
    _reject_missing(Y, "outcome")
    return Y


def _reject_missing(arr, what):
    if np.any(~np.isfinite(np.asarray(arr, float))):
        raise DataError(f"missing or non-finite values in {what}; "
                        "supply complete data or use --imputations")


# ---------------------------------------------------------------------------
# sufficient-statistics JSON entry point


def model_from_stats(stats: dict, *, seed=0, prior_draws=100_000):
    """Build a model from a parsed statistics dictionary (see the CLI docs)."""
    if not isinstance(stats, dict) or "test" not in stats:
        raise DataError("statistics input must be an object with a 'test' field")
    test = stats["test"]
    try:
        if test == "ttest":
            if "groups" in stats:
                g1, g2 = stats["groups"]
                return ttest_model_two(
                    n1=g1["n"], mean1=g1["mean"], ss1=_ss_of(g1),
                    n2=g2["n"], mean2=g2["mean"], ss2=_ss_of(g2),
                    null=stats.get("null", 0.0), name=stats.get("name", "difference"))
            return ttest_model(
                n=stats["n"], mean=stats["mean"], sd=stats.get("sd"),
                ss=stats.get("ss"), t_stat=stats.get("t"),
                null=stats.get("null", 0.0), name=stats.get("name", "mu"))
        if test == "variances":
            n = np.asarray(stats["n"], float)
            if "ss" in stats:
                ss = np.asarray(stats["ss"], float)
            elif "var" in stats:
                ss = (n - 1) * np.asarray(stats["var"], float)
            elif "sd" in stats:
                ss = (n - 1) * np.asarray(stats["sd"], float) ** 2
            else:
                raise DataError("variance test needs ss, var, or sd")
            return variance_model(ss=ss, n=n, names=stats["names"])
        if test == "correlations":
            if "groups" in stats:
                groups = [dict(g, variables=g.get("variables", stats.get("variables")))
                          for g in stats["groups"]]
            else:
                groups = [{"r": stats["r"], "n": stats["n"],
                           "variables": stats["variables"]}]
            return correlation_model(groups, seed=seed, prior_draws=prior_draws)
        if test == "lm":
            return lm_model_from_stats(
                stats["coef"], stats["xtx"], stats["sscp"], stats["n"],
                stats["predictors"], stats.get("outcomes", ["y"]))
        if test == "gaussian":
            return gaussian_model(estimates=stats["estimates"], cov=stats["cov"],
                                  n=stats["n"], names=stats["names"])
    except KeyError as e:
        raise DataError(f"statistics input is missing field {e}")
    raise DataError(f"unknown test '{test}'")


def _ss_of(g: dict) -> float:
    if "ss" in g:
        return float(g["ss"])
    if "sd" in g:
        return float(g["sd"]) ** 2 * (int(g["n"]) - 1)
    raise DataError("each group needs ss or sd")
