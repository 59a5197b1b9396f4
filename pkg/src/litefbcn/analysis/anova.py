"""One-way repeated-measures ANOVA with an F-distribution tail from the
regularized incomplete beta function."""

import math
from dataclasses import dataclass

import numpy as np

ALPHA = 0.05
_CF_MAX_ITER = 300
_CF_EPS = 3e-16
_TINY = 1e-300


def _beta_cf(a, b, x):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_sf(f, df1, df2):
    """Upper tail ``P(F > f)`` of the F(df1, df2) distribution."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


@dataclass
class AnovaResult:
    f: float
    df_treatment: int
    df_error: int
    p: float
    ss_treatment: float
    ss_subjects: float
    ss_error: float
    degenerate: bool = False

    @property
    def significant(self):
        return self.p < ALPHA


def rm_anova(scores):
    """Within-subjects F test on a (subjects x methods) score matrix.

    Subjects are the cross-validation folds, methods the compared models.
    No sphericity correction.  When the error sum of squares vanishes the
    result is flagged ``degenerate``: F = 0, p = 1 if the methods are also
    identical, otherwise F = inf, p = 0.
    """
    x = np.asarray(scores, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"need a subjects x methods matrix with at least 2 of each, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("score matrix has missing or non-finite cells")
    n_subj, n_treat = x.shape
    grand = x.mean()
    ss_total = float(((x - grand) ** 2).sum())
    ss_treat = float(n_subj * ((x.mean(axis=0) - grand) ** 2).sum())
    ss_subj = float(n_treat * ((x.mean(axis=1) - grand) ** 2).sum())
    ss_error = ss_total - ss_treat - ss_subj
    df_t = n_treat - 1
    df_e = (n_treat - 1) * (n_subj - 1)
    scale = max(ss_total, _TINY)
    if ss_error <= 1e-12 * scale:
        if ss_treat <= 1e-12 * scale:
            return AnovaResult(0.0, df_t, df_e, 1.0, ss_treat, ss_subj, 0.0, degenerate=True)
        return AnovaResult(math.inf, df_t, df_e, 0.0, ss_treat, ss_subj, 0.0, degenerate=True)
    f = (ss_treat / df_t) / (ss_error / df_e)
    return AnovaResult(f, df_t, df_e, f_sf(f, df_t, df_e), ss_treat, ss_subj, ss_error)
