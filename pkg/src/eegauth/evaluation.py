"""Confusion metrics, Cohen's kappa, cohort summaries, and location tests.

The statistics here back the per-cohort report: per-user sensitivity,
specificity, accuracy, and kappa, plus a normality-gated comparison of each
metric column against chance (Shapiro-Wilk deciding between the one-sample
t test and the one-sample Wilcoxon signed-rank test).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri, stdtr

from .errors import DegenerateSampleError, SampleSizeError, UndefinedMetricError, ValidationError

METRIC_COLUMNS = ("tpr", "fpr", "tnr", "fnr", "accuracy", "kappa")


@dataclass(frozen=True)
class ConfusionCounts:
    """Grant/deny counts for genuine and impostor attempts."""

    genuine_granted: int
    genuine_denied: int
    impostor_granted: int
    impostor_denied: int

    def __post_init__(self):
        for name in ("genuine_granted", "genuine_denied",
                     "impostor_granted", "impostor_denied"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return (self.genuine_granted + self.genuine_denied
                + self.impostor_granted + self.impostor_denied)


@dataclass(frozen=True)
class MetricsReport:
    tpr: float
    fpr: float
    tnr: float
    fnr: float
    accuracy: float
    kappa: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_COLUMNS}


@dataclass(frozen=True)
class CohortReport:
    users: tuple[str, ...]
    rows: tuple[MetricsReport, ...]
    mean: MetricsReport
    sd: MetricsReport


@dataclass(frozen=True)
class StatTestResult:
    test: str
    statistic: float
    p_value: float
    n: int
    null_value: Optional[float] = None
    normality: Optional["StatTestResult"] = None


def metrics(c: ConfusionCounts) -> MetricsReport:
    """Confusion-derived rates plus Cohen's kappa (marginal-product chance)."""
    n_genuine = c.genuine_granted + c.genuine_denied
    n_impostor = c.impostor_granted + c.impostor_denied
    if n_genuine == 0 or n_impostor == 0:
        raise UndefinedMetricError("both genuine and impostor totals must be positive")
    total = c.total
    tpr = c.genuine_granted / n_genuine
    fnr = c.genuine_denied / n_genuine
    fpr = c.impostor_granted / n_impostor
    tnr = c.impostor_denied / n_impostor
    accuracy = (c.genuine_granted + c.impostor_denied) / total
    granted = c.genuine_granted + c.impostor_granted
    denied = c.genuine_denied + c.impostor_denied
    p_chance = (n_genuine * granted + n_impostor * denied) / (total * total)
    if p_chance == 1.0:
        kappa = 1.0 if accuracy == 1.0 else 0.0
    else:
        kappa = (accuracy - p_chance) / (1.0 - p_chance)
    return MetricsReport(tpr, fpr, tnr, fnr, accuracy, kappa)


def cohort_report(rows) -> CohortReport:
    """Per-user metrics plus column means and sample SDs (ddof=1)."""
    rows = list(rows)
    if not rows:
        raise ValidationError("cohort report needs at least one row")
    users = tuple(str(u) for u, _ in rows)
    reports = tuple(metrics(c) for _, c in rows)
    columns = {name: np.array([getattr(r, name) for r in reports])
               for name in METRIC_COLUMNS}
    mean = MetricsReport(**{k: float(v.mean()) for k, v in columns.items()})
    ddof = 1 if len(rows) > 1 else 0
    sd = MetricsReport(**{k: float(v.std(ddof=ddof)) for k, v in columns.items()})
    return CohortReport(users, reports, mean, sd)


# --- Shapiro-Wilk (Royston 1995 approximation) ---------------------------------

_SW_C1 = (-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0)
_SW_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0)
_SW_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)            # mu of g(W), n <= 11
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)          # log sigma, n <= 11
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)         # mu of log(1-W), n >= 12
_SW_C6 = (-0.4803, -0.082676, 0.0030302)                   # log sigma, n >= 12


def _poly(coeffs, x):
    out = 0.0
    for c in coeffs:
        out = out * x + c
    return out


def shapiro_wilk(values) -> StatTestResult:
    """W statistic and upper-tail p-value for normality, 3 <= n <= 5000."""
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    if n < 3 or n > 5000:
        raise SampleSizeError(f"shapiro_wilk supports 3 <= n <= 5000, got {n}")
    if x[0] == x[-1]:
        raise DegenerateSampleError("all values equal")

    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    mm = float(m @ m)
    c = m / math.sqrt(mm)
    u = 1.0 / math.sqrt(n)
    a = np.empty(n)
    if n <= 5:
        a_n = c[-1] + _poly(_SW_C1[:-1], u) * u
        phi = (mm - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n ** 2)
        # n == 3 leaves only the (exactly zero) median weight in the middle
        a[1:-1] = m[1:-1] / math.sqrt(phi) if phi > 0 else 0.0
        a[-1], a[0] = a_n, -a_n
    else:
        a_n = c[-1] + _poly(_SW_C1[:-1], u) * u
        a_n1 = c[-2] + _poly(_SW_C2[:-1], u) * u
        phi = ((mm - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2)
               / (1.0 - 2.0 * a_n ** 2 - 2.0 * a_n1 ** 2))
        a[2:-2] = m[2:-2] / math.sqrt(phi)
        a[-1], a[0] = a_n, -a_n
        a[-2], a[1] = a_n1, -a_n1

    xc = x - x.mean()
    w = float((a @ x) ** 2 / (xc @ xc))
    w = min(w, 1.0)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(max(p, 0.0), 1.0)
        return StatTestResult("shapiro_wilk", w, p, n)
    if n <= 11:
        gamma = 0.459 * n - 2.273
        g = -math.log(gamma - math.log1p(-w))
        mu = _poly(_SW_C3[::-1], n)
        sigma = math.exp(_poly(_SW_C4[::-1], n))
        z = (g - mu) / sigma
    else:
        ln_n = math.log(n)
        g = math.log1p(-w)
        mu = _poly(_SW_C5[::-1], ln_n)
        sigma = math.exp(_poly(_SW_C6[::-1], ln_n))
        z = (g - mu) / sigma
    p = float(1.0 - ndtr(z))
    return StatTestResult("shapiro_wilk", w, p, n)


# --- one-sample location tests --------------------------------------------------

def t_one_sample(values, null_value: float) -> StatTestResult:
    """Two-sided one-sample t test of the mean against null_value."""
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise SampleSizeError("t test needs n >= 2")
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError("sample standard deviation is zero")
    t = float((x.mean() - null_value) / (sd / math.sqrt(n)))
    p = float(2.0 * stdtr(n - 1, -abs(t)))
    return StatTestResult("t_one_sample", t, p, n, null_value=null_value)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    sorted_vals = values[order]
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


_EXACT_LIMIT = 25


def _wilcoxon_exact_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p via the signed-rank distribution (ties mid-ranked).

    Doubling makes mid-ranks integral, so the null distribution of 2*W+ is a
    subset-sum count over the doubled ranks.
    """
    doubled = np.rint(2.0 * ranks).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    counts /= counts.sum()
    w2 = int(round(2.0 * w_plus))
    lower = counts[:w2 + 1].sum()
    upper = counts[w2:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def wilcoxon_one_sample(values, null_value: float) -> StatTestResult:
    """One-sample Wilcoxon signed-rank test; W is the positive-rank sum.

    Zero differences are dropped and ties share mid-ranks.  The p-value is
    exact for up to 25 nonzero differences and uses the tie-corrected normal
    approximation above that.
    """
    x = np.asarray(values, dtype=float)
    d = x - null_value
    d = d[d != 0.0]
    m = d.size
    if m == 0:
        raise DegenerateSampleError("all differences from the null value are zero")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if m <= _EXACT_LIMIT:
        p = _wilcoxon_exact_p(ranks, w_plus)
    else:
        mean = m * (m + 1) / 4.0
        var = m * (m + 1) * (2 * m + 1) / 24.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var -= float(((tie_counts ** 3 - tie_counts) / 48.0).sum())
        if var <= 0:
            raise DegenerateSampleError("tie structure leaves no variance")
        z = (w_plus - mean) / math.sqrt(var)
        p = float(min(1.0, 2.0 * (1.0 - ndtr(abs(z)))))
    return StatTestResult("wilcoxon_one_sample", w_plus, p, m, null_value=null_value)


def compare_to_chance(values, null_value: float = 0.5,
                      alpha: float = 0.05) -> StatTestResult:
    """Normality-gated location test against chance level.

    Runs Shapiro-Wilk first; samples that look normal (p > alpha) get the
    t test, the rest get the Wilcoxon signed-rank test.  The returned result
    names the branch taken and carries the normality result.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 3:
        raise SampleSizeError("compare_to_chance needs n >= 3")
    normality = shapiro_wilk(x)
    if normality.p_value > alpha:
        result = t_one_sample(x, null_value)
    else:
        result = wilcoxon_one_sample(x, null_value)
    return StatTestResult(result.test, result.statistic, result.p_value,
                          result.n, null_value=result.null_value,
                          normality=normality)
