"""Evaluation statistics: overlap, angular error, agreement and classification.

ICC(A,1) follows the two-way ANOVA decomposition (subjects x raters) with the
absolute-agreement single-measure form and the F-based confidence interval of
McGraw & Wong (1996). Bland-Altman differences are ``rater_a - rater_b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .special import f_ppf, t_ppf_upper, t_sf_two_sided

SEVERITY_CLASSES = ("Low", "Moderate", "High")
DEFAULT_CUTOFFS = (13.5, 20.0)


def severity_class(pct: float, cutoffs=DEFAULT_CUTOFFS) -> str:
    """Low below the first cutoff, High above the second, Moderate in between (inclusive)."""
    lo, hi = cutoffs
    if pct < lo:
        return "Low"
    if pct > hi:
        return "High"
    return "Moderate"


def dice(a, b) -> float:
    da = np.asarray(getattr(a, "data", a)) > 0
    db = np.asarray(getattr(b, "data", b)) > 0
    if da.shape != db.shape:
        raise ValueError(f"dims mismatch: {da.shape} vs {db.shape}")
    total = int(da.sum()) + int(db.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(da, db).sum()) / total


def angular_error(u, v) -> float:
    """Angle in degrees between two axes, ignoring sign; in [0, 90]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("angular error undefined for a zero vector")
    u, v = u / nu, v / nv
    return math.degrees(math.atan2(np.linalg.norm(np.cross(u, v)), abs(float(u @ v))))


def noninferiority_summary(pairs, margin_deg: float = 5.0) -> dict:
    """Fractions of cases with ``algo <= human`` and ``algo <= human + margin``."""
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("no pairs")
    if margin_deg < 0:
        raise ValueError("margin must be non-negative")
    human, algo = arr[:, 0], arr[:, 1]
    return {
        "n": int(len(arr)),
        "margin_deg": float(margin_deg),
        "below_parity_frac": float(np.mean(algo <= human)),
        "within_margin_frac": float(np.mean(algo <= human + margin_deg)),
    }


def mean_ci(values, level: float = 0.95) -> dict:
    """Mean, sample SD and the t-based confidence interval of the mean."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 values")
    m = float(x.mean())
    sd = float(x.std(ddof=1))
    half = t_ppf_upper(1.0 - level, n - 1) * sd / math.sqrt(n)
    return {"mean": m, "sd": sd, "ci_low": m - half, "ci_high": m + half, "n": n}


@dataclass(frozen=True)
class PairedMeasurements:
    case_ids: tuple
    rater_a: np.ndarray
    rater_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.rater_a, dtype=float)
        b = np.asarray(self.rater_b, dtype=float)
        ids = tuple(self.case_ids) if self.case_ids is not None else tuple(range(len(a)))
        if a.shape != b.shape or a.ndim != 1 or len(ids) != len(a):
            raise ValueError("rater vectors and case ids must have equal lengths")
        if len(a) < 2:
            raise ValueError("need at least 2 paired measurements")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("measurements must be finite")
        object.__setattr__(self, "rater_a", a)
        object.__setattr__(self, "rater_b", b)
        object.__setattr__(self, "case_ids", ids)

    @classmethod
    def of(cls, a, b, case_ids=None) -> "PairedMeasurements":
        return cls(case_ids, a, b)

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.rater_a, self.rater_b])

    def subset(self, mask) -> "PairedMeasurements":
        mask = np.asarray(mask, dtype=bool)
        ids = tuple(i for i, keep in zip(self.case_ids, mask) if keep)
        return PairedMeasurements(ids, self.rater_a[mask], self.rater_b[mask])


def _ratings_matrix(ratings) -> np.ndarray:
    if isinstance(ratings, PairedMeasurements):
        return ratings.matrix()
    y = np.asarray(ratings, dtype=float)
    if y.ndim != 2 or y.shape[1] < 2:
        raise ValueError("ratings must be an (n_subjects, k_raters) matrix with k >= 2")
    return y


def anova_two_way(ratings) -> dict:
    """Mean squares of the subjects x raters ANOVA without replication."""
    y = _ratings_matrix(ratings)
    n, k = y.shape
    gm = y.mean()
    ss_rows = k * ((y.mean(axis=1) - gm) ** 2).sum()
    ss_cols = n * ((y.mean(axis=0) - gm) ** 2).sum()
    ss_total = ((y - gm) ** 2).sum()
    ss_err = max(ss_total - ss_rows - ss_cols, 0.0)
    return {
        "n": n,
        "k": k,
        "ms_rows": ss_rows / (n - 1),
        "ms_cols": ss_cols / (k - 1),
        "ms_err": ss_err / ((n - 1) * (k - 1)),
    }


@dataclass
class ICCResult:
    icc: float
    ci_low: float
    ci_high: float
    level: float
    ms: dict
    diagnostic: str = ""


def icc_a1(ratings, level: float = 0.95) -> ICCResult:
    """Absolute-agreement single-measure ICC(A,1) with its F-based CI."""
    y = _ratings_matrix(ratings)
    n, k = y.shape
    if n < 5:
        raise ValueError("insufficient subjects for CI")
    ms = anova_two_way(y)
    if np.all(y == y[:, :1]) and np.ptp(y[:, 0]) > 0:
        return ICCResult(1.0, 1.0, 1.0, level, ms, "raters identical")
    msr, msc, mse = ms["ms_rows"], ms["ms_cols"], ms["ms_err"]
    if msr <= 0:
        return ICCResult(float("nan"), float("nan"), float("nan"), level, ms,
                         "zero between-subject variance: ICC undefined")
    denom = msr + (k - 1) * mse + k * (msc - mse) / n
    icc = (msr - mse) / denom

    alpha = 1.0 - level
    a = k * icc / (n * (1 - icc))
    b = 1 + k * icc * (n - 1) / (n * (1 - icc))
    v = (a * msc + b * mse) ** 2 / ((a * msc) ** 2 / (k - 1) + (b * mse) ** 2 / ((n - 1) * (k - 1)))
    diagnostic = ""
    if not (v > 0 and math.isfinite(v)):
        return ICCResult(float(icc), float("nan"), float("nan"), level, ms,
                         "degenerate Satterthwaite degrees of freedom")
    f_star = f_ppf(1 - alpha / 2, n - 1, v)
    f_star_rev = f_ppf(1 - alpha / 2, v, n - 1)
    lower = n * (msr - f_star * mse) / (f_star * (k * msc + (k * n - k - n) * mse) + n * msr)
    upper = n * (f_star_rev * msr - mse) / (k * msc + (k * n - k - n) * mse + n * f_star_rev * msr)
    return ICCResult(float(icc), float(lower), float(upper), level, ms, diagnostic)


def _vectors(pairs):
    # PairedMeasurements, a tuple (a, b) of vectors, or an (n, 2) array of rows
    if isinstance(pairs, PairedMeasurements):
        return pairs.rater_a, pairs.rater_b
    if isinstance(pairs, tuple) and len(pairs) == 2:
        a, b = (np.asarray(v, dtype=float) for v in pairs)
        if a.shape != b.shape:
            raise ValueError("rater vectors must have equal lengths")
        return a, b
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pairs must be PairedMeasurements, (a, b) or an (n, 2) array")
    return arr[:, 0], arr[:, 1]


def pearson(pairs) -> float:
    a, b = _vectors(pairs)
    if len(a) < 2:
        raise ValueError("need at least 2 pairs")
    ac, bc = a - a.mean(), b - b.mean()
    saa, sbb = float(ac @ ac), float(bc @ bc)
    if saa == 0 or sbb == 0:
        raise ValueError("Pearson undefined for zero variance")
    return float(np.clip((ac @ bc) / math.sqrt(saa * sbb), -1.0, 1.0))


def pearson_pvalue(r: float, n: int) -> float:
    """Two-sided p-value for ``H0: rho = 0`` via the t transform."""
    if n < 3:
        return float("nan")
    if abs(r) >= 1:
        return 0.0
    df = n - 2
    t = r * math.sqrt(df / (1 - r * r))
    return t_sf_two_sided(t, df)


def mae(pairs) -> float:
    a, b = _vectors(pairs)
    return float(np.mean(np.abs(a - b)))


def bland_altman(pairs, z: float = 1.96) -> dict:
    """Bias and limits of agreement of ``a - b`` (SD with n-1 denominator)."""
    a, b = _vectors(pairs)
    if len(a) < 2:
        raise ValueError("need at least 2 pairs")
    diff = a - b
    bias = float(diff.mean())
    sd = float(diff.std(ddof=1))
    lo, hi = bias - z * sd, bias + z * sd
    return {"bias": bias, "sd_diff": sd, "loa_low": lo, "loa_high": hi, "loa_width": hi - lo}


def bland_altman_points(pairs) -> np.ndarray:
    """``(mean, diff)`` per case for plotting."""
    a, b = _vectors(pairs)
    return np.column_stack([(a + b) / 2.0, a - b])


@dataclass
class ReliabilityReport:
    n: int
    icc: float
    icc_ci_low: float
    icc_ci_high: float
    pearson_r: float
    pearson_p: float
    mae: float
    mae_sd: float
    bland_altman: dict
    diagnostics: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "icc": self.icc,
            "icc_ci_low": self.icc_ci_low,
            "icc_ci_high": self.icc_ci_high,
            "pearson_r": self.pearson_r,
            "pearson_p": self.pearson_p,
            "mae": self.mae,
            "mae_sd": self.mae_sd,
            "bland_altman": dict(self.bland_altman),
            "diagnostics": list(self.diagnostics),
        }


def reliability_report(pairs: PairedMeasurements, level: float = 0.95) -> ReliabilityReport:
    """Every agreement statistic for one comparison. Undefined values become NaN."""
    a, b = _vectors(pairs)
    n = len(a)
    diagnostics = []
    nan = float("nan")
    icc = lo = hi = nan
    try:
        res = icc_a1(np.column_stack([a, b]), level)
        icc, lo, hi = res.icc, res.ci_low, res.ci_high
        if res.diagnostic:
            diagnostics.append(res.diagnostic)
    except ValueError as exc:
        diagnostics.append(f"icc: {exc}")
    try:
        r = pearson((a, b))
        p = pearson_pvalue(r, n)
    except ValueError as exc:
        r = p = nan
        diagnostics.append(f"pearson: {exc}")
    abs_err = np.abs(a - b)
    return ReliabilityReport(
        n=n, icc=icc, icc_ci_low=lo, icc_ci_high=hi, pearson_r=r, pearson_p=p,
        mae=float(abs_err.mean()), mae_sd=float(abs_err.std(ddof=1)) if n > 1 else nan,
        bland_altman=bland_altman((a, b)), diagnostics=diagnostics,
    )


@dataclass
class ConfusionResult:
    counts: np.ndarray
    recall: dict
    labels: tuple = SEVERITY_CLASSES

    def as_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "rows": "truth",
            "cols": "predicted",
            "counts": self.counts.tolist(),
            "recall": {k: (None if math.isnan(v) else v) for k, v in self.recall.items()},
        }


def confusion_matrix(pred_pct, truth_pct, cutoffs=DEFAULT_CUTOFFS) -> ConfusionResult:
    """3x3 severity counts (rows = truth, columns = prediction) and per-class recall."""
    pred = list(pred_pct)
    truth = list(truth_pct)
    if len(pred) != len(truth):
        raise ValueError("prediction and truth lengths differ")
    index = {c: i for i, c in enumerate(SEVERITY_CLASSES)}
    counts = np.zeros((3, 3), dtype=int)
    for p, t in zip(pred, truth):
        counts[index[severity_class(t, cutoffs)], index[severity_class(p, cutoffs)]] += 1
    recall = {}
    for c, i in index.items():
        row = counts[i].sum()
        recall[c] = float(counts[i, i] / row) if row else float("nan")
    return ConfusionResult(counts, recall)
