"""Paired significance tests over per-user metric values."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats as sps

ALPHA = 0.05


@dataclass(frozen=True)
class StatResult:
    test: str
    statistic: float
    p_raw: float
    p_adj: float
    decision: bool      # p_adj < alpha
    comparison: str = ""


def _paired(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("paired tests need at least two pairs")
    d = a - b
    return d, d.mean(), d.std(ddof=1) / np.sqrt(d.size)


def _one_sided_p(shift, se, df, upper):
    """P-value of H1: mean diff > bound (upper=True) or < bound, with ``shift = mean - bound``."""
    if se == 0:
        if shift == 0:
            return 0.0, 0.5
        t = np.inf if shift > 0 else -np.inf
    else:
        t = shift / se
    p = sps.t.sf(t, df) if upper else sps.t.cdf(t, df)
    return float(t), float(p)


def paired_t_test(a, b, alpha=ALPHA, comparison=""):
    """Two-sided paired t-test on ``a - b``.

    Zero-variance differences give p = 1 when the mean difference is 0 and p = 0 otherwise.
    """
    d, mean, se = _paired(a, b)
    if se == 0:
        t, p = (0.0, 1.0) if mean == 0 else (float(np.copysign(np.inf, mean)), 0.0)
    else:
        t = mean / se
        p = float(2 * sps.t.sf(abs(t), d.size - 1))
    return StatResult("paired_t", float(t), p, p, p < alpha, comparison)


def tost_equivalence(a, b, margin=0.05, alpha=ALPHA, comparison=""):
    """Paired two one-sided tests of ``|mean(a - b)| < margin``; p is the larger one-sided p.

    The reported statistic is the t value of the binding (larger-p) side.
    """
    if margin < 0:
        raise ValueError("equivalence margin must be >= 0")
    d, mean, se = _paired(a, b)
    df = d.size - 1
    t_lo, p_lo = _one_sided_p(mean + margin, se, df, upper=True)
    t_hi, p_hi = _one_sided_p(mean - margin, se, df, upper=False)
    t, p = (t_lo, p_lo) if p_lo >= p_hi else (t_hi, p_hi)
    return StatResult("tost", t, p, p, p < alpha, comparison)


def holm_bonferroni(pvalues):
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(pvalues, dtype=np.float64).ravel()
    if np.any((p < 0) | (p > 1)) or not np.isfinite(p).all():
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = p[order] * (m - np.arange(m))
    adjusted = np.minimum(np.maximum.accumulate(scaled), 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out


def adjust(results, alpha=ALPHA):
    """Apply Holm-Bonferroni across a family of results."""
    adj = holm_bonferroni([r.p_raw for r in results])
    return [replace(r, p_adj=float(q), decision=bool(q < alpha)) for r, q in zip(results, adj)]


STATS_COLUMNS = ("comparison", "test", "stat", "p_raw", "p_adj", "decision")


def write_stats_csv(results, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for r in results:
            w.writerow([r.comparison, r.test, repr(r.statistic), repr(r.p_raw), repr(r.p_adj),
                        "reject" if r.decision else "keep"])


def read_stats_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(StatResult(row["test"], float(row["stat"]), float(row["p_raw"]), float(row["p_adj"]),
                                  row["decision"] == "reject", row["comparison"]))
    return out
