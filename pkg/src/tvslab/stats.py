"""Shared estimators and hypothesis tests.

Small pure-function layer used by the experiment gates: box-counting
dimension fits, two-sample KS, chi-square with bin merging, Wilson
intervals, and a monotone-trend test across mesh sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps


@dataclass
class DimensionFit:
    box_sizes: list
    counts: list
    slope: float
    r2: float
    window: tuple

    def as_dict(self):
        return {
            "box_sizes": [int(s) for s in self.box_sizes],
            "counts": [int(c) for c in self.counts],
            "slope": float(self.slope),
            "r2": float(self.r2),
            "window": [int(self.window[0]), int(self.window[1])],
        }


@dataclass
class TestReport:
    statistic: float
    p_value: float
    n: int
    method: str
    detail: dict = field(default_factory=dict)

    def as_dict(self):
        out = {
            "statistic": float(self.statistic),
            "p_value": float(self.p_value),
            "n": int(self.n),
            "method": self.method,
        }
        if self.detail:
            out["detail"] = self.detail
        return out


def box_counting_dimension(points, radius=None, window=None):
    """Least squares dimension of a 2D integer point set.

    Counts occupied dyadic boxes (size 2, 4, 8, ...) and fits
    log(count) against log(size); the reported slope is the negated
    fit slope, so a line gives ~1 and a filled patch ~2.  The default
    window runs from box size 2 up to radius/8.
    """
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if len(pts) < 100:
        raise ValueError("need at least 100 points for a stable fit")
    if window is None:
        if radius is None:
            radius = int(np.max(np.abs(pts)))
        window = (2, max(2, radius // 8))
    lo, hi = int(window[0]), int(window[1])
    sizes = []
    s = 1
    while s < lo:
        s *= 2
    while s <= hi:
        sizes.append(s)
        s *= 2
    if len(sizes) < 3:
        raise ValueError("window spans fewer than 3 dyadic box sizes")

    counts = []
    for s in sizes:
        cells = pts // s
        counts.append(len(np.unique(cells, axis=0)))
    xs = np.log(np.asarray(sizes, dtype=float))
    ys = np.log(np.asarray(counts, dtype=float))
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DimensionFit(box_sizes=sizes, counts=counts, slope=float(-slope),
                        r2=r2, window=(lo, hi))


def ks_two_sample(xs, ys):
    """Two-sample Kolmogorov-Smirnov; exact p below 50 samples."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) == 0 or len(ys) == 0:
        raise ValueError("empty sample")
    method = "exact" if min(len(xs), len(ys)) < 50 else "asymp"
    res = sps.ks_2samp(xs, ys, method=method)
    return TestReport(statistic=float(res.statistic), p_value=float(res.pvalue),
                      n=len(xs) + len(ys), method="KS")


def chi_square(observed, expected):
    """Goodness of fit with adjacent-bin merging until expected >= 5.

    Expected counts are rescaled to the observed total first, so the
    caller may pass probabilities or unnormalized weights.
    """
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.size == 0 or obs.size != exp.size:
        raise ValueError("observed and expected must be equal-length, non-empty")
    if np.any(exp < 0) or exp.sum() <= 0:
        raise ValueError("expected counts must be nonnegative with positive sum")
    exp = exp * (obs.sum() / exp.sum())

    merged_o, merged_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            merged_o.append(acc_o)
            merged_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if merged_e:
            merged_o[-1] += acc_o
            merged_e[-1] += acc_e
        else:
            merged_o.append(acc_o)
            merged_e.append(acc_e)
    merged_o = np.asarray(merged_o)
    merged_e = np.asarray(merged_e)
    if len(merged_e) < 2:
        raise ValueError("too few bins after merging; collect more samples")
    stat = float(np.sum((merged_o - merged_e) ** 2 / merged_e))
    dof = len(merged_e) - 1
    p = float(sps.chi2.sf(stat, dof))
    return TestReport(statistic=stat, p_value=p, n=int(obs.sum()),
                      method="chi-square", detail={"dof": dof,
                                                   "bins": len(merged_e)})


def wilson_ci(successes, n, level=0.95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes out of range")
    z = sps.norm.ppf(0.5 + level / 2.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, float(centre - half))
    hi = 1.0 if successes == n else min(1.0, float(centre + half))
    return (lo, hi)


def mesh_trend(values_by_mesh, direction):
    """Test a declared monotone direction across mesh sizes.

    ``values_by_mesh`` maps a sortable mesh key to an array of replica
    values.  Consecutive meshes are compared with one-sided
    Mann-Whitney tests for movement OPPOSITE to the declared direction
    and the step p-values are Fisher-combined; a small p therefore
    means the sequence violates the trend beyond noise.  Single-value
    meshes degrade to a strict comparison of the values themselves
    (p 0 on any violation, 1 otherwise).
    """
    if direction not in ("increasing", "decreasing"):
        raise ValueError("direction must be 'increasing' or 'decreasing'")
    keys = sorted(values_by_mesh)
    if len(keys) < 2:
        raise ValueError("need at least two meshes")
    groups = [np.atleast_1d(np.asarray(values_by_mesh[k], dtype=float))
              for k in keys]
    n = int(sum(len(g) for g in groups))

    if all(len(g) == 1 for g in groups):
        seq = np.array([g[0] for g in groups])
        diffs = np.diff(seq)
        bad = int(np.sum(diffs <= 0)) if direction == "increasing" \
            else int(np.sum(diffs >= 0))
        return TestReport(statistic=float(bad), p_value=0.0 if bad else 1.0,
                          n=n, method="trend",
                          detail={"meshes": [str(k) for k in keys],
                                  "mode": "strict"})

    # H1 per step: the later mesh moved against the declared direction
    p_steps = []
    for g0, g1 in zip(groups, groups[1:]):
        alt = "greater" if direction == "decreasing" else "less"
        res = sps.mannwhitneyu(g1, g0, alternative=alt)
        p_steps.append(float(res.pvalue))
    stat, p = sps.combine_pvalues(np.asarray(p_steps), method="fisher")
    return TestReport(statistic=float(stat), p_value=float(p), n=n,
                      method="trend",
                      detail={"meshes": [str(k) for k in keys],
                              "step_p": p_steps, "mode": "mannwhitney"})


def trend_significance(values_by_mesh, direction):
    """Test FOR a declared monotone direction across mesh sizes.

    Mirror image of mesh_trend: each consecutive pair of meshes is
    compared with a one-sided Mann-Whitney test in FAVOR of the
    declared direction and the step p-values are Fisher-combined, so
    a small p confirms the trend beyond noise.  NaN replicas are
    dropped per mesh; a mesh left empty makes the test inconclusive
    (p 1).  Single-value meshes degrade to strict comparison (p 0
    when every step follows the direction, 1 otherwise).
    """
    if direction not in ("increasing", "decreasing"):
        raise ValueError("direction must be 'increasing' or 'decreasing'")
    keys = sorted(values_by_mesh)
    if len(keys) < 2:
        raise ValueError("need at least two meshes")
    groups = []
    for k in keys:
        g = np.atleast_1d(np.asarray(values_by_mesh[k], dtype=float))
        groups.append(g[np.isfinite(g)])
    n = int(sum(len(g) for g in groups))
    if any(len(g) == 0 for g in groups):
        return TestReport(statistic=float("nan"), p_value=1.0, n=n,
                          method="trend-for",
                          detail={"meshes": [str(k) for k in keys],
                                  "mode": "insufficient"})

    if all(len(g) == 1 for g in groups):
        seq = np.array([g[0] for g in groups])
        diffs = np.diff(seq)
        ok = np.all(diffs > 0) if direction == "increasing" \
            else np.all(diffs < 0)
        return TestReport(statistic=float(np.sum(diffs)),
                          p_value=0.0 if ok else 1.0, n=n,
                          method="trend-for",
                          detail={"meshes": [str(k) for k in keys],
                                  "mode": "strict"})

    # H1 per step: the later mesh moved WITH the declared direction
    p_steps = []
    for g0, g1 in zip(groups, groups[1:]):
        alt = "less" if direction == "decreasing" else "greater"
        res = sps.mannwhitneyu(g1, g0, alternative=alt)
        p_steps.append(float(res.pvalue))
    stat, p = sps.combine_pvalues(np.asarray(p_steps), method="fisher")
    return TestReport(statistic=float(stat), p_value=float(p), n=n,
                      method="trend-for",
                      detail={"meshes": [str(k) for k in keys],
                              "step_p": p_steps, "mode": "mannwhitney"})
