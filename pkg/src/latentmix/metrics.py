"""Verification and privacy metrics over similarity scores.

Match convention everywhere: a comparison matches when ``score >= threshold``.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScoreSet:
    """Genuine (mated) and impostor (non-mated) similarity scores."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = _scores(self.genuine, "genuine")
        self.impostor = _scores(self.impostor, "impostor")


def _scores(values, name):
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} scores are empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} scores contain non-finite values")
    return arr


def fmr_threshold(impostor, fmr):
    """Smallest observed impostor score ``t`` with ``mean(impostor >= t) <= fmr``.

    When even the largest score admits too many matches, the threshold is
    the next float above it, so no impostor matches.
    """
    imp = np.sort(_scores(impostor, "impostor"))
    if not 0.0 < fmr < 1.0:
        raise ValueError("fmr must lie strictly between 0 and 1")
    n = imp.size
    candidates = np.unique(imp)
    count_ge = n - np.searchsorted(imp, candidates, side="left")
    ok = np.flatnonzero(count_ge / n <= fmr)
    if ok.size:
        return float(candidates[ok[0]])
    return float(np.nextafter(imp[-1], np.inf))


def psr(scores, threshold):
    """Protection success rate: percentage of scores that do not match."""
    s = _scores(scores, "protected")
    return 100.0 * float(np.mean(s < threshold))


def match_rate(scores, threshold):
    return 100.0 * float(np.mean(_scores(scores, "match") >= threshold))


def error_rates(genuine, impostor, thresholds):
    """FMR and FNMR at each threshold."""
    gen = np.sort(genuine)
    imp = np.sort(impostor)
    fmr = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    fnmr = np.searchsorted(gen, thresholds, side="left") / gen.size
    return fmr, fnmr


def eer(scores):
    """Equal error rate, linearly interpolated between the bracketing thresholds."""
    return eer_with_threshold(scores)[0]


def eer_with_threshold(scores):
    gen, imp = scores.genuine, scores.impostor
    allv = np.unique(np.concatenate([gen, imp]))
    thresholds = np.append(allv, np.nextafter(allv[-1], np.inf))
    fmr, fnmr = error_rates(gen, imp, thresholds)
    diff = fnmr - fmr
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        # equal over a run of thresholds: value is unique, report the run's midpoint
        j = i
        while j + 1 < diff.size and diff[j + 1] == 0:
            j += 1
        return float(fmr[i]), float(0.5 * (thresholds[i] + thresholds[j]))
    alpha = -diff[i - 1] / (diff[i] - diff[i - 1])
    value = fmr[i - 1] + alpha * (fmr[i] - fmr[i - 1])
    t = thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1])
    return float(value), float(t)


def auc(scores):
    """P(genuine > impostor) with ties counted one half."""
    gen, imp = scores.genuine, np.sort(scores.impostor)
    below = np.searchsorted(imp, gen, side="left")
    ties = np.searchsorted(imp, gen, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (gen.size * imp.size))


@dataclass
class UnlinkabilityReport:
    """Local and global linkage measures from histogram density estimates."""

    edges: np.ndarray
    local: np.ndarray
    d_sys: float
    bins: int
    mated_density: np.ndarray
    nonmated_density: np.ndarray
    degenerate: bool = False
    sensitivity: dict = field(default_factory=dict)

    @property
    def grid(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def doane_bins(values):
    edges = np.histogram_bin_edges(values, bins="doane")
    return max(2, edges.size - 1)


def unlinkability(mated, nonmated, bins=None, omega=1.0, sensitivity=True):
    """Linkage of mated vs non-mated score distributions.

    ``local(s) = max(0, 2 LR / (1 + LR) - 1)`` with ``LR = omega * p_m / p_nm``
    per bin; bins holding mated mass but no non-mated mass score 1. The
    global score is the mated-weighted sum of the local curve.
    ``bins=None`` picks Doane's rule on the pooled scores.
    """
    m = _scores(mated, "mated")
    nm = _scores(nonmated, "non-mated")
    pooled = np.concatenate([m, nm])
    lo, hi = pooled.min(), pooled.max()
    degenerate = lo == hi
    if degenerate:
        n_bins = 1
        edges = np.array([lo - 0.5, lo + 0.5])
    else:
        n_bins = int(bins) if bins is not None else doane_bins(pooled)
        if n_bins < 2:
            raise ValueError("unlinkability needs at least 2 bins")
        edges = np.linspace(lo, hi, n_bins + 1)

    c_m = np.histogram(m, bins=edges)[0]
    c_nm = np.histogram(nm, bins=edges)[0]
    width = np.diff(edges)
    p_m = c_m / (m.size * width)
    p_nm = c_nm / (nm.size * width)

    local = np.zeros(n_bins)
    both = (c_nm > 0) & (c_m > 0)
    lr = omega * p_m[both] / p_nm[both]
    local[both] = np.maximum(0.0, 2.0 * lr / (1.0 + lr) - 1.0)
    local[(c_nm == 0) & (c_m > 0)] = 1.0
    # sum of local * p_m * width, written with counts so the extremes come out exact
    d_sys = float(np.sum(local * c_m) / m.size)

    report = UnlinkabilityReport(edges, local, d_sys, n_bins, p_m, p_nm, degenerate)
    if sensitivity and not degenerate:
        for alt in sorted({max(2, n_bins // 2), 2 * n_bins}):
            report.sensitivity[alt] = unlinkability(m, nm, alt, omega, sensitivity=False).d_sys
    return report


@dataclass
class KeyRobustness:
    psrs: list
    mean: float
    std: float


def population_std(values):
    return float(np.std(np.asarray(values, dtype=np.float64)))


def key_robustness(keys, run_psr):
    """Run ``run_psr(key)`` per key; report each PSR and their (population) std."""
    keys = list(keys)
    if len(keys) < 2:
        raise ValueError("key robustness needs at least two keys")
    psrs = [float(run_psr(k)) for k in keys]
    return KeyRobustness(psrs, float(np.mean(psrs)), population_std(psrs))
