"""Two-sample law comparison: energy distance plus marginal KS tests.

The energy statistic is calibrated by permutation (no asymptotic
approximation); marginal Kolmogorov-Smirnov statistics use scipy's
two-sample p-values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import ks_2samp


def energy_distance(x: np.ndarray, y: np.ndarray) -> float:
    """2 E|X-Y| - E|X-X'| - E|Y-Y'| with plain sample means."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    dxy = cdist(x, y).mean()
    dxx = cdist(x, x).mean()
    dyy = cdist(y, y).mean()
    return 2.0 * dxy - dxx - dyy


def energy_permutation_test(x: np.ndarray, y: np.ndarray, n_permutations: int = 200,
                            rng: np.random.Generator | None = None
                            ) -> tuple[float, float]:
    """(statistic, permutation p-value) for the pooled-label null.

    Precomputes the pooled distance matrix once; each permutation costs a
    single matrix-vector product.
    """
    rng = rng or np.random.default_rng(0)
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    na, nb = len(x), len(y)
    pooled = np.vstack([x, y])
    D = cdist(pooled, pooled)
    total = D.sum()

    def stat_for(mask: np.ndarray) -> float:
        q = D @ mask
        s_aa = float(mask @ q)
        s_ab = float(q.sum()) - s_aa
        s_bb = total - 2.0 * s_ab - s_aa
        return 2.0 * s_ab / (na * nb) - s_aa / na ** 2 - s_bb / nb ** 2

    base_mask = np.concatenate([np.ones(na), np.zeros(nb)])
    observed = stat_for(base_mask)
    exceed = 0
    labels = base_mask.copy()
    for _ in range(n_permutations):
        rng.shuffle(labels)
        if stat_for(labels) >= observed:
            exceed += 1
    pvalue = (1.0 + exceed) / (1.0 + n_permutations)
    return observed, pvalue


@dataclass(frozen=True)
class TimeComparison:
    time: float
    energy: float
    energy_pvalue: float
    ks_stats: tuple[float, ...]
    ks_pvalues: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "time": self.time,
            "energy": self.energy,
            "energy_pvalue": self.energy_pvalue,
            "ks_stats": list(self.ks_stats),
            "ks_pvalues": list(self.ks_pvalues),
        }


@dataclass(frozen=True)
class LawDistanceReport:
    entries: tuple[TimeComparison, ...]
    n_permutations: int
    projections: tuple[tuple[float, ...], ...] = field(default=())

    def rejected(self, level: float = 0.01) -> bool:
        """Holm-adjusted decision over the energy p-values across times."""
        pvals = sorted(e.energy_pvalue for e in self.entries)
        m = len(pvals)
        return any(p < level / (m - k) for k, p in enumerate(pvals))

    def min_energy_pvalue(self) -> float:
        return min(e.energy_pvalue for e in self.entries)

    def to_json(self) -> dict:
        return {
            "n_permutations": self.n_permutations,
            "projections": [list(v) for v in self.projections],
            "entries": [e.to_json() for e in self.entries],
            "rejected_at_1pct": self.rejected(0.01),
        }


def compare_samples(samples_a, samples_b, times, projections=None,
                    n_permutations: int = 200, seed: int = 0) -> LawDistanceReport:
    """Energy + KS comparison of paired sample arrays at matching times.

    ``samples_a[k]`` and ``samples_b[k]`` are (n, d) state samples at
    ``times[k]``; projections default to the coordinate axes.
    """
    d = np.atleast_2d(samples_a[0]).shape[1]
    if projections is None:
        projections = [tuple(row) for row in np.eye(d)]
    rng = np.random.default_rng(seed)
    entries = []
    for t, xa, xb in zip(times, samples_a, samples_b):
        stat, pval = energy_permutation_test(xa, xb, n_permutations, rng)
        ks_s, ks_p = [], []
        for v in projections:
            va = xa @ np.asarray(v)
            vb = xb @ np.asarray(v)
            res = ks_2samp(va, vb)
            ks_s.append(float(res.statistic))
            ks_p.append(float(res.pvalue))
        entries.append(TimeComparison(
            time=float(t), energy=stat, energy_pvalue=pval,
            ks_stats=tuple(ks_s), ks_pvalues=tuple(ks_p),
        ))
    return LawDistanceReport(
        entries=tuple(entries),
        n_permutations=n_permutations,
        projections=tuple(tuple(v) for v in projections),
    )
