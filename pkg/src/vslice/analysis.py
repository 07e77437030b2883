"""Statistical post-processing: dependence measures, CCDFs and run summaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .scenario import Slice

log = logging.getLogger(__name__)


def estimate_mi(x: np.ndarray, y: np.ndarray, bins: int) -> float:
    """Plug-in histogram mutual information in nats.

    Marginal bin edges are placed at equiprobable quantiles, so identical
    uniform discrete sequences over `bins` values reach log(bins) exactly.
    Always non-negative.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size == 0:
        raise ContractError("x and y must be equally sized and non-empty")
    if bins < 2:
        raise ContractError("bins must be >= 2")

    def bin_ids(values: np.ndarray) -> np.ndarray:
        edges = np.quantile(values, np.arange(1, bins) / bins)
        return np.searchsorted(edges, values, side="right")

    ix, iy = bin_ids(x), bin_ids(y)
    joint = np.zeros((bins, bins))
    np.add.at(joint, (ix, iy), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    mi = float(np.sum(joint[mask] * np.log(joint[mask] / (px @ py)[mask])))
    return max(mi, 0.0)


def canonical_corr(x: np.ndarray, y: np.ndarray, regularization: float = 1e-9) -> float:
    """First canonical correlation coefficient between two sample matrices.

    Covariances are ridge-regularized on the diagonal; the result is clamped
    to [0, 1].  Degenerate (constant) input yields 0 and logs a warning.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ContractError("x and y must be (n, d) with matching n")
    n = x.shape[0]
    if n < 2:
        raise ContractError("need at least two samples")

    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    if not (np.any(np.abs(xc) > 0) and np.any(np.abs(yc) > 0)):
        log.warning("canonical_corr: degenerate constant input, returning 0")
        return 0.0
    sxx = xc.T @ xc / (n - 1) + regularization * np.eye(x.shape[1])
    syy = yc.T @ yc / (n - 1) + regularization * np.eye(y.shape[1])
    sxy = xc.T @ yc / (n - 1)
    lx = np.linalg.cholesky(sxx)
    ly = np.linalg.cholesky(syy)
    k = np.linalg.solve(lx, sxy)
    k = np.linalg.solve(ly, k.T).T
    rho = float(np.linalg.svd(k, compute_uv=False)[0])
    return min(max(rho, 0.0), 1.0)


@dataclass
class CcdfCurve:
    """Empirical complementary CDF, right-continuous: prob[i] = P(X > value[i])."""

    values: np.ndarray  # unique sample values, ascending
    probs: np.ndarray   # non-increasing, in [0, 1)
    n: int

    def quantile(self, q: float) -> float:
        """Smallest sample value whose CDF reaches q (order-statistic rule)."""
        if not (0.0 < q <= 1.0):
            raise ContractError("q must lie in (0, 1]")
        cdf = 1.0 - self.probs
        idx = int(np.searchsorted(cdf, q - 1e-12))
        return float(self.values[min(idx, len(self.values) - 1)])


def ccdf(samples: np.ndarray) -> CcdfCurve:
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ContractError("samples must be non-empty")
    values, counts = np.unique(samples, return_counts=True)
    exceed = samples.size - np.cumsum(counts)
    return CcdfCurve(values=values, probs=exceed / samples.size, n=samples.size)


@dataclass
class MetricsSummary:
    mean_embb_rate_bps: float
    std_embb_rate_bps: float
    embb_satisfaction: float | None
    urllc_violation: float
    overhead_reports: int
    overhead_reduction: float
    mean_embb_goodput_bps: float
    mean_urllc_rate_bps: float


def aggregate(tracker, ledger, config, vehicles) -> MetricsSummary:
    """Fold one finished run into its summary statistics.

    eMBB satisfaction is the fraction of eMBB vehicles whose final violation
    probability against the broadband target stays below one half (that is,
    vehicles above target for most of the run).  The rate spread is the
    standard deviation across eMBB vehicles of their run-mean rates: latency
    alarms pin resources to whichever cell raised them, so unequal treatment
    shows up as dispersion between vehicles, not within one vehicle's time
    series.  Overhead reduction compares consumed reports against every
    vehicle reporting each TTI.
    """
    if tracker.tti_count == 0:
        raise ContractError("cannot aggregate an empty run")
    embb = [v.id for v in vehicles if v.slice is Slice.EMBB]
    urllc = [v.id for v in vehicles if v.slice is Slice.URLLC]
    t = tracker.tti_count

    if embb:
        mean_rate = float(np.mean(tracker.mean_bps[embb]))
        std_rate = float(np.std(tracker.mean_bps[embb]))
        satisfied = [
            tracker.violation_probability(v, config.rate_target_embb_bps) < 0.5
            for v in embb
        ]
        satisfaction = float(np.mean(satisfied))
        goodput = float(np.mean(tracker.goodput_bits[embb]) / (t * config.tti_s))
    else:
        mean_rate, std_rate, satisfaction, goodput = 0.0, 0.0, None, 0.0

    if urllc:
        violation = float(np.mean([
            tracker.violation_probability(v, config.rate_target_urllc_bps)
            for v in urllc
        ]))
        urllc_rate = float(np.mean(tracker.mean_bps[urllc]))
    else:
        violation, urllc_rate = 0.0, 0.0

    return MetricsSummary(
        mean_embb_rate_bps=mean_rate,
        std_embb_rate_bps=std_rate,
        embb_satisfaction=satisfaction,
        urllc_violation=violation,
        overhead_reports=ledger.reports,
        overhead_reduction=ledger.reduction,
        mean_embb_goodput_bps=goodput,
        mean_urllc_rate_bps=urllc_rate,
    )
