"""Photon counting on charge trajectories and single-shot charge readout.

Emission rates are in counts/ms and readout bins in ms; trajectories from
:mod:`vvstark.kinetics` are in us.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaincc, gammaln, xlogy

from .charge import ChargeLevels, transition_voltages
from .electrostatics import BandParameters, DeviceGeometry
from .kinetics import RateModel, TelegraphTrace, child_seeds, make_rng, simulate_telegraph


@dataclass(frozen=True, eq=False)
class PhotonHistogram:
    """Occurrences of each photon number per readout bin."""

    values: np.ndarray
    occurrences: np.ndarray
    bin_duration: float = 8.0  # ms

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        occ = np.asarray(self.occurrences, dtype=float)
        if values.shape != occ.shape:
            raise ValueError("values and occurrences must align")
        if np.any(occ < 0):
            raise ValueError("occurrence counts must be >= 0")
        if np.any(values < 0):
            raise ValueError("photon numbers must be >= 0")
        order = np.argsort(values)
        object.__setattr__(self, "values", values[order])
        object.__setattr__(self, "occurrences", occ[order])

    @classmethod
    def from_counts(cls, counts, bin_duration=8.0):
        counts = np.asarray(counts, dtype=np.int64)
        occ = np.bincount(counts) if counts.size else np.zeros(0)
        values = np.arange(occ.size)
        keep = occ > 0
        return cls(values[keep], occ[keep], bin_duration)

    @classmethod
    def from_mapping(cls, mapping, bin_duration=8.0):
        items = sorted(mapping.items())
        return cls(np.array([k for k, _ in items]), np.array([v for _, v in items]),
                   bin_duration)

    @property
    def counts(self):
        return dict(zip(self.values.tolist(), self.occurrences.tolist()))

    @property
    def total(self):
        return float(self.occurrences.sum())

    @property
    def mean(self):
        return float(np.dot(self.values, self.occurrences) / self.total)

    def __add__(self, other):
        if other.bin_duration != self.bin_duration:
            raise ValueError("cannot pool histograms with different bin durations")
        merged = self.counts
        for k, v in other.counts.items():
            merged[k] = merged.get(k, 0.0) + v
        return PhotonHistogram.from_mapping(merged, self.bin_duration)

    def scaled(self, k):
        return PhotonHistogram(self.values, self.occurrences * k, self.bin_duration)

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# bin_duration_ms = {self.bin_duration:g}\n")
            w = csv.writer(fh)
            w.writerow(["counts", "occurrences"])
            for v, o in zip(self.values, self.occurrences):
                w.writerow([int(v), f"{o:g}"])


@dataclass(frozen=True, eq=False)
class CountSeries:
    edges: np.ndarray  # ms
    expected: np.ndarray
    counts: np.ndarray


def generate_counts(trace: TelegraphTrace, lambda_bright, lambda_dark, bin=8.0, seed=0):
    """Poisson photon counts per ``bin`` ms along ``trace``.

    Each bin's mean is ``lambda_bright * t_bright + lambda_dark * t_dark``
    with the dwell times integrated exactly.  Only whole bins are kept.

    Returns
    -------
    (PhotonHistogram, CountSeries)
    """
    if lambda_bright < 0 or lambda_dark < 0:
        raise ValueError("emission rates must be >= 0")
    if not bin > 0:
        raise ValueError("bin must be positive")
    duration_ms = trace.duration / 1000.0
    n = int(math.floor(duration_ms / bin + 1e-9))
    edges_ms = bin * np.arange(n + 1)
    t_bright = trace.bright_time_in(edges_ms * 1000.0) / 1000.0
    expected = lambda_bright * t_bright + lambda_dark * (bin - t_bright)
    counts = make_rng(seed).poisson(expected)
    return PhotonHistogram.from_counts(counts, bin), CountSeries(edges_ms, expected, counts)


def _component_logpmf(k, lam):
    return xlogy(k, lam) - lam - gammaln(k + 1.0)


@dataclass(frozen=True, eq=False)
class MixtureFit:
    lambda_dark: float
    lambda_bright: float
    p_bright: float
    log_likelihood: float
    iterations: int
    converged: bool
    ll_history: np.ndarray = field(repr=False)
    n_bins: float = 0.0
    low_data: bool = False
    single_component: bool = False
    ci95: tuple = (math.nan, math.nan, math.nan)

    def report(self):
        names = ("lambda_dark", "lambda_bright", "p_bright")
        values = (self.lambda_dark, self.lambda_bright, self.p_bright)
        lines = ["two-Poisson mixture fit"]
        for n, v, c in zip(names, values, self.ci95):
            lines.append(f"  {n:<14s} = {v:.6g} +/- {c:.3g} (95%)")
        lines += [f"  log_likelihood = {self.log_likelihood:.10g}",
                  f"  iterations     = {self.iterations}",
                  f"  converged      = {self.converged}",
                  f"  bins           = {self.n_bins:g}",
                  f"  single_component = {self.single_component}"]
        if self.low_data:
            lines.append("  WARNING: fewer than 100 bins")
        return "\n".join(lines)


def _quartile_means(values, weights):
    """Weighted means of the lowest and highest quarters of the mass."""
    cw = np.cumsum(weights)
    total = cw[-1]
    prev = cw - weights

    def tail_mean(lo, hi):
        take = np.clip(np.minimum(cw, hi) - np.maximum(prev, lo), 0.0, None)
        return float(np.dot(take, values) / take.sum())

    return tail_mean(0.0, 0.25 * total), tail_mean(0.75 * total, total)


def _loglik(k, w, lam_d, lam_b, p):
    with np.errstate(divide="ignore"):
        a = np.log(p) + _component_logpmf(k, lam_b) if p > 0 else np.full(k.shape, -np.inf)
        b = np.log1p(-p) + _component_logpmf(k, lam_d) if p < 1 else np.full(k.shape, -np.inf)
    joint = np.logaddexp(a, b)
    return float(np.dot(w, joint)), a - joint


def _em(k, w, lam_d, lam_b, p, fix_rates, tol, max_iter):
    ll, log_r = _loglik(k, w, lam_d, lam_b, p)
    history = [ll]
    total = w.sum()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r = np.exp(log_r)
        wb = np.dot(w, r)
        wd = total - wb
        p_new = wb / total
        lb_new = np.dot(w * r, k) / wb if (not fix_rates and wb > 0) else lam_b
        ld_new = np.dot(w * (1 - r), k) / wd if (not fix_rates and wd > 0) else lam_d
        change = max(abs(p_new - p), abs(lb_new - lam_b), abs(ld_new - lam_d))
        lam_d, lam_b, p = ld_new, lb_new, p_new
        ll_new, log_r = _loglik(k, w, lam_d, lam_b, p)
        if ll_new < ll - 1e-9 * max(1.0, abs(ll)):
            raise RuntimeError(f"EM log-likelihood decreased: {ll} -> {ll_new}")
        ll = ll_new
        history.append(ll)
        if change < tol:
            converged = True
            break
    return lam_d, lam_b, p, ll, it, converged, np.array(history)


def _observed_ci(k, w, lam_d, lam_b, p):
    """95% half-widths from the numerical observed information matrix."""
    theta = np.array([lam_d, lam_b, p])

    def f(t):
        if t[0] < 0 or t[1] < 0 or not 0 <= t[2] <= 1:
            return np.nan
        return _loglik(k, w, *t)[0]

    h = 1e-4 * np.maximum(np.abs(theta), 1e-2)
    hess = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            ei = np.eye(3)[i] * h[i]
            ej = np.eye(3)[j] * h[j]
            hess[i, j] = (f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej)
                          + f(theta - ei - ej)) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(-hess)
        diag = np.diag(cov)
        return tuple(float(1.96 * math.sqrt(d)) if d >= 0 else math.nan for d in diag)
    except np.linalg.LinAlgError:
        return (math.nan, math.nan, math.nan)


def em_fit_poisson_mixture(hist: PhotonHistogram, init=None, *, fix_rates=False,
                           restarts=3, seed=0, tol=1e-8, max_iter=10_000,
                           select_components=True) -> MixtureFit:
    """Fit a bright/dark two-Poisson mixture to ``hist`` by EM.

    Parameters
    ----------
    init : (lambda_dark, lambda_bright, p_bright), optional
        Starting point.  Default: means of the lower and upper quarters of
        the histogram mass with ``p = 0.5``, plus ``restarts`` seeded
        perturbations of it; the best log-likelihood wins.
    fix_rates : bool
        Hold both Poisson means at ``init`` and estimate only ``p_bright``.
    select_components : bool
        When BIC prefers a single Poisson, report it as an all-bright
        population (``p_bright = 1``, ``lambda_dark = 0``).

    Raises
    ------
    ValueError
        If the histogram has a single support point.
    """
    k = hist.values.astype(float)
    w = hist.occurrences
    keep = w > 0
    k, w = k[keep], w[keep]
    if k.size < 2:
        raise ValueError("degenerate histogram: a single photon number cannot "
                         "identify two Poisson components")
    total = float(w.sum())
    low_data = total < 100
    if low_data:
        warnings.warn("fewer than 100 readout bins; mixture estimate is unreliable",
                      stacklevel=2)

    if fix_rates:
        if init is None:
            raise ValueError("fix_rates needs init=(lambda_dark, lambda_bright, p)")
        starts = [tuple(init)]
    else:
        if init is None:
            lo, hi = _quartile_means(k, w)
            if hi <= lo:
                lo, hi = 0.5 * lo, 1.5 * hi + 0.5
            # a zero mean is a fixed point of EM, so never start there
            lo = max(lo, 0.1 * float(np.dot(w, k) / w.sum()), 1e-3)
            init = (lo, hi, 0.5)
        starts = [tuple(init)]
        rng = make_rng(seed)
        for _ in range(restarts):
            f = np.exp(rng.normal(0.0, 0.5, size=2))
            starts.append((init[0] * f[0], init[1] * f[1], rng.uniform(0.2, 0.8)))

    best = None
    for s in starts:
        res = _em(k, w, float(s[0]), float(s[1]), float(s[2]), fix_rates, tol, max_iter)
        if best is None or res[3] > best[3] + 1e-12 * abs(best[3]):
            best = res
    lam_d, lam_b, p, ll, iters, converged, history = best
    if lam_d > lam_b:
        lam_d, lam_b, p = lam_b, lam_d, 1.0 - p

    if select_components and not fix_rates:
        mean = float(np.dot(w, k) / total)
        ll_one = float(np.dot(w, _component_logpmf(k, mean)))
        if -2 * ll_one + math.log(total) <= -2 * ll + 3 * math.log(total):
            return MixtureFit(0.0, mean, 1.0, ll_one, iters, converged, history, total,
                              low_data, True,
                              (math.nan, float(1.96 * math.sqrt(mean / total)), 0.0))

    ci = _observed_ci(k, w, lam_d, lam_b, p) if not fix_rates else (
        0.0, 0.0, _p_only_ci(k, w, lam_d, lam_b, p))
    return MixtureFit(float(lam_d), float(lam_b), float(p), ll, iters, converged,
                      history, total, low_data, False, ci)


def _p_only_ci(k, w, lam_d, lam_b, p):
    a = np.exp(_component_logpmf(k, lam_b))
    b = np.exp(_component_logpmf(k, lam_d))
    denom = p * a + (1 - p) * b
    info = float(np.dot(w, ((a - b) / denom) ** 2))
    return 1.96 / math.sqrt(info) if info > 0 else math.nan


@dataclass(frozen=True)
class ReadoutResult:
    threshold: int
    fidelity: float
    p_dark_above: float
    p_bright_below: float


def poisson_tail_at_least(theta, lam):
    """``P(X >= theta)`` for ``X ~ Poisson(lam)``."""
    theta = np.asarray(theta)
    return np.where(theta <= 0, 1.0, gammainc(np.maximum(theta, 1), lam))


def poisson_below(theta, lam):
    """``P(X < theta)`` for ``X ~ Poisson(lam)``."""
    theta = np.asarray(theta)
    return np.where(theta <= 0, 0.0, gammaincc(np.maximum(theta, 1), lam))


def optimal_threshold(lambda_dark, lambda_bright) -> ReadoutResult:
    """Integer count threshold minimising the mean misassignment error.

    Counts ``>= threshold`` are called bright.  Ties go to the smaller
    threshold.
    """
    if not lambda_bright > lambda_dark:
        raise ValueError("lambda_bright must exceed lambda_dark")
    if lambda_dark < 0:
        raise ValueError("lambda_dark must be >= 0")
    top = int(math.ceil(lambda_bright) + math.ceil(10 * math.sqrt(lambda_bright))) + 1
    theta = np.arange(top + 1)
    dark_above = poisson_tail_at_least(theta, lambda_dark)
    bright_below = poisson_below(theta, lambda_bright)
    err = 0.5 * (dark_above + bright_below)
    i = int(np.argmin(err))
    return ReadoutResult(int(theta[i]), float(1.0 - err[i]), float(dark_above[i]),
                         float(bright_below[i]))


@dataclass(frozen=True)
class ReadoutStack:
    """Everything needed to simulate a bias-dependent readout histogram."""

    geometry: DeviceGeometry = DeviceGeometry()
    bands: BandParameters = BandParameters()
    levels: ChargeLevels = ChargeLevels()
    rates: RateModel = RateModel()
    readout_power: float = 1e-5  # mW/um^2; sets ms-to-s switching under resonant readout
    lambda_bright: float = 0.625  # counts/ms
    lambda_dark: float = 0.0125  # counts/ms
    bin_duration: float = 8.0  # ms
    n_bins: int = 2000
    seed: int = 0


@dataclass(frozen=True, eq=False)
class PopulationCurve:
    voltages: np.ndarray
    p_bright: np.ndarray
    v_threshold: float
    histograms: tuple
    calibration: MixtureFit
    fits: tuple

    def crossing(self):
        """Linearly interpolated voltage where ``p_bright`` crosses 0.5."""
        v, p = self.voltages, self.p_bright
        order = np.argsort(v)
        v, p = v[order], p[order]
        for i in range(len(v) - 1):
            if (p[i] - 0.5) * (p[i + 1] - 0.5) <= 0 and p[i] != p[i + 1]:
                return float(v[i] + (0.5 - p[i]) * (v[i + 1] - v[i]) / (p[i + 1] - p[i]))
        return math.nan


def population_vs_voltage(defect, voltages, stack: ReadoutStack = ReadoutStack()) -> PopulationCurve:
    """Simulated single-shot bright population versus gate bias.

    For every voltage a telegraph trajectory is simulated around the
    defect's VV0/VV- transition voltage and converted to a count histogram.
    The Poisson means are calibrated from a free fit to the pooled
    histograms, then ``p_bright`` is fitted per voltage with those means.
    """
    voltages = np.asarray(voltages, dtype=float)
    if voltages.size == 0:
        raise ValueError("voltage list is empty")
    _, v_t = transition_voltages(defect, stack.geometry, stack.bands, stack.levels)
    s = stack.bands.bias_polarity
    duration = stack.n_bins * stack.bin_duration * 1000.0
    seeds = child_seeds(stack.seed, 2 * voltages.size)
    hists = []
    for i, v in enumerate(voltages):
        # dark side is s*(v - v_t) > 0
        trace = simulate_telegraph(stack.rates, stack.readout_power, s * v, duration,
                                   seeds[2 * i], v_threshold=s * v_t)
        h, _ = generate_counts(trace, stack.lambda_bright, stack.lambda_dark,
                               stack.bin_duration, seeds[2 * i + 1])
        hists.append(h)

    pooled = hists[0]
    for h in hists[1:]:
        pooled = pooled + h
    calib = em_fit_poisson_mixture(pooled, seed=stack.seed)
    if calib.single_component:
        lam_d = stack.lambda_dark * stack.bin_duration
        lam_b = stack.lambda_bright * stack.bin_duration
    else:
        lam_d, lam_b = calib.lambda_dark, calib.lambda_bright
    fits = []
    for h in hists:
        fits.append(em_fit_poisson_mixture(h, (lam_d, lam_b, 0.5), fix_rates=True))
    p = np.array([f.p_bright for f in fits])
    return PopulationCurve(voltages, p, float(v_t), tuple(hists), calib, tuple(fits))
