"""Weighted nonlinear least squares with covariance-based 95% intervals.

The minimiser is Levenberg-Marquardt (Gauss-Newton damped with Marquardt's
diagonal scaling), with simple box bounds enforced by projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

Z95 = 1.96


class RankDeficiencyError(np.linalg.LinAlgError):
    """Normal equations are singular; ``combination`` names the null direction."""

    def __init__(self, combination):
        super().__init__(f"parameters are not identifiable: {combination} is unconstrained")
        self.combination = combination


@dataclass(frozen=True)
class ModelFunction:
    name: str
    param_names: tuple
    func: Callable
    jac: Callable | None = None
    guess: Callable | None = None
    lower: tuple | None = None
    upper: tuple | None = None

    @property
    def n_params(self):
        return len(self.param_names)

    def bounds(self):
        n = self.n_params
        lo = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi

    def __call__(self, x, p):
        return self.func(np.asarray(x, float), np.asarray(p, float))


# -- model forms ---------------------------------------------------------------

def _exp_decay(x, p):
    a, g, b = p
    return a * np.exp(-g * x) + b


def _exp_decay_jac(x, p):
    a, g, _ = p
    e = np.exp(-g * x)
    return np.column_stack([e, -a * x * e, np.ones_like(x)])


def _tail_mean(y, first):
    n = max(1, len(y) // 10)
    return float(np.mean(y[:n] if first else y[-n:]))


def _exp_decay_guess(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    b = _tail_mean(y, False)
    resid = y - b
    sign = 1.0 if _tail_mean(y, True) >= b else -1.0
    mask = sign * resid > 0.05 * max(abs(resid).max(), 1e-300)
    if mask.sum() >= 2:
        slope, icpt = np.polyfit(x[mask], np.log(sign * resid[mask]), 1)
        g = max(-slope, 1e-6 / max(np.ptp(x), 1e-300))
        a = sign * math.exp(icpt)
    else:
        g = 1.0 / max(np.ptp(x), 1e-300)
        a = y[0] - b
    return np.array([a, g, b])


def _sigmoid(x, p):
    a, tau, g, b = p
    return a * expit((x - tau) * g) + b


def _sigmoid_jac(x, p):
    a, tau, g, _ = p
    s = expit((x - tau) * g)
    ds = s * (1 - s)
    return np.column_stack([s, -a * g * ds, a * (x - tau) * ds, np.ones_like(x)])


def _sigmoid_guess(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    lo, hi = _tail_mean(y, True), _tail_mean(y, False)
    a, b = hi - lo, lo
    frac = (y - b) / a if a != 0 else np.full_like(y, 0.5)

    def crossing(level):
        i = int(np.argmax(frac >= level)) if np.any(frac >= level) else len(x) - 1
        return x[i]

    tau = crossing(0.5)
    width = crossing(0.9) - crossing(0.1)
    g = 4.394 / width if width > 0 else 10.0 / max(np.ptp(x), 1e-300)
    return np.array([a, tau, g, b])


def _lorentz(x, c, w):
    h = w / 2
    return (h / math.pi) / ((x - c) ** 2 + h * h)


def _lorentzian_pair(x, p):
    c1, c2, a1, a2, w = p
    return a1 * _lorentz(x, c1, w) + a2 * _lorentz(x, c2, w)


def _lorentzian_pair_jac(x, p):
    c1, c2, a1, a2, w = p
    h = w / 2

    def parts(c, a):
        d = x - c
        den = d * d + h * h
        val = (h / math.pi) / den
        dc = a * (h / math.pi) * 2 * d / den**2
        # d/dw through h = w/2
        dw = a * 0.5 * ((1 / math.pi) / den - (h / math.pi) * 2 * h / den**2)
        return val, dc, dw

    v1, dc1, dw1 = parts(c1, a1)
    v2, dc2, dw2 = parts(c2, a2)
    return np.column_stack([dc1, dc2, v1, v2, dw1 + dw2])


def _lorentzian_pair_guess(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    interior = np.flatnonzero((y[1:-1] >= y[:-2]) & (y[1:-1] > y[2:])) + 1
    peaks = interior[np.argsort(y[interior])[::-1]][:2] if interior.size else np.array([int(np.argmax(y))])
    if peaks.size == 1:
        peaks = np.array([peaks[0], peaks[0]])
    i = peaks[0]
    half = y[i] / 2
    left = i
    while left > 0 and y[left] > half:
        left -= 1
    right = i
    while right < len(y) - 1 and y[right] > half:
        right += 1
    w = max(x[right] - x[left], 2 * float(np.min(np.diff(x))))
    amps = [y[j] * math.pi * w / 2 for j in peaks]
    c1, c2 = sorted((x[peaks[0]], x[peaks[1]]), reverse=True)
    a1, a2 = (amps[0], amps[1]) if x[peaks[0]] >= x[peaks[1]] else (amps[1], amps[0])
    return np.array([c1, c2, a1, a2, w])


def _linear(x, p):
    return p[0] * x + p[1]


def _linear_jac(x, p):
    return np.column_stack([x, np.ones_like(x)])


def _linear_guess(x, y):
    return np.polyfit(x, y, 1)


MODELS = {
    "exp_decay": ModelFunction("exp_decay", ("amplitude", "rate", "offset"),
                               _exp_decay, _exp_decay_jac, _exp_decay_guess,
                               (-np.inf, 1e-12, -np.inf), (np.inf, np.inf, np.inf)),
    "sigmoid": ModelFunction("sigmoid", ("amplitude", "delay", "rate", "offset"),
                             _sigmoid, _sigmoid_jac, _sigmoid_guess,
                             (-np.inf, -np.inf, 1e-12, -np.inf), (np.inf,) * 4),
    "lorentzian_pair": ModelFunction("lorentzian_pair",
                                     ("center_1", "center_2", "area_1", "area_2", "fwhm"),
                                     _lorentzian_pair, _lorentzian_pair_jac,
                                     _lorentzian_pair_guess,
                                     (-np.inf, -np.inf, -np.inf, -np.inf, 1e-12),
                                     (np.inf,) * 5),
    "linear": ModelFunction("linear", ("slope", "intercept"), _linear, _linear_jac,
                            _linear_guess),
}


def get_model(model):
    if isinstance(model, ModelFunction):
        return model
    try:
        return MODELS[model]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; choose from {sorted(MODELS)}") from None


# -- numerics ------------------------------------------------------------------

def numeric_jacobian(model: ModelFunction, x, p, rel_step=1e-6):
    """Central-difference Jacobian with step ``rel_step * max(|p_i|, 1)``."""
    p = np.asarray(p, float)
    cols = []
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), 1.0)
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        cols.append((model(x, up) - model(x, dn)) / (up[i] - dn[i]))
    return np.column_stack(cols)


def _richardson_jacobian(model, x, p, rel_step=1e-3):
    coarse = numeric_jacobian(model, x, p, rel_step)
    fine = numeric_jacobian(model, x, p, rel_step / 2)
    return (4 * fine - coarse) / 3


def jacobian_check(model, x, p):
    """Largest relative difference between the analytic and a
    Richardson-extrapolated central-difference Jacobian.

    Elements are compared relative to their own magnitude, floored at
    ``1e-8`` of the largest entry in the same column.
    """
    model = get_model(model)
    if model.jac is None:
        raise ValueError(f"model {model.name!r} has no analytic Jacobian")
    x = np.asarray(x, float)
    analytic = model.jac(x, np.asarray(p, float))
    numeric = _richardson_jacobian(model, x, p)
    scale = np.maximum(np.abs(analytic), 1e-8 * np.abs(analytic).max(axis=0, keepdims=True))
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale))


@dataclass(frozen=True, eq=False)
class FitResult:
    model: str
    param_names: tuple
    parameters: np.ndarray
    covariance: np.ndarray
    ci95: np.ndarray
    residual_norm: float
    reduced_chi2: float
    converged: bool
    iterations: int
    cost_history: list = field(default_factory=list, repr=False)

    def __getitem__(self, name):
        return float(self.parameters[self.param_names.index(name)])

    def report(self):
        lines = [f"model: {self.model}"]
        for n, v, c in zip(self.param_names, self.parameters, self.ci95):
            lines.append(f"  {n:<10s} = {v:.8g} +/- {c:.3g} (95%, covariance-based)")
        lines += [f"  residual_norm = {self.residual_norm:.6g}",
                  f"  reduced_chi2  = {self.reduced_chi2:.6g}",
                  f"  converged     = {self.converged}",
                  f"  iterations    = {self.iterations}"]
        return "\n".join(lines)

    def rows(self):
        return [(n, float(v), float(c)) for n, v, c in
                zip(self.param_names, self.parameters, self.ci95)]


def _null_combination(jac, names):
    scale = np.linalg.norm(jac, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    _, sv, vt = np.linalg.svd(jac / scale, full_matrices=False)
    v = vt[-1] / scale
    v = v / np.abs(v).max()
    terms = [f"{c:+.3g}*{n}" for c, n in zip(v, names) if abs(c) > 1e-3]
    return " ".join(terms) if terms else names[int(np.argmax(np.abs(v)))]


def _check_rank(jac, names, rcond=1e-10):
    scale = np.linalg.norm(jac, axis=0)
    if np.any(scale == 0):
        raise RankDeficiencyError(names[int(np.argmin(scale))])
    sv = np.linalg.svd(jac / scale, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        raise RankDeficiencyError(_null_combination(jac, names))


def fit(model, x, y, sigma=None, p0=None, *, max_iter=500, ftol=1e-10, xtol=1e-12):
    """Minimise ``sum(((y - f(x; p)) / sigma)**2)``.

    Parameters
    ----------
    model : str or ModelFunction
    sigma : array_like, optional
        Per-point standard deviations.  Defaults to ``sqrt(max(y, 1))``.
    p0 : array_like, optional
        Starting parameters; the model's heuristic guess otherwise.

    Returns
    -------
    FitResult
        ``covariance`` is ``(J^T J)^-1`` scaled by the reduced chi-square.

    Raises
    ------
    RankDeficiencyError
        If a parameter combination is not constrained by the data.
    """
    model = get_model(model)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1D arrays of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("data must be finite")
    n_par = model.n_params
    if x.size < 2 * n_par:
        raise ValueError(f"need at least {2 * n_par} points for {n_par} parameters")
    sigma = np.sqrt(np.maximum(y, 1.0)) if sigma is None else np.broadcast_to(
        np.asarray(sigma, float), y.shape)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    lo, hi = model.bounds()
    p = np.clip(np.asarray(model.guess(x, y) if p0 is None else p0, float), lo, hi)

    def residuals(q):
        return (y - model(x, q)) / sigma

    def jacobian(q):
        j = model.jac(x, q) if model.jac is not None else numeric_jacobian(model, x, q)
        return j / sigma[:, None]

    r = residuals(p)
    cost = float(r @ r)
    history = [cost]
    mu = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = jacobian(p)
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        if np.any(diag == 0):
            _check_rank(jac, model.param_names)
        # damping keeps intermediate iterates solvable; identifiability is
        # judged at the optimum
        accepted = False
        while mu < 1e16:
            step = np.linalg.solve(jtj + mu * np.diag(diag), grad)
            trial = np.clip(p + step, lo, hi)
            r_trial = residuals(trial)
            c_trial = float(r_trial @ r_trial)
            if np.isfinite(c_trial) and c_trial <= cost:
                accepted = True
                break
            mu *= 4.0
        if not accepted:
            converged = True  # no downhill direction left
            break
        step_norm = float(np.linalg.norm(trial - p))
        decrease = (cost - c_trial) / cost if cost > 0 else 0.0
        # a small decrease only signals convergence on a near Gauss-Newton step
        settled = decrease < ftol and mu <= 1.0
        p, r, cost = trial, r_trial, c_trial
        history.append(cost)
        mu = max(mu / 3.0, 1e-12)
        if cost == 0.0 or settled or step_norm < xtol * (np.linalg.norm(p) + xtol):
            converged = True
            break

    jac = jacobian(p)
    _check_rank(jac, model.param_names)
    dof = x.size - n_par
    red = cost / dof
    cov = np.linalg.inv(jac.T @ jac) * red
    cov = 0.5 * (cov + cov.T)
    ci = Z95 * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(model.name, model.param_names, p, cov, ci, math.sqrt(cost), red,
                     converged, it, history)
