"""Optically driven VV0 <-> VV- switching.

Rates are in 1/us, optical power density in mW/um^2, times in us.

Two regimes are modelled:

* fixed bias: a two-state continuous-time Markov chain whose rates are
  gated by the bias relative to the charge-transition voltage
  (:func:`simulate_telegraph`);
* bias steps between ``v_low`` (bright) and ``v_high`` (dark): the
  bright -> dark edge is a plain exponential, the dark -> bright edge converts
  after a delay ``tau_charge`` with a logistic spread of width ``1/gamma_-0``
  (:func:`step_response_trace`).  Conversion times drawn from that law give
  the sigmoid occupancy exactly in the ensemble mean; conversion times
  before the edge count as already bright.

Random numbers come from numpy's PCG64 generator seeded through
``SeedSequence``; every trace records the integer seed it was drawn with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .charge import ChargeState


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_seeds(seed, n):
    """``n`` independent integer seeds derived from ``seed``."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class RateModel:
    """Linear-in-power switching rates and the charging-delay law.

    ``tau_charge = (delay_alpha + delay_beta * (v_high - v_low)) / power``.
    ``switch_width`` (V) sets how sharply the fixed-bias rates hand over
    from the bright to the dark side of the transition voltage; 0 gives a
    hard switch.
    """

    slope_0_minus: float = 1.0 / 3.0
    slope_minus_0: float = 1.0 / 3.0
    delay_alpha: float = 2.0
    delay_beta: float = 0.5
    v_low: float = 4.0
    v_high: float = 8.0
    switch_width: float = 0.5

    def __post_init__(self):
        if self.slope_0_minus < 0 or self.slope_minus_0 < 0:
            raise ValueError("rate slopes must be >= 0")
        if self.delay_alpha < 0 or self.delay_beta < 0:
            raise ValueError("delay coefficients must be >= 0")
        if not self.v_high > self.v_low:
            raise ValueError("v_high must exceed v_low")
        if self.switch_width < 0:
            raise ValueError("switch_width must be >= 0")

    def charging_delay(self, power, v_high=None):
        """Delay (us) of the dark -> bright edge after the bias drops."""
        if power < 0:
            raise ValueError("optical power must be >= 0")
        if power == 0:
            raise ValueError("zero optical power gives an infinite charging delay")
        v_high = self.v_high if v_high is None else v_high
        return (self.delay_alpha + self.delay_beta * (v_high - self.v_low)) / power


def rates_from_power(model: RateModel, power):
    """``(gamma_0-, gamma_-0)`` in 1/us at optical power density ``power``.

    The calibration is linear; it is only meaningful within roughly
    0.3-15 mW/um^2 for off-resonant pumping.
    """
    if power < 0:
        raise ValueError("optical power must be >= 0")
    return model.slope_0_minus * power, model.slope_minus_0 * power


def gated_rates(model: RateModel, power, v_gate, v_threshold):
    """Fixed-bias rates: bright -> dark switches off below ``v_threshold``
    and dark -> bright switches off above it."""
    g0m, gm0 = rates_from_power(model, power)
    if model.switch_width == 0:
        if v_gate < v_threshold:
            return 0.0, gm0
        if v_gate > v_threshold:
            return g0m, 0.0
        return g0m, gm0
    w = float(expit((v_gate - v_threshold) / model.switch_width))
    return g0m * w, gm0 * (1.0 - w)


def occupancy_after_step(model: RateModel, power, direction, t, v_high=None):
    """Probability of VV0 a time ``t`` (us) after a bias edge.

    ``direction="to_dark"`` is the low -> high edge, ``exp(-gamma_0- t)``;
    ``"to_bright"`` is high -> low, ``1/(1 + exp(-(t - tau)*gamma_-0))``.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    g0m, gm0 = rates_from_power(model, power)
    if direction == "to_dark":
        out = np.exp(-g0m * t)
    elif direction == "to_bright":
        tau = model.charging_delay(power, v_high)
        out = expit((t - tau) * gm0)
    else:
        raise ValueError(f"direction must be 'to_dark' or 'to_bright', got {direction!r}")
    return float(out) if out.ndim == 0 else out


def _mean_over_bins(model, power, direction, lo, hi, v_high=None):
    """Analytic occupancy averaged over ``[lo, hi)`` intervals."""
    g0m, gm0 = rates_from_power(model, power)
    width = hi - lo
    if direction == "to_dark":
        if g0m == 0:
            return np.ones_like(lo)
        return (np.exp(-g0m * lo) - np.exp(-g0m * hi)) / (g0m * width)
    tau = model.charging_delay(power, v_high)
    return (np.logaddexp(0, gm0 * (hi - tau)) - np.logaddexp(0, gm0 * (lo - tau))) / (gm0 * width)


@dataclass(frozen=True, eq=False)
class TelegraphTrace:
    """Piecewise-constant charge trajectory.

    ``times[i]`` is when segment ``i`` starts (``times[0] == 0``) and
    ``bright[i]`` whether it is VV0; the trace ends at ``duration``.
    """

    times: np.ndarray
    bright: np.ndarray
    duration: float
    rng_seed: int

    def __post_init__(self):
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("segment times must increase strictly")
        if self.bright.size > 1 and np.any(self.bright[1:] == self.bright[:-1]):
            raise ValueError("segments must alternate between VV0 and VV-")

    @property
    def states(self):
        return [ChargeState.VV_0 if b else ChargeState.VV_minus for b in self.bright]

    @property
    def n_transitions(self):
        return max(len(self.times) - 1, 0)

    def segment_bounds(self):
        ends = np.append(self.times[1:], self.duration)
        return self.times, ends

    def bright_time_in(self, edges):
        """Exact VV0 dwell time inside each ``[edges[k], edges[k+1])``."""
        edges = np.asarray(edges, dtype=float)
        starts, ends = self.segment_bounds()
        starts, ends = starts[self.bright], ends[self.bright]
        if starts.size == 0:
            return np.zeros(edges.size - 1)
        lengths = ends - starts
        before = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])
        j = np.searchsorted(starts, edges, side="right") - 1
        jc = np.maximum(j, 0)
        cum = np.where(j >= 0, before[jc] + np.clip(edges - starts[jc], 0.0, lengths[jc]), 0.0)
        return np.diff(cum)

    def occupancy(self):
        """Fraction of the trace spent in VV0."""
        return float(self.bright_time_in([0.0, self.duration])[0] / self.duration)


def simulate_telegraph(model: RateModel, power, v_gate, duration, seed, *,
                       v_threshold=None, initial_bright=None) -> TelegraphTrace:
    """Gillespie trajectory of the two-state charge chain at fixed bias.

    ``v_threshold`` defaults to the midpoint of ``v_low`` and ``v_high``.
    The initial state is drawn from the stationary distribution unless
    ``initial_bright`` is given.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    if v_threshold is None:
        v_threshold = 0.5 * (model.v_low + model.v_high)
    g0m, gm0 = gated_rates(model, power, v_gate, v_threshold)
    rng = make_rng(seed)
    if initial_bright is None:
        if g0m + gm0 > 0:
            initial_bright = bool(rng.random() < gm0 / (g0m + gm0))
        else:
            initial_bright = bool(v_gate <= v_threshold)
    state = bool(initial_bright)

    times = [0.0]
    t = 0.0
    # draw dwell times in blocks; the chain alternates, so rates alternate too
    while True:
        rate_now = g0m if state else gm0
        if rate_now == 0:
            break
        rate_next = gm0 if state else g0m
        if rate_next == 0:
            dwell = rng.exponential(1.0 / rate_now)
            if t + dwell < duration:
                times.append(t + dwell)
                state = not state
            break
        expected = max(16, int(2.2 * (duration - t) / (1 / g0m + 1 / gm0)) + 16)
        e = rng.standard_exponential(2 * expected)
        scale = np.empty_like(e)
        scale[0::2] = 1.0 / rate_now
        scale[1::2] = 1.0 / rate_next
        jumps = t + np.cumsum(e * scale)
        inside = jumps[jumps < duration]
        times.extend(inside.tolist())
        if inside.size % 2:
            state = not state
        if inside.size < jumps.size:
            break
        t = float(jumps[-1])
    times = np.asarray(times)
    bright = np.empty(times.size, dtype=bool)
    bright[0::2] = initial_bright
    bright[1::2] = not initial_bright
    return TelegraphTrace(times, bright, float(duration), int(seed))


@dataclass(frozen=True, eq=False)
class StepResponse:
    """Cycle-averaged VV0 occupancy over a square-wave bias.

    Each cycle starts with the low -> high (to-dark) edge at ``t = 0``; the
    high -> low (to-bright) edge is at ``t = half_period``.
    """

    time: np.ndarray  # bin centres, us
    edges: np.ndarray
    occupancy: np.ndarray
    pl: np.ndarray  # expected counts per bin per cycle
    half_period: float
    n_cycles: int
    power: float
    v_high: float
    seed: int

    def _segment(self, first):
        mask = self.time < self.half_period if first else self.time >= self.half_period
        offset = 0.0 if first else self.half_period
        return self.time[mask] - offset, self.edges[:-1][mask] - offset, \
            self.edges[1:][mask] - offset, mask

    def to_dark(self):
        t, _, _, mask = self._segment(True)
        return t, self.occupancy[mask]

    def to_bright(self):
        t, _, _, mask = self._segment(False)
        return t, self.occupancy[mask]

    def analytic(self, model: RateModel):
        """Bin-averaged analytic occupancy on the same bins."""
        out = np.empty_like(self.occupancy)
        for first, direction in ((True, "to_dark"), (False, "to_bright")):
            _, lo, hi, mask = self._segment(first)
            out[mask] = _mean_over_bins(model, self.power, direction, lo, hi, self.v_high)
        return out


def default_half_period(model: RateModel, power, v_high=None):
    """Half period long enough for both edges to settle to ~1e-4."""
    g0m, gm0 = rates_from_power(model, power)
    if g0m == 0 or gm0 == 0:
        raise ValueError("both switching rates must be positive")
    tau = model.charging_delay(power, v_high)
    return max(10.0 / g0m, tau + 10.0 / gm0)


def step_response_trace(model: RateModel, power, bin, n_cycles, seed, *,
                        half_period=None, v_high=None, bright_rate=0.625,
                        dark_rate=0.0125) -> StepResponse:
    """Ensemble PL response to a square-wave bias under constant pumping.

    The ``v_high`` phase only converts bright -> dark (rate ``gamma_0-``); the
    ``v_low`` phase only converts dark -> bright with the delayed logistic
    law.  ``bright_rate``/``dark_rate`` are emission rates in counts/ms and
    scale the occupancy into expected counts per bin.
    """
    if not bin > 0:
        raise ValueError("bin must be positive")
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    v_high = model.v_high if v_high is None else v_high
    g0m, gm0 = rates_from_power(model, power)
    tau = model.charging_delay(power, v_high)
    if half_period is None:
        half_period = default_half_period(model, power, v_high)
    n_half = int(math.ceil(half_period / bin))
    half_period = n_half * bin
    edges = bin * np.arange(2 * n_half + 1)

    rng = make_rng(seed)
    u_dark = rng.standard_exponential(n_cycles)
    u_conv = rng.random(n_cycles)
    t_dark = u_dark / g0m if g0m > 0 else np.full(n_cycles, np.inf)
    with np.errstate(divide="ignore"):
        logit = np.log(u_conv) - np.log1p(-u_conv)
    t_conv = tau + logit / gm0 if gm0 > 0 else np.full(n_cycles, np.inf)

    # bright intervals per cycle, in cycle time
    lo1 = np.zeros(n_cycles)
    hi1 = np.zeros(n_cycles)
    lo2 = np.full(n_cycles, half_period)
    hi2 = np.full(n_cycles, 2 * half_period)
    bright_at_edge = True  # steady state at v_low
    for c in range(n_cycles):
        if bright_at_edge:
            hi1[c] = min(t_dark[c], half_period)
            dark_at_low = t_dark[c] < half_period
        else:
            dark_at_low = True
        if dark_at_low:
            start = half_period + max(t_conv[c], 0.0)
            lo2[c] = min(start, 2 * half_period)
            bright_at_edge = t_conv[c] < half_period
        else:
            bright_at_edge = True

    def overlap(lo, hi):
        a = np.clip(lo[:, None], edges[None, :-1], edges[None, 1:])
        b = np.clip(hi[:, None], edges[None, :-1], edges[None, 1:])
        return (b - a).sum(axis=0)

    occ = np.zeros(edges.size - 1)
    chunk = 4096
    for s in range(0, n_cycles, chunk):
        sl = slice(s, s + chunk)
        occ += overlap(lo1[sl], hi1[sl]) + overlap(lo2[sl], hi2[sl])
    occ /= n_cycles * bin
    bin_ms = bin / 1000.0
    pl = (dark_rate + occ * (bright_rate - dark_rate)) * bin_ms
    centres = 0.5 * (edges[:-1] + edges[1:])
    return StepResponse(centres, edges, occ, pl, half_period, n_cycles, power, v_high, int(seed))
