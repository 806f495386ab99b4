"""Independent reference computations and the values frozen from them.

Nothing here imports the package.  Constants are CODATA literals, Poisson
tails are explicit sums, and the frozen numbers below were produced by the
functions in this file (see ``test_oracles_reproduce_frozen_values``).
"""

import math

EPS0 = 8.8541878128e-12  # F/m
QE = 1.602176634e-19  # C


def uniform_field(v, thickness_um=120.0, eps=9.6):
    """V/(t eps) in MV/m (V/um is numerically MV/m)."""
    return v / (thickness_um * eps)


def depletion_width_um(phi, eps=9.6, nd_cm3=2.5e14):
    return math.sqrt(2 * eps * EPS0 * abs(phi) / (QE * nd_cm3 * 1e6)) * 1e6


def transition_voltage(r_um, eps=9.6, nd_cm3=2.5e14, phi_bi=4.3 - 4.17):
    """Bias at which the depletion edge reaches ``r_um``."""
    return (r_um * 1e-6) ** 2 * QE * nd_cm3 * 1e6 / (2 * eps * EPS0) - phi_bi


def splitting(delta, dd_perp, f_perp):
    """Closed-form Ex - Ey splitting of the 2x2 orbital block."""
    return 2 * math.hypot(delta[0] + dd_perp * f_perp[0], delta[1] + dd_perp * f_perp[1])


def poisson_pmf(k, lam):
    if lam == 0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))


def readout_fidelity(theta, lam_dark, lam_bright):
    """1 - mean misassignment for 'bright iff counts >= theta', by direct sums."""
    dark_above = 1.0 - math.fsum(poisson_pmf(k, lam_dark) for k in range(theta))
    bright_below = math.fsum(poisson_pmf(k, lam_bright) for k in range(theta))
    return 1.0 - 0.5 * (dark_above + bright_below)


def brute_force_threshold(lam_dark, lam_bright, top=60):
    best = max(range(top), key=lambda t: (readout_fidelity(t, lam_dark, lam_bright), -t))
    return best, readout_fidelity(best, lam_dark, lam_bright)


def exp_occupancy(t, rate):
    return math.exp(-rate * t)


def sigmoid_occupancy(t, tau, rate):
    return 1.0 / (1.0 + math.exp(-(t - tau) * rate))


def stationary_bright(g_to_dark, g_to_bright):
    return g_to_bright / (g_to_dark + g_to_bright)


# frozen [DERIVED] values
FIELD_AT_MINUS_300V = -0.2604166666666667  # MV/m
SHIFT_AT_MINUS_300V = -2.6041666666666665  # GHz, dd_par = 10 GHz/(MV/m)
WD_013V = 0.7427992460338271  # um
WD_100V = 20.601544376545807  # um
VT_10UM = 23.431364817353938  # V
VT_5UM = 5.760341204338484  # V
THRESHOLD_01_5 = 2
FIDELITY_01_5 = 0.9774467389225213
