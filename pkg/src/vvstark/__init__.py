"""Electrical tuning of divacancy color centers in 4H-SiC.

Forward models for gate electrostatics, Stark-shifted optical transitions,
charge-state stability and switching kinetics, photon-count readout, and the
least-squares / mixture estimators used to analyse them.
"""

__version__ = "0.1.0"

from .electrostatics import (
    BandParameters,
    DeviceGeometry,
    FieldSolution,
    FieldVector,
    GatePatch,
    GridSpec,
    depletion_width,
    field_at,
    four_gate_layout,
    solve_laplace,
    transition_voltage_for_distance,
    uniform_vertical_field,
)
from .stark import (
    DefectConfig,
    LaserScan,
    TransitionPair,
    linearized_shift,
    ple_spectrum,
    stark_map,
    transition_frequencies,
)
from .charge import (
    ChargeLevels,
    ChargeState,
    band_profile,
    is_quenched_by_transverse_field,
    steady_charge_state,
)
from .kinetics import (
    RateModel,
    TelegraphTrace,
    occupancy_after_step,
    rates_from_power,
    simulate_telegraph,
    step_response_trace,
)
from .photons import (
    MixtureFit,
    PhotonHistogram,
    ReadoutResult,
    em_fit_poisson_mixture,
    generate_counts,
    optimal_threshold,
    population_vs_voltage,
)
from .fitting import FitResult, ModelFunction, fit, jacobian_check
