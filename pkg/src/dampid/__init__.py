"""Damping-factor identification for second-order LTI systems.

Simulates a discrete (Tustin) second-order system, extracts short-time
Fourier features from input/output windows, and trains small gated
recurrent networks (GRU / LSTM / BiLSTM) to regress the damping factor.
"""

__version__ = "0.1.0"

from dampid.sim import (
    CanonicalParams,
    DiscreteStateSpace,
    OverdampedExcludedError,
    PhysicalParams,
    Ramp,
    Sine,
    Step,
    Trajectory,
    analytic_step_response,
    add_measurement_noise,
    canonical_from_physical,
    generate_input,
    poles,
    simulate,
    tustin_discretize,
)

__all__ = [
    "CanonicalParams",
    "DiscreteStateSpace",
    "OverdampedExcludedError",
    "PhysicalParams",
    "Ramp",
    "Sine",
    "Step",
    "Trajectory",
    "analytic_step_response",
    "add_measurement_noise",
    "canonical_from_physical",
    "generate_input",
    "poles",
    "simulate",
    "tustin_discretize",
]
