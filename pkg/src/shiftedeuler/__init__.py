"""Monte Carlo for diffusions stopped at the boundary of (time-dependent) domains.

The Euler scheme is monitored at grid times only; the shifted stopping rule
moves the boundary inward by ``c0 * sqrt(dt) * |grad F sigma|`` to compensate
for exits missed between grid times.
"""

from .exit_sim import ExitBatch, ExitRecord, StoppingMode, simulate_paths, simulate_until_exit
from .feynman_kac import EstimateReport, FeynmanKacProblem, monte_carlo_compare, monte_carlo_estimate
from .geometry import Ball, HalfSpace, MovingInterval, UserDefined
from .overshoot_dist import C0, c0_analytic
from .sde import NoiseStream, SdeModel, brownian_motion, scaled_brownian_motion, section6_model

__version__ = "0.1.0"
