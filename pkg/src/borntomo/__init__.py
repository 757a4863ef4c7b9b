"""2D nonlinear inverse scattering with multi-layer Born modeling and TV."""

from .autograd import GradientResult, fidelity_and_gradient, fidelity_and_gradient_multi
from .errors import (
    BornTomoError,
    ConvergenceError,
    DimensionError,
    DivergenceError,
    GeometryError,
    InvalidInputError,
)
from .forward import (
    BornTrace,
    LSSolution,
    MeasurementSet,
    estimate_contraction,
    recursive_born,
    simulate_measurements,
    solve_lippmann_schwinger,
)
from .greenops import (
    DomainGreen,
    Operators,
    SensorGreen,
    apply_domain_green,
    apply_domain_green_adjoint,
    apply_sensor_green,
    apply_sensor_green_adjoint,
    build_domain_green,
    build_operators,
    build_sensor_green,
    incident_field,
    incident_fields,
)
from .regopt import (
    ReconstructionReport,
    TVParams,
    data_fit,
    default_tau,
    reconstruct_am,
    reconstruct_fb,
    reconstruct_rb,
    snr_db,
    tv_prox,
    tv_value,
)
from .scene import (
    Grid2D,
    Medium,
    ScatteringPotential,
    Scene,
    SensorArray,
    SourceSet,
    circular_layout,
    epsilon_to_potential,
    potential_to_epsilon,
    shepp_logan,
)

__version__ = "0.1.0"
