"""oscidamp: asymptotically time-optimal damping of oscillator banks.

A bank of harmonic oscillators driven by one bounded scalar force can be
steered to rest at a strictly positive speed by the bang-bang feedback
u(x) = -sign <B, grad rho(x)>, where rho is the gauge of the asymptotic
reachable body. This package provides the reachable-set geometry (support
function, gauge, momentum solve), the feedback simulator with switching
detection, the observability machinery behind the decay estimate, and a CLI
for reproducible experiments.
"""

__version__ = "0.1.0"

from .controller import (
    DecayReport,
    Trajectory,
    adjoint_residual,
    decay_report,
    default_cutoff,
    feedback_control,
    polar_residual,
    simulate,
    write_trajectory_csv,
)
from .geometry import (
    GaugeNorm,
    Momentum,
    MomentumTracker,
    QuadratureSpec,
    SupportFunction,
    gauge,
    gauge_gradient,
    gauge_hessian_apply,
    rotate_momentum,
    solve_momentum,
    support,
    support_gradient,
)
from .model import (
    ObservablePair,
    OscillatorSystem,
    adjoint_pair,
    build_oscillator_system,
    check_observability,
    flow_matrix,
    system_from_json,
)
from .observability import (
    BrunovskyForm,
    EstimateConfig,
    EstimateReport,
    SampledSignal,
    brunovsky_reduce,
    canonical_residual,
    chain_pair,
    estimate_apriori_constant,
    kolmogorov_ratio,
    observation_relation_residual,
    phi_map,
    reconstruct_state,
    sampled_derivative,
)

__all__ = [
    "__version__",
    "BrunovskyForm",
    "DecayReport",
    "EstimateConfig",
    "EstimateReport",
    "GaugeNorm",
    "Momentum",
    "MomentumTracker",
    "ObservablePair",
    "OscillatorSystem",
    "QuadratureSpec",
    "SampledSignal",
    "SupportFunction",
    "Trajectory",
    "adjoint_pair",
    "adjoint_residual",
    "brunovsky_reduce",
    "build_oscillator_system",
    "canonical_residual",
    "chain_pair",
    "check_observability",
    "decay_report",
    "default_cutoff",
    "estimate_apriori_constant",
    "feedback_control",
    "flow_matrix",
    "gauge",
    "gauge_gradient",
    "gauge_hessian_apply",
    "kolmogorov_ratio",
    "observation_relation_residual",
    "phi_map",
    "polar_residual",
    "reconstruct_state",
    "rotate_momentum",
    "sampled_derivative",
    "simulate",
    "solve_momentum",
    "support",
    "support_gradient",
    "system_from_json",
    "write_trajectory_csv",
]
