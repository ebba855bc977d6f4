"""Observer-based boundary stabilization of drift-reaction-diffusion plants
on boxes: eigenbasis computation, controller synthesis, Lyapunov decay
certificates and closed-loop simulation."""

from .spectral_basis import (
    Eigenpair,
    FaceId,
    PlantConfig,
    conormal_trace,
    count_unstable,
    enumerate_eigenpairs,
    eval_phi,
    eval_psi,
    riesz_constants,
)
from .lifting import (
    LiftedProjectionTable,
    LiftingContext,
    boundary_inner,
    build_projection_table,
    gram_matrix,
    lambda_gamma,
    lifted_projection,
    residual_norm_sq,
)
from .synthesis import (
    SynthesisArtifacts,
    assemble_F,
    control_trace,
    place_observer_gain,
    select_eta,
    select_gamma_ladder,
    synthesize,
    validate_sensors,
)
from .certification import (
    Certificate,
    certify,
    check_psi,
    check_theta1,
    compute_S1,
    compute_S2,
    compute_Sphi,
    solve_lyapunov,
)
from .simulation import (
    ClosedLoop,
    SimState,
    SimulationRun,
    estimate_decay_rate,
    init_state,
    run,
    write_csv,
)
from .cli import RunConfig, main, parse_config

__version__ = "0.1.0"

__all__ = [
    "Eigenpair",
    "FaceId",
    "PlantConfig",
    "conormal_trace",
    "count_unstable",
    "enumerate_eigenpairs",
    "eval_phi",
    "eval_psi",
    "riesz_constants",
    "LiftedProjectionTable",
    "LiftingContext",
    "boundary_inner",
    "build_projection_table",
    "gram_matrix",
    "lambda_gamma",
    "lifted_projection",
    "residual_norm_sq",
    "SynthesisArtifacts",
    "assemble_F",
    "control_trace",
    "place_observer_gain",
    "select_eta",
    "select_gamma_ladder",
    "synthesize",
    "validate_sensors",
    "Certificate",
    "certify",
    "check_psi",
    "check_theta1",
    "compute_S1",
    "compute_S2",
    "compute_Sphi",
    "solve_lyapunov",
    "ClosedLoop",
    "SimState",
    "SimulationRun",
    "estimate_decay_rate",
    "init_state",
    "run",
    "write_csv",
    "RunConfig",
    "main",
    "parse_config",
    "__version__",
]
