"""Particle simulation and verification toolkit for mean-field SDEs whose
coefficients may be log-Lipschitz rather than Lipschitz: a coupled
Euler-Maruyama solver on dyadic grids plus moment, metric, increment-scaling
and strong-rate diagnostics."""

from .measure import (
    EmpiricalMeasure,
    TestFunction,
    TestFunctionDictionary,
    default_dictionary,
    dirac,
    lambda2_norm_squared,
    rho_lower,
    rho_upper,
    uniform_measure,
    validate_test_function,
)
from .models import (
    CATALOG,
    CoefficientModel,
    ModulusKappaEta,
    check_h2prime,
    check_linear_growth,
    diffusion_eval,
    drift_eval,
    gamma_log,
    kappa_eta,
    make_model,
    mf_ou,
    osgood,
    sznitman,
    with_mf_ou_oracles,
)
from .paths import (
    BrownianLattice,
    DyadicGrid,
    coarsen,
    dump_lattice,
    load_lattice,
    make_grid,
    particle_increments,
    sample_lattice,
)
from .solver import (
    BlowUpError,
    GaussianLaw,
    ParticleEnsemble,
    PointMass,
    TrajectorySet,
    UniformBox,
    em_multilevel,
    em_run,
    run_single,
    sample_initial,
    to_measure,
)
from .analysis import (
    bihari_ode_check,
    fit_rate,
    increment_scaling,
    law_gap_curve,
    moment_curve,
    osgood_integral,
    strong_error,
    uniqueness_replay,
)

__version__ = "0.1.0"
