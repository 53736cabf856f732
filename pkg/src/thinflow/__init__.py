"""Two-phase incompressible flow in a thin cylinder.

The package solves the fractional-flow form of the Muskat problem on a
cylinder of small radius epsilon, its one-dimensional limit problem with
first-order correctors, and the transverse cell problems that carry the
cross-section profile. A verification layer compares reconstructed
approximations against a full axisymmetric reference solver and fits
empirical convergence rates in epsilon.

Modules
-------
constitutive   phase closures (relative permeability, viscosity, capillary
               pressure) and derived fractional-flow quantities
problem        geometry, coefficients, boundary/initial data, regime
               classification and admissibility validation
cell           mean-zero Neumann problems on the unit disk
reduced1d      the one-dimensional limit problem and its correctors
reference      axisymmetric finite-volume solver for the full problem
reconstruct    assembled approximations, velocities and phase pressures
verify         scaled norms, error sweeps over epsilon, rate fits
config         run-configuration parsing
cli            command-line entry point
"""

from thinflow.constitutive import PhaseClosures, DerivedClosures, build_derived, corey
from thinflow.problem import (
    Geometry,
    CoefficientFields,
    BoundaryForcing,
    Regime,
    ProblemSpec,
    classify,
    qhat,
    validate_problem,
)
from thinflow.reduced1d import (
    Grid1D,
    ReducedSolution,
    SolverError,
    MaxPrincipleError,
    solve_limit,
    solve_corrector,
    solve_with_correctors,
)
from thinflow.reconstruct import (
    ApproxFields,
    CellBank,
    VectorField,
    assemble_state,
    reconstruct_on_mesh,
    reconstruct_phase_pressures,
    reconstruct_velocities,
)
from thinflow.reference import (
    AxisymMesh,
    FullSolution,
    cross_section_mean,
    mass_balance_report,
    solve_reference,
)
from thinflow.verify import (
    DEFAULT_EPS_LADDER,
    NORM_IDS,
    NormSpec,
    RateFit,
    RateReport,
    SweepGrids,
    fit_rate,
    predicted_rate,
    reference_velocities,
    report_from_records,
    scaled_norm,
    sweep,
    write_sweep_artifacts,
)
from thinflow.config import ConfigError, RunConfig, default_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "reconstruct_velocities",
    "reconstruct_phase_pressures",
    "reconstruct_on_mesh",
    "assemble_state",
    "VectorField",
    "CellBank",
    "ApproxFields",
    "PhaseClosures",
    "DerivedClosures",
    "build_derived",
    "corey",
    "Geometry",
    "CoefficientFields",
    "BoundaryForcing",
    "Regime",
    "ProblemSpec",
    "classify",
    "qhat",
    "validate_problem",
    "Grid1D",
    "ReducedSolution",
    "SolverError",
    "MaxPrincipleError",
    "solve_limit",
    "solve_corrector",
    "solve_with_correctors",
    "AxisymMesh",
    "FullSolution",
    "cross_section_mean",
    "mass_balance_report",
    "solve_reference",
    "DEFAULT_EPS_LADDER",
    "NORM_IDS",
    "NormSpec",
    "RateFit",
    "RateReport",
    "SweepGrids",
    "fit_rate",
    "predicted_rate",
    "reference_velocities",
    "report_from_records",
    "scaled_norm",
    "sweep",
    "write_sweep_artifacts",
    "ConfigError",
    "RunConfig",
    "default_config",
    "parse_config",
    "__version__",
]
