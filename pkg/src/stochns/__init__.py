"""
Pseudo-spectral time-integration lab for the stochastic 2D Navier-Stokes
equations on a periodic box.

Modules
-------
spectral   Fourier grid, Leray projection, dealiased nonlinearity, norms, snapshots.
noise      Q-Wiener noise models, reproducible Brownian paths, path coarsening.
schemes    Fully implicit and semi-implicit Euler, Lie splitting, trajectories.
theory     Closed-form rate constants, localization thresholds, constant estimates.
harness    Monte Carlo strong-error studies, rate fits, moment reports.
cli        TOML-configured experiments with manifests (``python -m stochns``).
"""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    Grid, SpectralField, NormBundle, new_grid, zero_field, leray_project, dealias,
    stokes_apply, to_physical, from_physical, bilinear_b, inner, trilinear_form,
    norm_bundle, single_mode, taylor_green, random_field, save_snapshot, load_snapshot,
)
from .noise import (  # noqa: E402
    Modulation, NoiseModel, WienerPath, canonical_modes, build_noise_model,
    sample_wiener_path, coarsen_path, noise_field, apply_g, save_path, load_path,
)
from .schemes import (  # noqa: E402
    SCHEME_KINDS, SolverError, SchemeParams, StepDiagnostics, TrajectoryRecord,
    implicit_euler_step, semi_implicit_step, deterministic_substep, stochastic_substep,
    splitting_step, run_trajectory,
)
from .theory import (  # noqa: E402
    AnalysisParams, RateConstants, c_beta, alpha0, splitting_constants, euler_constants,
    gn_ratio, estimate_gn_constant, poincare_constant, localization_indicator,
    constants_table, write_constants_csv,
)
from .harness import (  # noqa: E402
    StudyError, StudyConfig, initial_field, ErrorRow, RateFit, ErrorReport, fit_rate,
    strong_error_study, CrossCheck, cross_scheme_check, MomentReport, moment_report,
)
