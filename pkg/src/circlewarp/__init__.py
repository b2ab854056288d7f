"""Numerical laboratory for taming Fourier partial sums by a change of
variable on the circle: kernel analysis, sign-balancing solvers, random
confined homeomorphisms, and a deterministic warp construction that
suppresses the partial sums of a composed function."""

__version__ = "0.1.0"

from .grid import (
    ResolutionError,
    SampledFunction,
    DyadicPoint,
    PLHomeo,
    eval_pl,
    compose,
    invert,
    identity_homeo,
    function_to_json,
    function_from_json,
    homeo_to_json,
    homeo_from_json,
)
from .fourier import (
    dirichlet_kernel,
    coeffs,
    partial_sum,
    sup_partial_sums,
    a_norm,
    kernel_block_matrix,
)
from .haar import (
    haar_transform,
    haar_inverse,
    ConfinementMap,
    confinement_map,
    normalize_sup,
    rademacher,
    perturbed_square_wave,
)
from .signs import (
    SignMatrix,
    SignVector,
    build_kernel_matrix,
    build_synthetic_matrix,
    solve_iid,
    solve_hierarchical,
    solve_bruteforce,
    row_discrepancy,
)
from .randhomeo import (
    DFParams,
    sample_df,
    sample_psi_q,
    MassRatioReport,
    verify_mass_ratios,
    ACReport,
    ac_diagnostics,
    ks_uniform_statistic,
)
from .corpus import (
    CorpusSpec,
    oscillation,
    tapered_oscillation,
    resonant_packets,
    fejer_blocks,
)
from .derand import (
    NumericalAlarm,
    DeviationRecord,
    DerandConfig,
    DerandState,
    RunResult,
    default_degrees,
    assemble_v_matrix,
    expected_composition,
    mc_cross_check,
    choose_halves,
    advance,
    run,
    write_deviation_table,
    record_shape_check,
)
from .experiments import ExperimentConfig, ExperimentReport, load_config, run_experiment
from .plotting import emit_plot

__all__ = [
    "__version__",
    "ResolutionError",
    "SampledFunction",
    "DyadicPoint",
    "PLHomeo",
    "eval_pl",
    "compose",
    "invert",
    "identity_homeo",
    "function_to_json",
    "function_from_json",
    "homeo_to_json",
    "homeo_from_json",
    "dirichlet_kernel",
    "coeffs",
    "partial_sum",
    "sup_partial_sums",
    "a_norm",
    "kernel_block_matrix",
    "haar_transform",
    "haar_inverse",
    "ConfinementMap",
    "confinement_map",
    "normalize_sup",
    "rademacher",
    "perturbed_square_wave",
    "SignMatrix",
    "SignVector",
    "build_kernel_matrix",
    "build_synthetic_matrix",
    "solve_iid",
    "solve_hierarchical",
    "solve_bruteforce",
    "row_discrepancy",
    "DFParams",
    "sample_df",
    "sample_psi_q",
    "MassRatioReport",
    "verify_mass_ratios",
    "ACReport",
    "ac_diagnostics",
    "ks_uniform_statistic",
    "CorpusSpec",
    "oscillation",
    "tapered_oscillation",
    "resonant_packets",
    "fejer_blocks",
    "NumericalAlarm",
    "DeviationRecord",
    "DerandConfig",
    "DerandState",
    "RunResult",
    "default_degrees",
    "assemble_v_matrix",
    "expected_composition",
    "mc_cross_check",
    "choose_halves",
    "advance",
    "run",
    "write_deviation_table",
    "record_shape_check",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "run_experiment",
    "emit_plot",
]
