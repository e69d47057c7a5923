"""tvslab: metric-graph Gaussian free field laboratory.

Approximates the zero-boundary continuum free field on a disk by a
lattice field with Brownian-bridge edge interpolation, extracts
two-valued corridor cluster sets and their loop ensembles, and ships
the statistical harnesses used to check their structure.
"""

from .lattice import (
    LAMBDA,
    TWO_LAMBDA,
    FOUR_LAMBDA,
    LatticeDomain,
    FieldSample,
    build_disk_domain,
    domain_from_vertices,
    green_function,
    sample_dgff,
    harmonic_extension,
    conditional_resample,
    save_field,
    load_field,
)
from .bridge import (
    EdgeMarks,
    EdgeExtrema,
    bridge_one_sided_exit_prob,
    bridge_corridor_stay_prob,
    sample_edge_marks,
    sample_fps_marks,
    sample_edge_extrema,
    marks_from_extrema,
    fps_marks_from_extrema,
    save_marks,
    load_marks,
)
from .extract import (
    Component,
    TwoValuedSet,
    FirstPassageSet,
    extract_tvs,
    extract_fps,
    component_label_frequency,
    iterated_construction,
    monotonicity_check,
    set_summary,
    save_tvs,
    load_tvs,
)
from .loops import (
    LoopGraph,
    DistanceProfile,
    ConnectivityReport,
    extract_loops,
    build_adjacency,
    connectivity_report,
    recover_labels_by_parity,
    percolation_probe,
    boundary_arc,
    local_finiteness_census,
    distance_profile,
    loop_graph_to_json,
)
from .levy import (
    BrComponent,
    BrSet,
    B0Trajectory,
    Cle4Report,
    construct_br,
    coupled_br_pair,
    br_monotonicity,
    br_law_match,
    verify_label_distance,
    b0_limit_labels,
    geom_stage_report,
    cle4_label_tests,
    cle4_from_pairs,
    touching_label_census,
    set_volume_summaries,
    br_set_to_json,
)
from .stats import (
    DimensionFit,
    TestReport,
    box_counting_dimension,
    ks_two_sample,
    chi_square,
    wilson_ci,
    mesh_trend,
    trend_significance,
)
from .brownian1d import (
    Path1D,
    ExitRecord,
    simulate_bm,
    exit_time,
    levy_transform,
    local_time_estimate,
    iterated_excursion_time,
    sample_levy_batch,
    sample_exit_times,
    sample_iterated_excursions,
    identity_tau_sigma,
    write_cdf_csv,
)

__version__ = "0.1.0"

from .experiments import (        # noqa: E402  (needs __version__)
    ExperimentConfig,
    ExperimentReport,
    EXPERIMENT_NAMES,
    default_config,
    run,
    replica_tvs,
    replica_br,
)
from .cli import (                # noqa: E402
    render_svg,
    write_report,
    main,
)

__all__ = [
    "LAMBDA",
    "TWO_LAMBDA",
    "FOUR_LAMBDA",
    "LatticeDomain",
    "FieldSample",
    "build_disk_domain",
    "domain_from_vertices",
    "green_function",
    "sample_dgff",
    "harmonic_extension",
    "conditional_resample",
    "save_field",
    "load_field",
    "EdgeMarks",
    "EdgeExtrema",
    "bridge_one_sided_exit_prob",
    "bridge_corridor_stay_prob",
    "sample_edge_marks",
    "sample_fps_marks",
    "sample_edge_extrema",
    "marks_from_extrema",
    "fps_marks_from_extrema",
    "save_marks",
    "load_marks",
    "Component",
    "TwoValuedSet",
    "FirstPassageSet",
    "extract_tvs",
    "extract_fps",
    "component_label_frequency",
    "iterated_construction",
    "monotonicity_check",
    "set_summary",
    "save_tvs",
    "load_tvs",
    "LoopGraph",
    "DistanceProfile",
    "ConnectivityReport",
    "extract_loops",
    "build_adjacency",
    "connectivity_report",
    "recover_labels_by_parity",
    "percolation_probe",
    "boundary_arc",
    "local_finiteness_census",
    "distance_profile",
    "loop_graph_to_json",
    "BrComponent",
    "BrSet",
    "B0Trajectory",
    "Cle4Report",
    "construct_br",
    "coupled_br_pair",
    "br_monotonicity",
    "br_law_match",
    "verify_label_distance",
    "b0_limit_labels",
    "geom_stage_report",
    "cle4_label_tests",
    "cle4_from_pairs",
    "touching_label_census",
    "set_volume_summaries",
    "br_set_to_json",
    "DimensionFit",
    "TestReport",
    "box_counting_dimension",
    "ks_two_sample",
    "chi_square",
    "wilson_ci",
    "mesh_trend",
    "trend_significance",
    "Path1D",
    "ExitRecord",
    "simulate_bm",
    "exit_time",
    "levy_transform",
    "local_time_estimate",
    "iterated_excursion_time",
    "sample_levy_batch",
    "sample_exit_times",
    "sample_iterated_excursions",
    "identity_tau_sigma",
    "write_cdf_csv",
    "ExperimentConfig",
    "ExperimentReport",
    "EXPERIMENT_NAMES",
    "default_config",
    "run",
    "replica_tvs",
    "replica_br",
    "render_svg",
    "write_report",
    "main",
    "__version__",
]
