"""Bent-ray transmission ultrasound tomography toolkit.

Off-grid ray tracing over gridded refractive-index / slowness / sound-speed
fields, two-point ray linking by shooting, time-of-flight sound-speed
inversion, and ray-approximated Green's-function parameters, validated
against the analytically solvable Maxwell fish-eye lens.
"""

from .grid import (
    FIELD_KINDS,
    GridSpec,
    OutsideDomainError,
    ScalarField,
    field_from_csv,
    field_to_csv,
    grid_gradient,
    load_field,
    save_field,
)
from .interp import (
    BACKENDS,
    BilinearSampler,
    BSplineSampler,
    InterpSample,
    bspline_basis,
    bspline_prefilter,
    get_sampler,
    interp_weights,
    sample_bilinear,
    sample_bspline,
)
from .phantom import (
    Blob,
    FisheyeAnalytic,
    PhantomSpec,
    fisheye_gradient,
    fisheye_index,
    fisheye_reference,
    rasterize,
)
from .tracer import (
    DEFAULT_ALGORITHM,
    RayState,
    SparseRow,
    StepAlgorithm,
    StopCondition,
    TraceError,
    Trajectory,
    acoustic_length,
    dump_trajectory_csv,
    quadrature_weights,
    snap_endpoint,
    step,
    straight_trajectory,
    system_row,
    trace,
    travel_time,
    travel_time_samples,
)
from .linking import (
    ArrayGeometry,
    LinkError,
    LinkProblem,
    LinkResult,
    LinkTable,
    angles_from_direction,
    broyden_root,
    direction_from_angles,
    link_all,
    link_broyden,
    link_regula_falsi,
    link_residual,
    link_secant,
    make_problem,
    regula_falsi_root,
    ring_array,
    secant_root,
    sphere_array,
    straight_aim,
    wrap_angle,
)
from .paraxial import (
    CausticError,
    GreensParams,
    ParaxialState,
    UnsupportedBackendError,
    accumulate_absorption,
    accumulate_phase,
    caustic_count,
    compute_greens_params,
    geometric_amplitude,
    greens_value,
    perpendicular_basis,
    ray_jacobian_auxiliary,
    ray_jacobian_for_ray,
    ray_jacobian_paraxial,
    reverse_ray,
    trace_paraxial,
)
from .invert import (
    InversionConfig,
    InversionError,
    OuterIterationRecord,
    ReconstructionResult,
    SparseSystem,
    ToFTable,
    assemble_system,
    cg_solve,
    reconstruct,
    rmse,
    sart_solve,
    sart_step,
    synth_tofs,
)
from .fisheye import (
    DEFAULT_RATIOS,
    ExperimentSpec,
    MetricResult,
    fisheye_field,
    fisheye_grid,
    length_experiment,
    radius_experiment,
    sweep,
    sweep_to_csv,
)

__version__ = "0.1.0"
