"""latflow: lattice max-flow streams, mixing constructions, the dyadic
vector-measure distance, and Monte Carlo rate-function estimation."""

__version__ = "0.1.0"

from .geometry import (
    DomainSpec,
    EdgeId,
    LatticeDomain,
    Region,
    boundary_edge_set,
    cube_face,
    cylinder_sets,
    discretize_domain,
    dump_vertex_set,
    face_partition,
    frac,
    sparse_edge_set,
    unit_box_domain,
    unit_cube,
    unit_square_domain,
)
from .capacities import Capacities, CapacityDistribution, derive_seed, sample_capacities
from .stream import (
    Stream,
    admissibility_region_report,
    admissibility_report,
    constant_stream,
    discretize_field,
    divergence_at,
    dump_stream,
    face_flux,
    flow_value,
    load_stream,
    rescale_stream,
    vector_measure,
)
from .maxflow import MaxFlowResult, cylinder_flow_tau, cylinder_flow_top_bottom, max_flow
from .reconnect import (
    balance_faces,
    decompose,
    glue_adjacent,
    is_well_behaved,
    mix,
    mix2d,
    mix_precise,
    mix_sparse,
    quantize,
)
from .measure import (
    DistanceBracket,
    DistanceOptions,
    VectorMeasure,
    adaptive_options,
    box_mass,
    distance,
    restrict,
)
from .continuous import ContinuousField, check_divergence_free, flow_cont, mollify, rate_integral
from .estimate import (
    RateEstimate,
    convexity_check,
    estimate_flow_constant,
    estimate_rate,
    min_distance,
    rate_upper_bound,
    tail_probability,
    wilson_interval,
)
