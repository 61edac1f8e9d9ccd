from qmath.workbench.bundle import (
    ProjectorField,
    chern_number,
    make_test_bundle,
    map_A,
    map_B,
    strictly_localize,
    twist,
)
from qmath.workbench.channels import (
    BooleanFn,
    ErasureChannel,
    MonotoneBooleanFn,
    QubitDecodeChannel,
    complement_pair_check,
    enumerate_monotone,
    erasure_apply,
    matthew_check,
    mistake_rates,
    monotonize,
    reliability_poly,
)
from qmath.workbench.config import ExperimentConfig
from qmath.workbench.exceptions import (
    ConfigError,
    Error,
    InvalidInputError,
    InvariantViolation,
    OutOfRegimeError,
)
from qmath.workbench.experiments import run_experiment
from qmath.workbench.linalg import haar_unitary, hermitian_function, joint_diagonalize, operator_norm, polar
from qmath.workbench.mps import (
    MPSChain,
    build_expander_mps,
    connected_correlation,
    transfer_spectrum,
    two_interval_correlation,
)
from qmath.workbench.softtorus import (
    LocalProjector,
    SoftTorus,
    build_povm,
    commutator_epsilon,
    direct_sum,
    distance_upper,
    map_F,
    map_G,
    naimark_dilate,
    plaquette_phase,
    roundtrip_GF,
    voiculescu_pair,
)
from qmath.workbench.symmetry import (
    SymmetryClass,
    structured_rank_decomposition,
    symmetric_naimark_dilate,
    symmetry_check,
)
from qmath.workbench.walk import (
    RegularGraph,
    conditional_mean,
    girth,
    random_regular_graph,
    two_time_correlation,
)

__all__ = [
    "BooleanFn",
    "ConfigError",
    "ErasureChannel",
    "Error",
    "ExperimentConfig",
    "InvalidInputError",
    "InvariantViolation",
    "LocalProjector",
    "MPSChain",
    "MonotoneBooleanFn",
    "OutOfRegimeError",
    "ProjectorField",
    "QubitDecodeChannel",
    "RegularGraph",
    "SoftTorus",
    "SymmetryClass",
    "build_expander_mps",
    "build_povm",
    "chern_number",
    "commutator_epsilon",
    "complement_pair_check",
    "conditional_mean",
    "connected_correlation",
    "direct_sum",
    "distance_upper",
    "enumerate_monotone",
    "erasure_apply",
    "girth",
    "haar_unitary",
    "hermitian_function",
    "joint_diagonalize",
    "make_test_bundle",
    "map_A",
    "map_B",
    "map_F",
    "map_G",
    "matthew_check",
    "mistake_rates",
    "monotonize",
    "naimark_dilate",
    "operator_norm",
    "plaquette_phase",
    "polar",
    "random_regular_graph",
    "reliability_poly",
    "roundtrip_GF",
    "run_experiment",
    "strictly_localize",
    "structured_rank_decomposition",
    "symmetric_naimark_dilate",
    "symmetry_check",
    "transfer_spectrum",
    "twist",
    "two_interval_correlation",
    "two_time_correlation",
    "voiculescu_pair",
]
