"""Sparse convolutional networks on square, triangular, cubic and
tetrahedral lattices: hash-indexed active sites, gather-matrix
convolution, ground-state propagation, training, an architecture-string
parser with a MAC cost model, and voxelization/ingestion front-ends.
"""

from .errors import (
    FormatError,
    LatticeNetError,
    ParseError,
    PlanError,
    SizeMismatchError,
)
from .geometry import (
    GridShape,
    LatticeKind,
    filter_offsets,
    filter_volume,
    in_size,
    out_size,
    site_count,
)
from .grid import DenseGrid, LabeledSample, SparseGrid, active_count
from .netspec import (
    ConvSpec,
    FMPSpec,
    NetworkSpec,
    OutputSpec,
    PoolSpec,
    count_ops,
    geometric_activity,
    parse,
    plan,
    render,
    required_input_size,
)
from .network import Network
from .ops import (
    FMP_RATIO,
    ConvLayer,
    FilterGeometry,
    FMPLayer,
    GatherPlan,
    PoolLayer,
    build_gather,
    classifier_forward,
    conv_active_sites,
    conv_forward,
    fmp_forward,
    fmp_regions,
    pool_forward,
    relu_forward,
)
from .autograd import (
    ParamState,
    conv_backward,
    finite_diff_check,
    pool_backward,
    sgd_step,
    softmax_nll,
)
from .train import AffineParams, TrainConfig, augment_grid, evaluate, fit

__version__ = "0.1.0"
