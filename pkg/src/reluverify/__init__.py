"""Sound, optionally complete verification of ReLU networks.

Bound propagation (interval, zonotope, backward linear relaxation) over
a branch-and-bound search of the input set, plus gradient attacks for
falsification and reachable-set tracing for inspection.
"""

__version__ = "0.1.0"

from .attack import AttackConfig, Counterexample, fgsm, pgd, run_attack, violation_loss
from .bab import (
    Branch,
    Problem,
    SearchConfig,
    SplitConfig,
    VerdictReport,
    bisect,
    prepare_problem,
    search_branches,
    verify,
)
from .geometry import (
    HalfSpace,
    Hyperrectangle,
    InclusionStatus,
    OutputSpec,
    SymbolAllocator,
    Zonotope,
    affine_map_box,
    affine_map_zono,
    check_inclusion,
    interpolation_set,
    interval_hull,
    linf_ball,
    occlusion_set,
    relu_box,
    relu_zono,
    support_function,
)
from .model import (
    Model,
    ModelError,
    Node,
    append_conjunction_head,
    forward,
    forward_batch,
    input_gradient,
    load_model,
    robustness_head,
    strip_softmax,
)
from .propagate import (
    BoundsTrace,
    CrownSolver,
    IBPSolver,
    LinearBounds,
    ZonotopeSolver,
    concretize,
    propagate_crown,
    propagate_ibp,
    propagate_zono,
    solver_by_name,
)
from .specio import (
    PropertyError,
    PropertyFile,
    parse_property_json,
    parse_vnnlib,
    serialize_property,
    to_problem,
)
from .trace import export_heatmaps, export_trace, read_trace

__all__ = [name for name in dir() if not name.startswith("_")]
