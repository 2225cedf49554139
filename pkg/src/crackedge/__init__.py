"""crackedge: compile a float CNN for an int8 edge NPU and run it.

The package covers the full deployment path: graph IR and shape inference,
model/image IO, device-profile compatibility checks, post-training int8
quantization (plus pruning and weight clustering), a binary executable
container, integer-only inference kernels with host-side pre/post-processing,
and a synthetic-data evaluation harness.
"""

from .errors import CrackEdgeError
from .graph import (
    ModelGraph,
    NodeSpec,
    OpKind,
    TensorSpec,
    build_reference_net,
    infer_shapes,
    validate_graph,
)

__version__ = "0.1.0"

__all__ = [
    "CrackEdgeError",
    "ModelGraph",
    "NodeSpec",
    "OpKind",
    "TensorSpec",
    "build_reference_net",
    "infer_shapes",
    "validate_graph",
    "__version__",
]
