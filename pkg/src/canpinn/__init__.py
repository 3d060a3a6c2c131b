"""Physics-informed networks with automatic, numerical and coupled derivative schemes."""

import os as _os

# BLAS thread count must be fixed before numpy loads; one thread keeps
# reductions in a fixed order and results bit-reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, _os.environ.get("CANPINN_THREADS", "1"))

from .diff_engine import DomainError, Jet2, Node, ParamStore, Tape, backward, finite_diff_check  # noqa: E402
from .network import NetworkConfig, NetworkField, forward, init_params, load_checkpoint, predict, save_checkpoint  # noqa: E402
from .schemes import SchemeConfig, SchemeKind  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Jet2",
    "Node",
    "ParamStore",
    "Tape",
    "backward",
    "finite_diff_check",
    "NetworkConfig",
    "NetworkField",
    "forward",
    "init_params",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "SchemeConfig",
    "SchemeKind",
]
