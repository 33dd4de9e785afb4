"""Physics-informed recurrent surrogates for nonlinear structural seismic response."""

__version__ = "0.1.0"

from .baseline import LSTMBaseline  # noqa: E402
from .core import Dataset, GroundMotionRecord, ResponseHistory, StructuralModel  # noqa: E402
from .surrogate import PhysicsInformedRNN  # noqa: E402

__all__ = ["Dataset", "GroundMotionRecord", "LSTMBaseline", "PhysicsInformedRNN",
           "ResponseHistory", "StructuralModel", "__version__"]
