"""Reference oracle bridge: serve any classifier over the wire protocol."""

from .adapters import ModelAdapter, adapter_from_weights, load_adapter
from .protocol import PROTOCOL_VERSION, ProtocolError
from .serve import BridgeConfig, serve, serve_streams
from .weights import ToyModel, WeightsError, load_builtin_weights, read_tensor_file

__version__ = "0.1.0"

__all__ = [
    "BridgeConfig",
    "ModelAdapter",
    "PROTOCOL_VERSION",
    "ProtocolError",
    "ToyModel",
    "WeightsError",
    "adapter_from_weights",
    "load_adapter",
    "load_builtin_weights",
    "read_tensor_file",
    "serve",
    "serve_streams",
    "__version__",
]
