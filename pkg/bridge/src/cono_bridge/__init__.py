"""Standalone noise-prediction server speaking the length-prefixed JSON
protocol, with a closed-form echo model for conformance testing."""

from .adapter import AdapterConfig, EchoModel, load_prompt_map
from .errors import BridgeAdapterError, MessageError, ModelError
from .protocol import PROTOCOL_VERSION, read_message, write_message
from .server import serve

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "BridgeAdapterError",
    "EchoModel",
    "MessageError",
    "ModelError",
    "PROTOCOL_VERSION",
    "__version__",
    "load_prompt_map",
    "read_message",
    "serve",
    "write_message",
]
