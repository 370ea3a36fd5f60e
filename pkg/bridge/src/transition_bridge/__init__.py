"""HTTP bridge serving scored generation from transformer checkpoints."""

from .export import export_weights, write_manifest
from .server import create_app
from .session import BridgeError, BridgeSession, NoModelLoaded, tokenizer_fingerprint

__all__ = [
    "BridgeError",
    "BridgeSession",
    "NoModelLoaded",
    "create_app",
    "export_weights",
    "tokenizer_fingerprint",
    "write_manifest",
]

__version__ = "0.1.0"
