"""Reference server for the sequence-attribution model wire protocol."""

__version__ = "0.1.0"

from .adapters import SyntheticMirror, echo_adapter
from .server import ServerConfig, handle_request, serve_http, serve_stdio

__all__ = [
    "ServerConfig",
    "SyntheticMirror",
    "echo_adapter",
    "handle_request",
    "serve_http",
    "serve_stdio",
]
