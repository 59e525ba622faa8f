"""Function-runtime SDK: accept platform tasks over HTTP, return outputs and state."""

from .server import HandlerContext, build_server, serve

__all__ = ["HandlerContext", "build_server", "serve"]

__version__ = "0.1.0"
