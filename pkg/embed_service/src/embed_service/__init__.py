"""HTTP embedding service: token vectors from a causal LM checkpoint."""

__version__ = "0.1.0"

from .app import create_app  # noqa: F401
from .config import ServiceConfig  # noqa: F401
