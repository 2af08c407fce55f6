"""Service configuration."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

TOKEN_ENV_VAR = "TRAJLENS_EMBED_TOKEN"

DEFAULT_MODEL = "EleutherAI/gpt-j-6b"


def _token_from_env() -> Optional[str]:
    return os.environ.get(TOKEN_ENV_VAR) or None


@dataclass(frozen=True)
class ServiceConfig:
    model_name: str = DEFAULT_MODEL
    device: str = "cpu"
    max_batch: int = 32
    max_tokens: int = 1024
    # bearer token the client must present; unset means open access
    token: Optional[str] = field(default_factory=_token_from_env)

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
