"""Checkpoint loading and the forward pass behind the embed endpoint."""

from __future__ import annotations

import threading
from typing import Optional

import torch

from .config import ServiceConfig


class EmbeddingModel:
    """One loaded causal LM; forward passes are serialized for determinism."""

    def __init__(self, config: ServiceConfig):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.model_name)
        self.model = AutoModelForCausalLM.from_pretrained(config.model_name)
        self.model.to(config.device)
        self.model.eval()
        self._lock = threading.Lock()

    @property
    def hidden_size(self) -> int:
        cfg = self.model.config
        size = getattr(cfg, "hidden_size", None) or getattr(cfg, "n_embd", None)
        if size is None:
            raise ValueError("checkpoint config exposes no hidden size")
        return int(size)

    @property
    def max_input_tokens(self) -> int:
        """Configured limit clamped to the model's context window."""
        cfg = self.model.config
        positions = (getattr(cfg, "max_position_embeddings", None)
                     or getattr(cfg, "n_positions", None))
        if positions:
            return min(self.config.max_tokens, int(positions))
        return self.config.max_tokens

    def token_count(self, text: str) -> int:
        return len(self.tokenizer.encode(text))

    def embed(
        self, texts: list[str], pooling: str, layer: str
    ) -> tuple[list, list[str]]:
        """Return (embeddings, warnings).

        ``embeddings`` holds one vector per text when pooling, otherwise a
        token-vector list per text. Texts longer than max_tokens are
        truncated from the right with a warning entry.
        """
        embeddings = []
        warnings: list[str] = []
        limit = self.max_input_tokens
        with self._lock, torch.no_grad():
            for index, text in enumerate(texts):
                ids = self.tokenizer.encode(text)
                if len(ids) > limit:
                    warnings.append(
                        f"text {index}: truncated from {len(ids)} to "
                        f"{limit} tokens"
                    )
                    ids = ids[:limit]
                input_ids = torch.tensor([ids], device=self.config.device)
                if layer == "input":
                    # raw embedding-table lookup, no positional signal
                    vectors = self.model.get_input_embeddings()(input_ids)[0]
                else:
                    output = self.model(input_ids, output_hidden_states=True)
                    vectors = output.hidden_states[-1][0]
                if pooling == "mean":
                    embeddings.append(vectors.mean(dim=0).tolist())
                else:
                    embeddings.append(vectors.tolist())
        return embeddings, warnings
