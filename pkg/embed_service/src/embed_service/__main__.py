"""Run the service: ``python -m embed_service --model <checkpoint>``."""

from __future__ import annotations

import argparse

from .app import create_app
from .config import DEFAULT_MODEL, ServiceConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="embed-service")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help="checkpoint name or path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    parser.add_argument("--max-batch", type=int, default=32)
    parser.add_argument("--max-tokens", type=int, default=1024)
    args = parser.parse_args(argv)

    import uvicorn

    config = ServiceConfig(model_name=args.model, device=args.device,
                           max_batch=args.max_batch,
                           max_tokens=args.max_tokens)
    uvicorn.run(create_app(config), host=args.host, port=args.port,
                log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
