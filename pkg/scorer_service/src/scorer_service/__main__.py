import argparse
import os

import uvicorn

from .app import app


def main() -> int:
    parser = argparse.ArgumentParser(prog="scorer_service")
    parser.add_argument(
        "--host", default=os.environ.get("SCORER_SERVICE_HOST", "127.0.0.1")
    )
    parser.add_argument(
        "--port", type=int,
        default=int(os.environ.get("SCORER_SERVICE_PORT", "8731")),
    )
    args = parser.parse_args()
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
