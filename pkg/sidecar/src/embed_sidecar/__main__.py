"""CLI entry point: embed-sidecar --port 9100 --model tiny-vit."""

import argparse
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="embed-sidecar", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=9100)
    parser.add_argument("--model", default="tiny-vit")
    parser.add_argument("--device", choices=["cpu", "accelerator"], default="cpu")
    parser.add_argument("--dims", type=int, default=192, help="declared descriptor width")
    args = parser.parse_args(argv)

    import uvicorn

    from .model import SidecarConfig
    from .service import build_app

    config = SidecarConfig(
        model=args.model, device=args.device, port=args.port, declared_dims=args.dims
    )
    uvicorn.run(build_app(config), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
