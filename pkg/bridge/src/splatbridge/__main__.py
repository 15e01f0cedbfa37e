import argparse
import sys
from pathlib import Path

from .backends import BackendLoadError, make_backend
from .server import BridgeSession, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="splatbridge")
    parser.add_argument("--backend", default="auto",
                        choices=("auto", "procedural", "diffusers"))
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--workspace", default=".")
    parser.add_argument("--sample-steps", type=int, default=10)
    args = parser.parse_args(argv)
    try:
        backend = make_backend(args.backend, device=args.device)
    except BackendLoadError as e:
        print(f"fatal: {e}", file=sys.stderr)
        return 2
    session = BridgeSession(backend=backend, workspace=Path(args.workspace),
                            sample_steps=args.sample_steps)
    return serve(session)


if __name__ == "__main__":
    sys.exit(main())
