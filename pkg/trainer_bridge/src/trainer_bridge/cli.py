"""Bridge CLI: train an adapter from the shared contracts, serve it for evaluation."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from trainer_bridge import BridgeError
from trainer_bridge.serve import serve_responder
from trainer_bridge.train import BridgeRunSpec, TINY_BASE_MODEL, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trainer-bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune adapters from a train CSV and tuning config")
    p.add_argument("--dataset", required=True, help="instruct/output CSV")
    p.add_argument("--tuning-config", required=True, help="tuning-config.json")
    p.add_argument("--base-model", default=TINY_BASE_MODEL)
    p.add_argument("--out-dir", default="bridge-out")
    p.add_argument(
        "--full", action="store_true", help="disable smoke mode (no 10-step cap, GPU settings)"
    )

    p = sub.add_parser("serve", help="serve a tuned adapter on POST /answer")
    p.add_argument("--adapter", required=True, help="adapter directory from train")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8096)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            run = BridgeRunSpec(
                dataset_path=Path(args.dataset),
                config_path=Path(args.tuning_config),
                base_model=args.base_model,
                output_dir=Path(args.out_dir),
                smoke_mode=not args.full,
            )
            stats, adapter_dir = train(run)
            print(
                f"trained {stats['metadata']['optimizer_steps']} steps in "
                f"{stats['runtime_seconds']:.1f}s, final loss {stats['final_loss']:.4f} "
                f"-> {adapter_dir}"
            )
        elif args.command == "serve":
            server = serve_responder(args.adapter, (args.host, args.port))
            print(f"responder listening on {server.base_url}/answer (Ctrl-C to stop)")
            try:
                while True:
                    time.sleep(1)
            except KeyboardInterrupt:
                server.stop()
                print("stopped")
        return 0
    except BridgeError as exc:
        print(f"trainer-bridge {args.command}: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
