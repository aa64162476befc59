"""Command line entry points: train, train-scope, serve."""

from __future__ import annotations

import argparse
import json
import sys

from .injection import BUILTIN_TINY, DEFAULT_HYPERPARAMS, TrainRun, train_injection
from .scope import DEFAULT_SCOPE_HYPERPARAMS, train_scope
from .serving import serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dyktrainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fine-tune on a training corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--objective", required=True,
                   choices=("ntp", "synthetic_qa", "span_prediction"))
    t.add_argument("--base-model", default=BUILTIN_TINY)
    t.add_argument("--out", required=True)
    t.add_argument("--lr", type=float, default=DEFAULT_HYPERPARAMS["learning_rate"])
    t.add_argument("--batch-size", type=int, default=DEFAULT_HYPERPARAMS["batch_size"])
    t.add_argument("--epochs", type=int, default=DEFAULT_HYPERPARAMS["epochs"])
    t.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("train-scope", help="train the scope classifier")
    s.add_argument("--scope", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lr", type=float, default=DEFAULT_SCOPE_HYPERPARAMS["learning_rate"])
    s.add_argument("--batch-size", type=int, default=DEFAULT_SCOPE_HYPERPARAMS["batch_size"])
    s.add_argument("--epochs", type=int, default=DEFAULT_SCOPE_HYPERPARAMS["epochs"])
    s.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("serve", help="serve an artifact over HTTP")
    v.add_argument("--artifact", required=True)
    v.add_argument("--port", type=int, default=8081)
    v.add_argument("--host", default="127.0.0.1")

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            out = train_injection(
                TrainRun(
                    corpus_path=args.corpus,
                    objective=args.objective,
                    base_model=args.base_model,
                    hyperparams={
                        "learning_rate": args.lr,
                        "batch_size": args.batch_size,
                        "epochs": args.epochs,
                    },
                    output_dir=args.out,
                    seed=args.seed,
                )
            )
            print(json.dumps({"status": "ok", "artifact": str(out)}))
        elif args.command == "train-scope":
            out = train_scope(
                args.scope,
                args.out,
                hyperparams={
                    "learning_rate": args.lr,
                    "batch_size": args.batch_size,
                    "epochs": args.epochs,
                },
                seed=args.seed,
            )
            print(json.dumps({"status": "ok", "artifact": str(out)}))
        else:
            serve(args.artifact, args.port, args.host)
    except (ValueError, FileNotFoundError) as exc:
        print(json.dumps({"status": "error", "reason": str(exc)}))
        return 2 if isinstance(exc, FileNotFoundError) else 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
