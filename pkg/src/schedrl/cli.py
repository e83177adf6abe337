"""Command-line entry point: ``schedrl train|compare|sweep-load|sweep-class``.

Exit codes: 0 success, 2 configuration error, 3 IO error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("schedrl")


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive range), ``"1,4,7"`` or a single integer."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}; use A..B or a comma list") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schedrl", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=[c.value for c in harness.Command])
    parser.add_argument("--env", help="environment YAML config")
    parser.add_argument("--agent", help="agent YAML config (optional 'training' section)")
    parser.add_argument("--workload", default="generated",
                        help="'generated', a workload YAML config, or a workload CSV")
    parser.add_argument("--seeds", type=parse_seeds, default=list(range(10)),
                        help="evaluation seeds, e.g. 0..9 or 1,2,3 (default 0..9)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--episodes", type=int, help="training episode budget override")
    parser.add_argument("--checkpoint", help="agent checkpoint path (default <out>/checkpoint.npz)")
    parser.add_argument("--policy", choices=harness.POLICY_NAMES,
                        help="evaluate a single policy (default: all four)")
    parser.add_argument("--train", action="store_true",
                        help="train a fresh agent when the checkpoint is missing")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        spec = harness.build_spec(
            args.command, args.seeds, args.out, env_path=args.env, agent_path=args.agent,
            workload=args.workload, episodes=args.episodes, checkpoint=args.checkpoint,
            policy=args.policy, train_first=args.train,
        )
        on_episode = None
        if args.verbose:
            on_episode = lambda e: log.info("episode %d loss %.4f reward %.2f eps %.3f",
                                            e.episode, e.loss_mean, e.reward_sum, e.epsilon)
        if spec.command is harness.Command.TRAIN:
            outputs = harness.cmd_train(spec, on_episode)
        else:
            outputs = harness.run(spec)
    except NumericError as exc:
        print(f"schedrl: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # ConfigError, ParseError, ValidationError and ShapeError all land here
        print(f"schedrl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"schedrl: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    for name, path in outputs.items():
        print(f"{name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
