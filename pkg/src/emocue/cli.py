"""Command line entry point: ``emocue <command> --config run.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from emocue.config import TOGGLES, EngineConfig, load_config
from emocue.errors import EngineError

log = logging.getLogger("emocue")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emocue", description="Knowledge-guided visual emotion recognition runs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name: str, help_: str) -> argparse.ArgumentParser:
        c = sub.add_parser(name, help=help_)
        c.add_argument("--config", help="YAML or JSON config file")
        c.add_argument("--run-dir", help="override the configured run directory")
        c.add_argument("--toggle", action="append", choices=TOGGLES, default=None,
                       help="ablation toggle (repeatable)")
        return c

    command("ingest", "build the concept store from the concept corpus")
    command("prepare", "derive cues and contrastive logic, then generate and refine prompts")
    infer = command("infer", "predict emotions for every test image in the manifest")
    infer.add_argument("--manifest", help="manifest to run on (default: the configured one)")
    ev = command("eval", "score predictions against the manifest")
    ev.add_argument("--manifest")
    ev.add_argument("--predictions", help="prediction file (default: the run's predictions.jsonl)")
    command("report", "print the results table of the last eval")
    return p


def _config(args: argparse.Namespace) -> EngineConfig:
    overrides = {"run_dir": args.run_dir}
    if args.toggle:
        overrides["toggles"] = tuple(args.toggle)
    if args.config:
        return load_config(args.config, **overrides)
    return EngineConfig().with_overrides(**overrides)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # imported here so `--help` stays fast (numba compilation happens on import)
    from emocue.pipeline import Engine

    try:
        engine = Engine(_config(args))
        if args.command == "ingest":
            print(engine.ingest())
        elif args.command == "prepare":
            prompts = engine.prepare()
            print(f"frozen prompt set v{prompts.version} ({len(prompts)} prompts) {prompts.digest()}")
        elif args.command == "infer":
            print(engine.infer(args.manifest))
        elif args.command == "eval":
            engine.evaluate(args.predictions, args.manifest)
            print(engine.render(), end="")
        elif args.command == "report":
            print(engine.render(), end="")
    except EngineError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
