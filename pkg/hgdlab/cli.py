import argparse
import json
import pathlib
import sys
import typing

import hgdlab
from hgdlab.core.config import STAGE_SCHEMAS
from hgdlab.internal.errors import BaseLabError, LabUnknownStageError
from hgdlab.internal.logger import LogLevel, UniversalLogger

UTILITY_COMMANDS = ("figures", "stages")


def setup_client(verbose: bool = False) -> hgdlab.LabClient:
    """Create a client whose logger follows the verbosity flag."""
    level = LogLevel.DEBUG if verbose else LogLevel.STANDARD
    return hgdlab.LabClient(logger=UniversalLogger(name="hgdlab", level=level))


def stage_command(args: argparse.Namespace, overrides: list[str]) -> None:
    """Run one pipeline stage from a config file."""
    client = setup_client(args.verbose)
    print(f"\n🚀 Running {args.stage} from {args.config}\n")
    result = client.run(pathlib.Path(args.config), overrides, stage=args.stage)
    print(f"✅ Artifact: {result.artifact}")
    print(f"📄 Manifest: {result.manifest}")
    if result.summary:
        print(json.dumps(result.summary, indent=2, sort_keys=True, default=str))
    print()


def figures_command(args: argparse.Namespace, overrides: list[str]) -> None:
    """Regenerate the analysis figures from stored profiles and scatters."""
    client = setup_client(args.verbose)
    print("\n🖼️  Reproducing analysis figures\n")
    for path in client.reproduce_figures(args.artifact_root):
        print(f"✅ {path}")
    print()


def stages_command(args: argparse.Namespace, overrides: list[str]) -> None:
    """List the pipeline stages and their parameters."""
    print("\n📋 Stages\n")
    for stage, schema in STAGE_SCHEMAS.items():
        required = [name for name, field in schema.items() if field.required]
        print(f"  {stage:<24} required: {', '.join(required)}")
    print()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgdlab",
        description="hgd-lab - guided-denoiser adversarial defense lab",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {hgdlab.__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    for stage in STAGE_SCHEMAS:
        stage_parser = subparsers.add_parser(
            stage, help=f"Run the {stage} stage", allow_abbrev=False, epilog="Extra --key value pairs override the config."
        )
        stage_parser.add_argument("config", help="YAML experiment config")
        stage_parser.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging")
        stage_parser.set_defaults(func=stage_command, stage=stage)

    figures_parser = subparsers.add_parser("figures", help="Regenerate analysis figures", allow_abbrev=False)
    figures_parser.add_argument("--artifact-root", default=None, help="Artifact root to read from")
    figures_parser.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging")
    figures_parser.set_defaults(func=figures_command)

    stages_parser = subparsers.add_parser("stages", help="List pipeline stages")
    stages_parser.set_defaults(func=stages_command)
    return parser


def main(argv: typing.Sequence[str] | None = None) -> int:
    """Main CLI entry point; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in (*STAGE_SCHEMAS, *UTILITY_COMMANDS):
            raise LabUnknownStageError(f"{argv[0]!r}; known stages: {', '.join(STAGE_SCHEMAS)}")
        args, overrides = parser.parse_known_args(argv)
        if not hasattr(args, "func"):
            parser.print_help()
            return 2
        if overrides and args.func is not stage_command:
            parser.error(f"unrecognized arguments: {' '.join(overrides)}")
        args.func(args, overrides)
    except BaseLabError as err:
        print(f"\n❌ {err}\n", file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
