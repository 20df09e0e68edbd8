"""
Gauss Distill - Package Entry Point.

Main entry point for the distillation toolkit.
Provides the main() function used by console scripts.
"""

import logging
import sys
from typing import Optional, Sequence

from .cli.argument_parser import parse_arguments
from .cli.commands import HANDLERS
from .cli.config_parser import parse_config
from .core.errors import GaussDistillError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level, format="[%(levelname)s] %(message)s", stream=sys.stderr
    )
    logging.getLogger().setLevel(level)


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and map failures to exit codes.

    Returns:
        0 on success, 1 for usage errors, 2 for data or format errors and
        3 for numeric failures.
    """
    try:
        args = parse_arguments(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    _configure_logging(args.verbose)
    try:
        config = parse_config(args.config, args.overrides)
        return HANDLERS[args.command](args, config)
    except GaussDistillError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        target = e.filename if e.filename is not None else ""
        print(f"[ERROR] Cannot access {target}: {e.strerror or e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print("\n[INFO] Interrupted by user", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        print(f"[ERROR] Unexpected error: {e}", file=sys.stderr)
        import traceback

        traceback.print_exc()
        return EXIT_USAGE


def main() -> int:
    """Run the command line given in sys.argv.

    Returns:
        Exit code (0 for success, non-zero for error).
    """
    return run_command(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
