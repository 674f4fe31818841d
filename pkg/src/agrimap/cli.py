"""Command-line entry point.

Reports go to stdout as JSON (or to ``--report FILE``); diagnostics go to
stderr. Exit codes: 0 success, 1 domain error (no overlap, degenerate
geometry, failed acceptance check, ...), 2 usage, config or input-file error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .commands import COMMANDS, REQUIRED, SEED_ENV, Command, Context, default_seed, execute, resolve_params
from .errors import AgrimapError, ConfigError, FormatError
from .formats import write_report
from .pipeline import StageError, load_config, run_acceptance, run_pipeline

log = logging.getLogger("agrimap")

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_command(sub, cmd: Command, common):
    sp = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help, parents=[common])
    for p in cmd.params:
        kw = {"help": p.help or None, "default": None}
        if p.choices is not None:
            kw["choices"] = p.choices
        if p.type is bool:
            kw["action"] = argparse.BooleanOptionalAction
        else:
            kw["type"] = p.type
            kw["metavar"] = p.name.upper() if p.io else None
        if p.positional:
            kw.pop("default")
            if p.multiple:
                kw["nargs"] = "+"
            sp.add_argument(p.name, **kw)
            continue
        if p.multiple:
            kw["nargs"] = "+"
            kw["action"] = "extend"
        if p.default is REQUIRED:
            kw["required"] = True
        sp.add_argument(_flag(p.name), dest=p.name, **kw)
    sp.set_defaults(_command=cmd.name)
    return sp


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--report", metavar="FILE", help="write the JSON report here instead of stdout")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    common.add_argument("-q", "--quiet", action="store_true", help="errors only on stderr")

    parser = argparse.ArgumentParser(
        prog="agrimap",
        description="Evaluation and mapping tools for monocular visual SLAM in agricultural scenes.",
        epilog=f"The default seed for seeded commands comes from ${SEED_ENV} (0 when unset).",
    )
    parser.add_argument("--version", action="version", version=f"agrimap {__version__}")
    sub = parser.add_subparsers(dest="_subcommand", metavar="COMMAND")
    sub.required = True
    for cmd in COMMANDS.values():
        _add_command(sub, cmd, common)

    sp = sub.add_parser("pipeline", help="run the stages of a JSON pipeline config", parents=[common])
    sp.add_argument("config", help="config file, or 'acceptance' for the packaged acceptance config")
    sp.add_argument("--workdir", default=".", help="directory for fixtures and relative paths (default: .)")
    sp.add_argument("--seed", type=int, default=None, help="override the config's seed")
    sp.set_defaults(_command="pipeline")

    sp = sub.add_parser(
        "acceptance",
        help="run the packaged acceptance pipeline twice and report every criterion",
        parents=[common],
    )
    sp.add_argument("--workdir", default=None, help="keep fixtures here (default: a temporary directory)")
    sp.add_argument("--seed", type=int, default=None, help="override the config's seed")
    sp.add_argument("--config", default="acceptance", help="alternative acceptance config")
    sp.set_defaults(_command="acceptance")
    return parser


def _setup_logging(verbose: int, quiet: bool):
    level = logging.ERROR if quiet else (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("agrimap: %(levelname)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)
    logging.captureWarnings(True)


def _emit(env, dest):
    if dest:
        write_report(dest, env)
    else:
        sys.stdout.write(env.to_json())
        sys.stdout.flush()


def _exit_code(e: Exception) -> int:
    if isinstance(e, StageError):
        return _exit_code(e.cause)
    if isinstance(e, (FormatError, ConfigError, ValueError)):
        return EXIT_USAGE
    return EXIT_DOMAIN


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _setup_logging(ns.verbose, ns.quiet)
    name = ns._command
    try:
        if name == "pipeline":
            cfg = load_config(ns.config)
            env = run_pipeline(cfg, Path(ns.workdir), seed=ns.seed)
        elif name == "acceptance":
            env = run_acceptance(ns.workdir, seed=ns.seed, config=ns.config)
            for c in env.payload["criteria"]:
                print(f"[{'PASS' if c['passed'] else 'FAIL'}] criterion {c['id']}: {c['title']}", file=sys.stderr)
        else:
            cmd = COMMANDS[name]
            given = {p.name: getattr(ns, p.name) for p in cmd.params}
            params = resolve_params(cmd, given, default_seed())
            env = execute(cmd, params, Context(Path.cwd(), params.get("seed") or 0))
    except (AgrimapError, ValueError) as e:
        print(f"agrimap {name}: error: {e}", file=sys.stderr)
        return _exit_code(e)
    _emit(env, ns.report)
    if env.payload.get("passed", True) is False:
        print(f"agrimap {name}: one or more checks failed", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
