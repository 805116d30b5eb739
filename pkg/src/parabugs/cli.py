"""Command-line entry point.

Run a batch script::

    parabugs --script seeds_script.txt --seed 7 --cores 8 --out-dir out/

or inspect a model without sampling::

    parabugs show graph --model seeds.bug --data seeds_data.txt
    parabugs show distribution --model seeds.bug --data seeds_data.txt --cores 4

The default core count comes from ``--cores``, then the ``PARABUGS_CORES``
environment variable; a ``modelDistribute`` command in the script
overrides both.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .compiler import compile_graph
from .data import DataEnvironment, parse_data
from .errors import ModelError, ParabugsError
from .graph import to_json
from .parser import parse_model
from .scheduler import build_schedule
from .script import default_cores, run_script


def _parser():
    p = argparse.ArgumentParser(prog="parabugs", description="Parallel MCMC for BUGS-style models.")
    p.add_argument("--script", help="batch script to execute")
    p.add_argument("--seed", type=int, default=1, help="master seed (default 1)")
    p.add_argument("--cores", type=int, default=None, help="default total worker count")
    p.add_argument("--chains", type=int, default=1, help="default number of chains")
    p.add_argument("--out-dir", default=None, help="directory for stats, samples and schedule files")
    p.add_argument("--backend", choices=("thread", "process"), default="thread")
    sub = p.add_subparsers(dest="command")
    show = sub.add_parser("show", help="print the compiled graph or the schedule")
    show.add_argument("what", choices=("graph", "distribution"))
    show.add_argument("--model", required=True)
    show.add_argument("--data", action="append", default=[])
    show.add_argument("--cores", dest="show_cores", type=int, default=None)
    show.add_argument("--json", action="store_true", help="JSON instead of the text table")
    return p


def _show(args):
    try:
        ast = parse_model(Path(args.model).read_text(encoding="utf-8"))
    except ModelError as exc:
        raise ParabugsError(exc.format(args.model)) from None
    env = DataEnvironment()
    for path in args.data:
        try:
            env = env.merged(parse_data(Path(path).read_text(encoding="utf-8")))
        except ModelError as exc:
            raise ParabugsError(exc.format(path)) from None
    dag = compile_graph(ast, env)
    if args.what == "graph":
        return to_json(dag, indent=2) + "\n"
    cores = args.show_cores or args.cores or default_cores(1)
    table = build_schedule(dag, cores)
    return table.to_json(dag, indent=2) + "\n" if args.json else table.render(dag)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "show":
            sys.stdout.write(_show(args))
            return 0
        if not args.script:
            _parser().print_usage(sys.stderr)
            sys.stderr.write("parabugs: error: --script is required\n")
            return 2
        script = Path(args.script)
        if not script.exists():
            sys.stderr.write(f"error: file not found: {args.script}\n")
            return 1
        status, out, err = run_script(
            script.read_text(encoding="utf-8"),
            base_dir=script.parent,
            seed=args.seed,
            cores=args.cores,
            chains=args.chains,
            out_dir=args.out_dir,
            backend=args.backend,
        )
    except (ParabugsError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    sys.stdout.write(out)
    sys.stderr.write(err)
    return status


if __name__ == "__main__":
    sys.exit(main())
