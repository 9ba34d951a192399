"""Command-line entry point.

Subcommands: ``simulate``, ``infer``, ``tally``, ``bounds``, ``experiment``.
Every subcommand accepts ``--config FILE`` (INI); the section named after the
subcommand supplies defaults and explicit flags override it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys

from .coalescent_sim import DEFAULT_MAX_ATTEMPTS, DLCoalSimulator, RejectionCapError
from .experiments import KINDS, ExperimentConfig, read_config, run_experiment
from .inference import SpeciesCapError, astral_multi_exact, astral_one_exact
from .newick import NewickError
from .quartets import TALLY_COLUMNS, tally_table, write_tallies_csv
from .theory_bounds import BoundInputs, sample_size_bound
from .trees import DEFAULT_ENUMERATION_CAP, SpeciesTree, parse_newick

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_species(arg: str) -> SpeciesTree:
    text = arg.strip()
    if not text.endswith(";"):
        with open(text, encoding="utf-8") as fh:
            text = fh.read().strip()
    return SpeciesTree.from_newick(text)


def _read_genes(path: str) -> list:
    """Gene trees, one per line; blank lines are families without copies."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            out.append(parse_newick(line, kind="gene") if line else None)
    return out


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8", newline="")


def _require_seed(args):
    if args.seed is None:
        raise UsageError("--seed is required for this subcommand")
    return int(args.seed)


# --------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args) -> int:
    if args.species is None:
        raise UsageError("--species is required")
    seed = _require_seed(args)
    count = int(args.count if args.count is not None else 1)
    if count < 0:
        raise UsageError("--count must be nonnegative")
    sp = _read_species(args.species)
    sim = DLCoalSimulator(sp, float(args.lam or 0.0), float(args.mu or 0.0),
                          max_attempts=int(args.max_attempts or DEFAULT_MAX_ATTEMPTS), random_state=seed)
    trace = open(args.trace, "w", encoding="utf-8", newline="") if args.trace else None
    fh = _open_out(args.out)
    try:
        tw = None
        if trace is not None:
            tw = csv.writer(trace, lineterminator="\n")
            tw.writerow(("family", "copies", "duplications", "losses", "species_with_copies"))
        for i, rep in enumerate(sim.replicates(count)):
            fh.write((rep.gene.to_newick() if rep.gene is not None else "") + "\n")
            if tw is not None:
                per = rep.observed.copies_per_species()
                losses = sum(1 for e in rep.full.event if int(e) == 3)
                tw.writerow((i, sum(per.values()), rep.full.n_duplications(), losses,
                             sum(1 for v in per.values() if v > 0)))
    finally:
        if fh is not sys.stdout:
            fh.close()
        if trace is not None:
            trace.close()
    return EXIT_OK


def cmd_infer(args) -> int:
    if args.genes is None:
        raise UsageError("--genes is required")
    mode = args.mode or "one"
    cap = int(args.cap if args.cap is not None else DEFAULT_ENUMERATION_CAP)
    genes = _read_genes(args.genes)
    if mode == "one":
        res = astral_one_exact(genes, rng=_require_seed(args), cap=cap)
    else:
        res = astral_multi_exact(genes, cap=cap)
    fh = _open_out(args.out)
    try:
        for t in res.ties:
            fh.write(t.to_newick() + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.scores:
        with open(args.scores, "w", encoding="utf-8", newline="") as sf:
            res.write_csv(sf)
    msg = f"score {res.score}"
    if res.tied:
        msg += f"; tie among {len(res.ties)} optima (all listed, best first)"
    print(msg, file=sys.stderr)
    return EXIT_OK


def cmd_tally(args) -> int:
    if args.genes is None:
        raise UsageError("--genes is required")
    mode = args.mode or "one"
    genes = _read_genes(args.genes)
    taxa = None
    if args.quartet:
        taxa = [s for s in args.quartet.split(",") if s]
        if len(taxa) != 4:
            raise UsageError("--quartet needs four comma-separated species")
    seed = _require_seed(args) if mode == "one" else args.seed
    cap = int(args.cap) if args.cap is not None else 10**6
    table = tally_table(genes, taxa, mode=mode, random_state=seed, cap=cap,
                        method="enumerate" if args.enumerate else "dp")
    fh = _open_out(args.out)
    try:
        write_tallies_csv(fh, table.tallies())
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_bounds(args) -> int:
    missing = [n for n in ("f", "delta", "lam", "mu", "n", "eps") if getattr(args, n) is None]
    if missing:
        raise UsageError("missing bound inputs: " + ", ".join("--" + ("lambda" if m == "lam" else m) for m in missing))
    inputs = BoundInputs(float(args.f), float(args.delta), float(args.lam), float(args.mu), int(args.n),
                         float(args.eps))
    out = sample_size_bound(inputs)
    rows = [("gamma", out.gamma), ("sigma_lb", out.sigma_lb), ("alpha_ub", out.alpha_ub),
            ("delta_prime_lb", out.delta_prime_lb), ("kstar_req", out.kstar_req), ("k_req", out.k_req),
            ("k_closed_form", out.k_closed_form), ("log_term", out.log_term), ("degenerate", int(out.degenerate))]
    width = max(len(r[0]) for r in rows)
    for name, val in rows:
        print(f"{name:<{width}}  {val!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("quantity", "value"))
            for name, val in rows:
                w.writerow((name, repr(val)))
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = {
        "species": args.species, "lam": args.lam, "mu": args.mu, "seed": args.seed,
        "replicates": args.count, "out": args.out, "experiment": args.kind,
    }
    if args.config:
        config = read_config(args.config, overrides)
    else:
        values = {k: v for k, v in overrides.items() if v is not None}
        if "seed" not in values:
            raise UsageError("--seed (or a config file with a seed) is required")
        config = ExperimentConfig.from_mapping(values)
    threads = int(args.threads or 1)
    res = run_experiment(config, threads)
    report = res.report
    verdict = report.passed() if callable(getattr(report, "passed", None)) else report.passed
    for name, table in report.tables().items():
        print(f"[{name}]")
        print(",".join(table.columns))
        for row in table.rows:
            print(",".join(_short(x) for x in row))
    print(f"verdict: {'pass' if verdict else 'fail'}")
    if res.manifest:
        print(f"manifest: {res.manifest}")
    return EXIT_OK


def _short(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}" if math.isfinite(x) else str(x)
    return "" if x is None else str(x)


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dlcoal-astral", description="DLCoal simulation and exact quartet-based species tree estimation")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, *flags):
        sp.add_argument("--config", help="INI file; section named after the subcommand")
        if "species" in flags:
            sp.add_argument("--species", help="species tree Newick text or file")
        if "rates" in flags:
            sp.add_argument("--lambda", dest="lam", type=float, help="duplication rate")
            sp.add_argument("--mu", type=float, help="loss rate")
        if "seed" in flags:
            sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output path ('-' for stdout)")

    s = sub.add_parser("simulate", help="simulate gene trees, one Newick per line")
    common(s, "species", "rates", "seed")
    s.add_argument("--count", type=int, help="number of gene families")
    s.add_argument("--trace", help="optional per-family CSV")
    s.add_argument("--max-attempts", type=int, help="bounded coalescent redraw cap")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("infer", help="exact species tree search")
    common(s, "seed")
    s.add_argument("--genes", help="gene tree file")
    s.add_argument("--mode", choices=("one", "multi"))
    s.add_argument("--cap", type=int, help=f"largest species count (default {DEFAULT_ENUMERATION_CAP})")
    s.add_argument("--scores", help="CSV of all candidate scores")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("tally", help="quartet tallies as CSV (" + ",".join(TALLY_COLUMNS) + ")")
    common(s, "seed")
    s.add_argument("--genes", help="gene tree file")
    s.add_argument("--mode", choices=("one", "multi"))
    s.add_argument("--quartet", help="A,B,C,D (default: every quartet)")
    s.add_argument("--cap", type=int, help="tuple cap per gene tree for --enumerate")
    s.add_argument("--enumerate", action="store_true", default=None, help="enumerate tuples instead of counting")
    s.set_defaults(func=cmd_tally)

    s = sub.add_parser("bounds", help="closed-form sample-size bound")
    common(s, "rates")
    s.add_argument("--f", type=float, help="shortest branch length")
    s.add_argument("--delta", type=float, help="species tree depth")
    s.add_argument("--n", type=int, help="number of species")
    s.add_argument("--eps", type=float, help="failure probability")
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("experiment", help="run a Monte Carlo campaign")
    common(s, "species", "rates", "seed")
    s.add_argument("--kind", choices=KINDS, help="campaign (overrides the config)")
    s.add_argument("--count", type=int, help="replicates")
    s.add_argument("--threads", type=int, help="worker processes")
    s.set_defaults(func=cmd_experiment)
    return p


_CONFIG_TYPES = {"lam": float, "mu": float, "seed": int, "count": int, "cap": int, "f": float, "delta": float,
                 "n": int, "eps": float, "threads": int, "max_attempts": int}


def _apply_config(args) -> None:
    """Fill unset flags from the INI section named after the subcommand."""
    if not getattr(args, "config", None) or args.command == "experiment":
        return
    parser = configparser.ConfigParser()
    if not parser.read(args.config, encoding="utf-8"):
        raise FileNotFoundError(args.config)
    if args.command not in parser:
        return
    for key, raw in parser[args.command].items():
        name = key.replace("-", "_")
        if name == "lambda":
            name = "lam"
        if not hasattr(args, name):
            raise UsageError(f"unknown key {key!r} in section [{args.command}]")
        if getattr(args, name) is None:
            conv = _CONFIG_TYPES.get(name, str)
            if name == "enumerate":
                conv = lambda v: v.lower() in ("1", "true", "yes")  # noqa: E731
            setattr(args, name, conv(raw))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        _apply_config(args)
        return args.func(args)
    except UsageError as exc:
        print(f"dlcoal-astral {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpeciesCapError as exc:
        print(f"dlcoal-astral {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RejectionCapError, MemoryError) as exc:
        print(f"dlcoal-astral {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, NewickError, OSError) as exc:
        print(f"dlcoal-astral {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
