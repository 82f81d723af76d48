"""Command-line entry point: ``oraclesim {sim,lex,urn} ...``.

Exit status is 0 on success, 1 on a domain error (bad scenario, malformed
corpus, duplicate ids) and 2 on a usage error. Results go to stdout or
``--out``; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import querylex, sim, urn
from .trustmodel import route


class DomainError(Exception):
    pass


def _data_dir(args) -> Path:
    env = os.environ.get("ORACLESIM_DATA_DIR")
    if env:
        return Path(env)
    if args.data_dir:
        return Path(args.data_dir)
    return querylex.default_data_dir()


def _locate(path: str, data_dir: Path, subdir: str = "") -> Path:
    """Use ``path`` as given, else look for it inside the data directory."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (data_dir / subdir / path, data_dir / subdir / f"{path}.json"):
        if candidate.exists():
            return candidate
    return p


def _write(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_scenario(args):
    path = _locate(args.scenario, _data_dir(args), "scenarios")
    config = sim.load_scenario(str(path))
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def cmd_sim_run(args):
    config = _load_scenario(args)
    report, log = sim.run(config)
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="") as fh:
            fh.write(sim.log_to_jsonl(log))
    _write(report.to_json(), args.out)


def cmd_sim_replicate(args):
    config = _load_scenario(args)
    summary = sim.replicate(config, args.runs, workers=args.workers)
    _write(json.dumps(summary, indent=2) + "\n", args.out)


def cmd_lex_analyze(args):
    data_dir = _data_dir(args)
    lexicon = querylex.load_lexicon(data_dir)
    corpus = querylex.load_corpus(_locate(args.corpus, data_dir))
    rows = querylex.aggregate(corpus, lexicon)
    if args.format == "json":
        _write(querylex.aggregates_to_json(rows), args.out)
    else:
        _write(querylex.aggregates_to_csv(rows), args.out)


def cmd_lex_classify(args):
    features = querylex.QueryFeatures(
        querylex.Answerability(args.answerable_by),
        is_pure_computation=args.pure_computation,
        honest_interpretation_conflict=args.interpretation_conflict,
    )
    category = querylex.classify(features)
    result = {
        "query": args.query,
        "features": {
            "answerable_by": features.answerable_by.value,
            "is_pure_computation": features.is_pure_computation,
            "honest_interpretation_conflict": features.honest_interpretation_conflict,
        },
        "category": category.value,
        "routing": route(args.query or "", category).value,
    }
    _write(json.dumps(result, indent=2) + "\n", args.out)


def cmd_urn_demo(args):
    transcript = urn.demo_transcript(args.m_gold, args.m_silver, witnesses=args.witnesses,
                                     seed=args.seed, tamper=args.tamper)
    _write(json.dumps(transcript, indent=2) + "\n", args.out)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < urn.MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oraclesim", description=__doc__.splitlines()[0])
    parser.add_argument("--data-dir", help="lexica, sample corpus and scenarios "
                        "(ORACLESIM_DATA_DIR takes precedence)")
    groups = parser.add_subparsers(dest="group", required=True, metavar="{sim,lex,urn}")

    sim_p = groups.add_parser("sim", help="run the oracle-network simulator")
    sim_cmds = sim_p.add_subparsers(dest="command", required=True, metavar="{run,replicate}")
    run_p = sim_cmds.add_parser("run", help="run one scenario and print its metrics report")
    run_p.add_argument("--scenario", required=True)
    run_p.add_argument("--seed", type=_seed)
    run_p.add_argument("--out")
    run_p.add_argument("--log", help="write the event log as JSON Lines")
    run_p.set_defaults(func=cmd_sim_run)

    rep_p = sim_cmds.add_parser("replicate", help="run a scenario over consecutive seeds")
    rep_p.add_argument("--scenario", required=True)
    rep_p.add_argument("--runs", type=_positive, default=100)
    rep_p.add_argument("--seed", type=_seed)
    rep_p.add_argument("--workers", type=_positive, default=1)
    rep_p.add_argument("--out")
    rep_p.set_defaults(func=cmd_sim_replicate)

    lex_p = groups.add_parser("lex", help="lexical analysis of oracle answers")
    lex_cmds = lex_p.add_subparsers(dest="command", required=True, metavar="{analyze,classify}")
    an_p = lex_cmds.add_parser("analyze", help="per-category lexical averages of a corpus")
    an_p.add_argument("--corpus", required=True)
    an_p.add_argument("--format", choices=("csv", "json"), default="csv")
    an_p.add_argument("--out")
    an_p.set_defaults(func=cmd_lex_analyze)

    cl_p = lex_cmds.add_parser("classify", help="classify a query from its features")
    cl_p.add_argument("--answerable-by", required=True, choices=[a.value for a in querylex.Answerability])
    cl_p.add_argument("--pure-computation", action="store_true")
    cl_p.add_argument("--interpretation-conflict", action="store_true")
    cl_p.add_argument("--query", default=None)
    cl_p.add_argument("--out")
    cl_p.set_defaults(func=cmd_lex_classify)

    urn_p = groups.add_parser("urn", help="sealed-urn commit-reveal protocol")
    urn_cmds = urn_p.add_subparsers(dest="command", required=True, metavar="{demo}")
    demo_p = urn_cmds.add_parser("demo", help="print a commit/attest/select/reveal transcript")
    demo_p.add_argument("--m-gold", required=True)
    demo_p.add_argument("--m-silver", required=True)
    demo_p.add_argument("--witnesses", type=_non_negative, default=urn.DEFAULT_QUORUM)
    demo_p.add_argument("--seed", type=_seed, default=0)
    demo_p.add_argument("--tamper", action="store_true")
    demo_p.add_argument("--out")
    demo_p.set_defaults(func=cmd_urn_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except sim.InvalidConfig as exc:
        for path, msg in exc.errors:
            print(f"error: {path}: {msg}", file=sys.stderr)
        return 1
    except (querylex.CorpusError, querylex.DuplicateId, querylex.LexiconUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
