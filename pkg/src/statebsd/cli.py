"""Command-line interface: ``statebsd <command> ...``.

Exit codes: 0 success, 1 usage or input error, 2 verification failed,
3 superscalar run not equivalent to the reference.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import speculator as spx
from .asm import assemble, disassemble
from .elements import TARGETS
from .errors import PredictorUnsound, StateBsdError
from .isa import read_trace, run_single, write_trace
from .pipeline import (
    Corpus,
    PipelineConfig,
    anneal_summary,
    evaluate_suite,
    export_report,
    train_bundle,
    with_overrides,
)
from .selector import extract_dependencies
from .superscalar import PredictorBundle, compare_reference, run_superscalar, sim_report
from .workloads import WorkloadKind, default_suite, gen_program

EXIT_OK, EXIT_USAGE, EXIT_UNVERIFIED, EXIT_NOT_EQUIVALENT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_program(path: str):
    return assemble(Path(path).read_text(), name=Path(path).stem)


def _load_config(path: str | None) -> PipelineConfig:
    if not path:
        return PipelineConfig()
    return PipelineConfig.from_json(json.loads(Path(path).read_text()))


def _parse_opts(pairs):
    out = {}
    for item in pairs or ():
        key, _, value = item.partition("=")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_gen(args) -> int:
    if args.suite:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        for w in default_suite(args.seed):
            (out / f"{w.name}.mrv").write_text(disassemble(w.build()))
        print(f"wrote {len(default_suite(args.seed))} programs to {out}")
        return EXIT_OK
    if not args.kind or args.len is None:
        return _usage("gen needs --kind and --len (or --suite)")
    prog = gen_program(args.kind, args.len, args.seed, **_parse_opts(args.opt))
    text = disassemble(prog)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    prog = _load_program(args.program)
    res = run_single(prog, args.max_steps)
    if args.trace:
        write_trace(res.trace, args.trace)
    print(json.dumps({
        "program": prog.name,
        "instructions": res.instructions,
        "cycles": res.cycles,
        "cpi": float(res.cpi),
        "regs": list(res.final.regs),
        "pc": res.final.pc,
    }, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    tdir = Path(args.traces)
    paths = sorted(tdir.glob("*.jsonl"))
    if not paths:
        print(f"no *.jsonl traces in {tdir}", file=sys.stderr)
        return EXIT_USAGE
    events = []
    for p in paths:
        sib = p.with_suffix(".mrv")
        prog = _load_program(str(sib)) if sib.exists() else None
        events.extend(extract_dependencies(read_trace(p), prog, cfg.window))
    bundle, anneals = train_bundle(events, cfg)
    Path(args.output).write_text(bundle.dumps())
    if args.anneal_log:
        Path(args.anneal_log).write_text(
            json.dumps({t: anneal_summary(anneals[t], t, cfg.schedule(t)) for t in TARGETS}, sort_keys=True)
        )
    status = {t: bundle.verification[t].get("verified") for t in TARGETS}
    print(json.dumps({"events": len(events), "verified": status}, sort_keys=True))
    return EXIT_OK if bundle.verified else EXIT_UNVERIFIED


def cmd_verify(args) -> int:
    bundle = PredictorBundle.loads(Path(args.bundle).read_text())
    domain = spx.Sampled(args.samples, args.seed) if args.samples else "exhaustive"
    ok = True
    summary = {}
    for t in TARGETS:
        res = spx.verify_speculator(bundle.speculators[t], spx.SemanticOracle(t), domain, cex_cap=20)
        ok &= res.verified
        summary[t] = res.to_json()
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if ok else EXIT_UNVERIFIED


def cmd_simulate(args) -> int:
    prog = _load_program(args.program)
    bundle = PredictorBundle.loads(Path(args.bundle).read_text())
    for t in args.ablate or ():
        bundle = bundle.without(t)
    cfg = with_overrides(_load_config(args.config), p=args.p)
    try:
        result = run_superscalar(prog, bundle, cfg.sim_config(args.p))
    except PredictorUnsound as exc:
        print(f"statebsd: not equivalent: {exc}", file=sys.stderr)
        return EXIT_NOT_EQUIVALENT
    eq = compare_reference(prog, result)
    rep = sim_report(result, eq)
    text = json.dumps(rep, sort_keys=True, indent=1)
    if args.report:
        Path(args.report).write_text(text)
    print(text)
    return EXIT_OK if eq.ok else EXIT_NOT_EQUIVALENT


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    caps = tuple(int(c) for c in args.capacities.split(",")) if args.capacities else cfg.sweep_capacities
    cfg = with_overrides(cfg, sweep_capacities=caps)
    if args.suite:
        paths = sorted(Path(args.suite).glob("*.mrv"))
        if not paths:
            print(f"no *.mrv programs in {args.suite}", file=sys.stderr)
            return EXIT_USAGE
        programs = [_load_program(str(p)) for p in paths]
    else:
        programs = [w.build() for w in cfg.suite]
    corpus = Corpus.build(programs, cfg.window)
    bundle, anneals = train_bundle(corpus.all_events(), cfg)
    report = evaluate_suite(bundle, corpus, cfg, workers=args.workers)
    report.anneal = {t: anneal_summary(anneals[t], t, cfg.schedule(t)) for t in TARGETS}
    if args.csv:
        export_report(report, args.csv, "sweep-csv")
    if args.rows_csv:
        export_report(report, args.rows_csv, "csv")
    if args.report:
        export_report(report, args.report, "json")
    if args.bundle:
        Path(args.bundle).write_text(bundle.dumps())
    for row in report.sweep:
        print(f"capacity {row['capacity']:>3}  coverage {row['coverage']:.4f}  cpi {row['cpi']:.4f}")
    if any(r["equivalence"] != "ok" for r in report.rows):
        return EXIT_NOT_EQUIVALENT
    return EXIT_OK if bundle.verified else EXIT_UNVERIFIED


def _usage(msg: str) -> int:
    print(f"statebsd: error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="statebsd", description="State-reuse speculation for a toy superscalar processor.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a workload program (.mrv assembly)")
    g.add_argument("--kind", choices=[k.value for k in WorkloadKind])
    g.add_argument("--len", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--opt", action="append", metavar="KEY=VALUE", help="generator option, e.g. iterations=50")
    g.add_argument("--suite", action="store_true", help="write the default suite into the -o directory")
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_gen)

    r = sub.add_parser("run", help="run a program on the single-cycle reference")
    r.add_argument("--program", required=True)
    r.add_argument("--mode", choices=["single"], default="single")
    r.add_argument("--trace")
    r.add_argument("--max-steps", type=int, default=1_000_000)
    r.set_defaults(fn=cmd_run)

    t = sub.add_parser("train", help="train and verify a predictor bundle from traces")
    t.add_argument("--traces", required=True, help="directory of *.jsonl traces (with optional sibling .mrv)")
    t.add_argument("--config")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--anneal-log")
    t.set_defaults(fn=cmd_train)

    v = sub.add_parser("verify", help="re-verify every speculator in a bundle")
    v.add_argument("--bundle", required=True)
    mode = v.add_mutually_exclusive_group()
    mode.add_argument("--exhaustive", action="store_true")
    mode.add_argument("--samples", type=int)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("simulate", help="run the superscalar simulator and check equivalence")
    s.add_argument("--program", required=True)
    s.add_argument("--bundle", required=True)
    s.add_argument("-p", type=int, default=2)
    s.add_argument("--config")
    s.add_argument("--ablate", action="append", choices=list(TARGETS))
    s.add_argument("--report")
    s.set_defaults(fn=cmd_simulate)

    w = sub.add_parser("sweep", help="train on a suite and sweep selector capacity")
    w.add_argument("--suite", help="directory of *.mrv programs (default: built-in suite)")
    w.add_argument("--capacities")
    w.add_argument("--config")
    w.add_argument("--csv", help="capacity sweep table")
    w.add_argument("--rows-csv", help="one row per program x configuration")
    w.add_argument("--report", help="full JSON report")
    w.add_argument("--bundle", help="write the trained bundle")
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (StateBsdError, OSError, ValueError, KeyError) as exc:
        print(f"statebsd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
