"""Command-line front end.

Offline subcommands (parse, pdg, flatten, summarize, rules) write analysis
artifacts under --out with deterministic names; online subcommands (run,
compare, nitest, bench) consume the module plus, for hybrid tracking, the
rule files produced offline.

Exit codes: 0 success, 1 analysis/validation failure or violations,
2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ir import Module, validate_module
from .parser import ParseError, parse_module, print_module
from .pdg import PdgError, build_pdg
from .rules import (
    parse_rules, rule_stats, rule_stats_csv, serialize_rules, taint_rule_gen,
)
from .summaries import (
    Summary, flatten_prim_types, function_body_hash, summarize_library,
)
from .tracker import MachineTrap, TaintConfig, run
from .validate import HarnessError, bench, noninterference_check, oracle_compare
from .ir import type_str


def _load_module(path: str) -> Module:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SystemExit(f"error: cannot read {path}: {e}")
    try:
        m = parse_module(text)
    except ParseError as e:
        for d in e.diagnostics:
            print(f"{path}:{d}", file=sys.stderr)
        raise SystemExit(1)
    diags = validate_module(m)
    if diags:
        for d in diags:
            print(f"{path}: {d}", file=sys.stderr)
        raise SystemExit(1)
    return m


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _control_deps(args) -> bool:
    return args.control_deps == "on"


def _summaries_for(m: Module, args) -> dict[str, Summary]:
    summaries, diags = summarize_library(m, _control_deps(args))
    for d in diags:
        print(f"note: {d}", file=sys.stderr)
    return summaries


def _write_if_changed(path: Path, text: str) -> None:
    if path.exists() and path.read_text(encoding="utf-8") == text:
        return
    path.write_text(text, encoding="utf-8")


def cmd_parse(args) -> int:
    m = _load_module(args.module)
    if args.print_canonical:
        sys.stdout.write(print_module(m))
    else:
        print(f"{args.module}: {len(m.structs)} structs, {len(m.globals)} globals,"
              f" {len(m.functions)} functions"
              f" ({len(m.library_functions())} library)")
    return 0


def cmd_flatten(args) -> int:
    m = _load_module(args.module)
    flat = flatten_prim_types(m.structs)
    doc = {name: sorted(type_str(t) for t in types)
           for name, types in sorted(flat.items())}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        _write_if_changed(_out_dir(args) / "primtypes.json", text)
    sys.stdout.write(text)
    return 0


def cmd_pdg(args) -> int:
    m = _load_module(args.module)
    summaries = _summaries_for(m, args)
    names = [args.fn] if args.fn else sorted(f.name for f in m.library_functions())
    out = _out_dir(args)
    for name in names:
        if name not in m.functions:
            print(f"error: no function @{name}", file=sys.stderr)
            return 1
        try:
            g = build_pdg(m, name, {k: v for k, v in summaries.items() if k != name})
        except PdgError as e:
            print(f"error: @{name}: {e}", file=sys.stderr)
            return 1
        _write_if_changed(out / f"{name}.pdg.dot", g.export_dot())
        if args.json:
            _write_if_changed(out / f"{name}.pdg.json",
                              json.dumps(g.export_json(), indent=2) + "\n")
        print(f"wrote {out / (name + '.pdg.dot')}")
    return 0


def cmd_summarize(args) -> int:
    m = _load_module(args.module)
    out = _out_dir(args)
    cdeps = _control_deps(args)
    summaries, diags = summarize_library(m, cdeps)
    for d in diags:
        print(f"note: {d}", file=sys.stderr)
    for name in sorted(summaries):
        path = out / f"{name}.summary.json"
        body_hash = function_body_hash(m.functions[name])
        if path.exists():
            try:
                old = json.loads(path.read_text(encoding="utf-8"))
                if (old.get("bodyHash") == body_hash
                        and old.get("controlDeps") == cdeps):
                    continue        # cached result still valid
            except (json.JSONDecodeError, OSError):
                pass
        doc = summaries[name].to_json()
        doc["bodyHash"] = body_hash
        _write_if_changed(path, json.dumps(doc, indent=2) + "\n")
        print(f"wrote {path}")
    return 0


def cmd_rules(args) -> int:
    m = _load_module(args.module)
    out = _out_dir(args)
    summaries = _summaries_for(m, args)
    progs = {}
    for name in sorted(summaries):
        prog = taint_rule_gen(summaries[name], m, args.default_len)
        progs[name] = prog
        path = out / f"{name}.rules.json"
        _write_if_changed(path, serialize_rules(prog))
        print(f"wrote {path}")
    stats_text = rule_stats_csv(rule_stats(progs))
    _write_if_changed(out / "rule_stats.csv", stats_text)
    if args.stats:
        sys.stdout.write(stats_text)
    return 0


def _load_rules_dir(path: str) -> dict:
    progs = {}
    for p in sorted(Path(path).glob("*.rules.json")):
        prog = parse_rules(p.read_text(encoding="utf-8"))
        progs[prog.function] = prog
    return progs


def cmd_run(args) -> int:
    m = _load_module(args.module)
    cfg = TaintConfig.load(args.taint_config) if args.taint_config else None
    if args.rules:
        progs = _load_rules_dir(args.rules)
    elif args.mode == "hybrid":
        summaries, _ = summarize_library(m, _control_deps(args))
        progs = {n: taint_rule_gen(s, m, args.default_len)
                 for n, s in summaries.items()}
    else:
        progs = {}
    entry_args = [int(a) for a in args.args.split(",") if a] if args.args else []
    try:
        report = run(m, args.entry, entry_args, cfg, args.mode, progs,
                     step_budget=args.step_budget, seed=args.seed,
                     default_len=args.default_len)
    except (MachineTrap, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    text = json.dumps(report.to_json(), indent=2) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _rules_for_harness(m: Module, args) -> dict:
    if args.rules:
        return _load_rules_dir(args.rules)
    summaries = _summaries_for(m, args)
    return {n: taint_rule_gen(s, m, args.default_len)
            for n, s in summaries.items()}


def cmd_compare(args) -> int:
    m = _load_module(args.module)
    progs = _rules_for_harness(m, args)
    names = [args.fn] if args.fn else sorted(
        corpus_fn.name for corpus_fn in m.library_functions())
    failed = False
    results = []
    for name in names:
        try:
            rep = oracle_compare(m, name, trials=args.trials, seed=args.seed,
                                 rule_programs=progs)
        except HarnessError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        results.append(rep.to_json())
        flag = "" if not rep.violations else f"  ({len(rep.violations)} violations)"
        print(f"{name}: instr={rep.avg_tainted_instr:.1f}"
              f" hybrid={rep.avg_tainted_hybrid:.1f} ratio={rep.ratio:.3f}"
              f" ret {rep.return_tainted_instr}->{rep.return_tainted_hybrid}{flag}")
        failed = failed or bool(rep.violations)
    if args.out:
        _write_if_changed(_out_dir(args) / "compare.json",
                          json.dumps(results, indent=2) + "\n")
    return 1 if failed else 0


def cmd_nitest(args) -> int:
    m = _load_module(args.module)
    progs = _rules_for_harness(m, args)
    names = [args.fn] if args.fn else sorted(
        corpus_fn.name for corpus_fn in m.library_functions())
    failed = False
    results = []
    for name in names:
        try:
            rep = noninterference_check(m, name, trials=args.trials,
                                        seed=args.seed, rule_programs=progs)
        except HarnessError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        results.append(rep.to_json())
        print(f"{name}: {rep.trials} trials, {len(rep.violations)} violations")
        failed = failed or bool(rep.violations)
    if args.out:
        _write_if_changed(_out_dir(args) / "nitest.json",
                          json.dumps(results, indent=2) + "\n")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    m = _load_module(args.module)
    progs = _rules_for_harness(m, args)
    entry_args = [int(a) for a in args.args.split(",") if a] if args.args else []
    rep = bench(m, args.entry, entry_args, rule_programs=progs,
                step_budget=args.step_budget)
    sys.stdout.write(rep.to_csv())
    if args.out:
        _write_if_changed(_out_dir(args) / "bench.csv", rep.to_csv())
    return 0


def build_argparser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="taintsum",
        description="Library-summary-based hybrid dynamic data-flow tracking")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--default-len", type=int, default=64,
                    help="string scan cap for rule regions")
    ap.add_argument("--control-deps", choices=("on", "off"), default="on")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("parse", help="parse and validate a module")
    p.add_argument("module")
    p.add_argument("--print", dest="print_canonical", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("flatten", help="flatten struct types to primitives")
    p.add_argument("module")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_flatten)

    p = sub.add_parser("pdg", help="export dependency graphs")
    p.add_argument("module")
    p.add_argument("--fn", default=None)
    p.add_argument("--out", default="build")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_pdg)

    p = sub.add_parser("summarize", help="derive library-function summaries")
    p.add_argument("module")
    p.add_argument("--out", default="build")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("rules", help="compile summaries into taint rules")
    p.add_argument("module")
    p.add_argument("--out", default="build")
    p.add_argument("--stats", action="store_true")
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("run", help="execute under taint tracking")
    p.add_argument("module")
    p.add_argument("--entry", default="main")
    p.add_argument("--mode", choices=("instr", "hybrid"), default="instr")
    p.add_argument("--rules", default=None, help="directory of *.rules.json")
    p.add_argument("--taint-config", default=None)
    p.add_argument("--args", default="", help="comma-separated entry arguments")
    p.add_argument("--step-budget", type=int, default=10 ** 8)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="tainting-effect comparison vs oracle")
    p.add_argument("module")
    p.add_argument("--fn", default=None)
    p.add_argument("--rules", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("nitest", help="noninterference twin-execution check")
    p.add_argument("module")
    p.add_argument("--fn", default=None)
    p.add_argument("--rules", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_nitest)

    p = sub.add_parser("bench", help="shadow-operation benchmark")
    p.add_argument("module")
    p.add_argument("--entry", default="main")
    p.add_argument("--args", default="")
    p.add_argument("--rules", default=None)
    p.add_argument("--step-budget", type=int, default=10 ** 8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_argparser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    except PdgError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
