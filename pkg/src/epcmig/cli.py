"""Command-line entry point: ``epcmig``."""

import argparse
import sys
from pathlib import Path

from .batch import run_batch
from .blob import MetadataBlob
from .errors import ConfigError, DecodeError, EpcMigError
from .expect import load_expected
from .orchestrator import MigrationOptions, warm_checkpoint
from .profiles import KINDS, FLAVOR_NAMES, list_profiles, load_profile
from .scenario import load_scenarios


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _report_failures(result):
    for sid, err in sorted(result.failures.items()):
        print(f"ERROR\t{sid}\t{err}", file=sys.stderr)


def _write_traces(result, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for r in result.reports:
        (d / f"{r.scenario_id}.wire.tsv").write_text(r.wire_trace)
        (d / f"{r.scenario_id}.events.txt").write_text(r.event_trace)


def cmd_run(args):
    profile, scenarios = load_scenarios(args.scenario, args.profile)
    result = run_batch(scenarios, profile, workers=args.workers, trace=args.trace,
                       expected=profile.expectations, strict=False)
    _write(args.csv, result.csv())
    if args.trace:
        _write_traces(result, args.trace_dir)
    for c in result.comparisons:
        if not c.passed:
            print(c.describe(), file=sys.stderr)
    _report_failures(result)
    return 0 if result.ok else 1


def cmd_check(args):
    profile, scenarios = load_scenarios(args.scenario, args.profile)
    if args.expected:
        expected = [r for f in args.expected for r in load_expected(f)]
        strict = True
    else:
        expected = list(profile.expectations)
        strict = False
    result = run_batch(scenarios, profile, workers=args.workers, expected=expected, strict=strict)
    for c in result.comparisons:
        print(c.describe())
    for rec in result.unmatched:
        print(f"SKIP\t{rec.scenario_id}\t{rec.metric}\tscenario not in this set")
    _report_failures(result)
    if args.csv:
        _write(args.csv, result.csv())
    passed = sum(c.passed for c in result.comparisons)
    print(f"{passed}/{len(result.comparisons)} expectations met", file=sys.stderr)
    return 0 if result.ok else 1


def cmd_inspect_blob(args):
    blob = MetadataBlob.read(args.blob)
    print(blob.describe())
    return 0


def cmd_dump_blob(args):
    opts = MigrationOptions(gtp_utility=not args.no_gtp_utility)
    blob = warm_checkpoint(args.profile, args.kind, args.flavor, opts)
    blob.write(args.out)
    print(f"wrote {args.out}: {blob.total_bytes} bytes logical, {len(blob.to_bytes())} bytes on disk")
    return 0


def cmd_list_profiles(args):
    for name, path in list_profiles().items():
        try:
            desc = load_profile(str(path)).description
        except ConfigError as exc:
            desc = f"(invalid: {exc})"
        print(f"{name}\t{path}\t{desc}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="epcmig", description="Simulate VM and container migration of EPC functions.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file and emit CSV")
    r.add_argument("scenario")
    r.add_argument("--profile", help="calibration profile name or .profile file")
    r.add_argument("--csv", help="output file (default: stdout)")
    r.add_argument("--trace", action="store_true", help="write wire and event traces")
    r.add_argument("--trace-dir", default="traces")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="run a scenario file and compare to expected values")
    c.add_argument("scenario")
    c.add_argument("--expected", action="append", help="expected-value file (repeatable; default: the profile's own)")
    c.add_argument("--profile")
    c.add_argument("--csv")
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_check)

    i = sub.add_parser("inspect-blob", help="print the sections of a checkpoint blob")
    i.add_argument("blob")
    i.set_defaults(func=cmd_inspect_blob)

    d = sub.add_parser("dump-blob", help="checkpoint a warmed-up VNF to a blob file")
    d.add_argument("out")
    d.add_argument("--profile", default="openroadm")
    d.add_argument("--kind", choices=KINDS, default="mme")
    d.add_argument("--flavor", choices=FLAVOR_NAMES, default="small")
    d.add_argument("--no-gtp-utility", action="store_true")
    d.set_defaults(func=cmd_dump_blob)

    lp = sub.add_parser("list-profiles", help="list profiles on the search path")
    lp.set_defaults(func=cmd_list_profiles)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EpcMigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
