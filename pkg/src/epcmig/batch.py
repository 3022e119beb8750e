"""Batch execution, CSV emission and expectation checks."""

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .errors import EpcMigError
from .expect import compare_expected
from .orchestrator import CSV_COLUMNS, run_scenario


@dataclass
class BatchResult:
    reports: list
    failures: dict = field(default_factory=dict)
    comparisons: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures and all(c.passed for c in self.comparisons)

    def csv(self):
        return reports_to_csv(self.reports)


def _run_one(args):
    scenario, profile, trace = args
    try:
        r = run_scenario(scenario, profile, trace=trace)
        r.__dict__.pop("_run", None)
        return scenario.scenario_id, r, None
    except EpcMigError as exc:
        return scenario.scenario_id, None, f"{type(exc).__name__}: {exc}"


def run_batch(scenarios, profile=None, workers=1, trace=False, expected=(), strict=True):
    """Run every scenario in isolation; failures are collected, not raised.

    Reports come back sorted by scenario id whatever the worker count. An
    expectation for a scenario that was not run is a failure when ``strict``
    and is merely listed in ``unmatched`` otherwise.
    """
    jobs = [(s, profile, trace) for s in scenarios]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    reports = sorted((r for _, r, _ in results if r is not None), key=lambda r: r.scenario_id)
    failures = {sid: err for sid, _, err in results if err is not None}
    out = BatchResult(reports, failures)
    by_id = {r.scenario_id: r for r in reports}
    for rec in expected:
        report = by_id.get(rec.scenario_id)
        if report is None:
            if rec.scenario_id in failures:
                continue
            if strict:
                failures[rec.scenario_id] = "expectation refers to a scenario that was not run"
            else:
                out.unmatched.append(rec)
            continue
        try:
            out.comparisons.append(compare_expected(report, rec))
        except KeyError as exc:
            failures[f"{rec.scenario_id}.{rec.metric}"] = exc.args[0]
    return out


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in sorted(reports, key=lambda r: r.scenario_id):
        w.writerow(r.csv_row())
    return buf.getvalue()
