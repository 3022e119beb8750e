"""Expected-value records and comparisons."""

import re
from dataclasses import dataclass

from .errors import ConfigError
from .kv import KvDoc, parse_number

_TOL = re.compile(r"^\s*(?P<value>[^±+]+?)\s*(?:(?:±|\+-|\+/-)\s*(?P<tol>[0-9.]+)\s*(?P<pct>%)?)?\s*$")


@dataclass(frozen=True)
class ExpectedRecord:
    scenario_id: str
    metric: str
    expected: float
    tolerance: float
    tolerance_text: str = ""
    source: str = ""

    def __post_init__(self):
        if self.tolerance < 0:
            raise ConfigError("tolerance must be >= 0", f"{self.scenario_id}.{self.metric}")


@dataclass(frozen=True)
class Comparison:
    record: ExpectedRecord
    actual: float
    delta: float
    passed: bool

    def describe(self):
        r = self.record
        verdict = "PASS" if self.passed else f"FAIL({self.delta:g})"
        return f"{verdict}\t{r.scenario_id}\t{r.metric}\t{self.actual:g}\t{r.expected:g} {r.tolerance_text}".rstrip()


def parse_tolerance(raw, path=None):
    """Parse ``"32 ±5%"`` / ``"2.0 +- 0.1"`` into (value, absolute tolerance, text)."""
    m = _TOL.match(raw)
    if not m:
        raise ConfigError(f"cannot parse expectation {raw!r}", path)
    value = float(parse_number(m.group("value"), path))
    if m.group("tol") is None:
        return value, 0.0, "exact"
    tol = float(m.group("tol"))
    if m.group("pct"):
        return value, abs(value) * tol / 100.0, f"±{m.group('tol')}%"
    return value, tol, f"±{m.group('tol')}"


def load_expected(path):
    doc = KvDoc.load(path)
    out = []
    for key, entry in doc.entries.items():
        sid, _, metric = key.rpartition(".")
        if not sid or not metric:
            raise ConfigError("expected <scenario_id>.<metric>", key)
        value, tol, text = parse_tolerance(entry.raw, key)
        out.append(ExpectedRecord(sid, metric, value, tol, text, entry.note))
    return out


def compare_expected(report, expected):
    """Compare a report (mapping or object with ``scenario_id``) to one record."""
    sid = report["scenario_id"] if isinstance(report, dict) else report.scenario_id
    if sid != expected.scenario_id:
        raise KeyError(f"scenario mismatch: report {sid!r} vs expectation {expected.scenario_id!r}")
    actual = report.get(expected.metric) if isinstance(report, dict) else report.metric(expected.metric)
    if actual is None:
        raise KeyError(f"metric {expected.metric!r} not reported for {sid!r}")
    delta = abs(float(actual) - expected.expected)
    # absorb binary rounding of decimal tolerances
    passed = delta <= expected.tolerance + 1e-9 * max(1.0, abs(expected.expected))
    return Comparison(expected, float(actual), delta, passed)
