import functools

import pytest
from hypothesis import settings

from epcmig.orchestrator import Scenario, run_scenario
from epcmig.profiles import load_profile

settings.register_profile("default", deadline=None)
settings.load_profile("default")

KINDS = ("hss", "mme", "spgw")
VIRTS = ("container", "vm")
FLAVORS = ("small", "medium")
LENGTHS = ("0.005", "25", "50")


@functools.lru_cache(maxsize=None)
def run_cached(profile, kind, virt, flavor="small", length="0.005", overlay="vpn"):
    return run_scenario(Scenario(profile, kind, virt, flavor, length, overlay))


def grid(profile):
    prof = load_profile(profile)
    for kind in KINDS:
        for virt in VIRTS:
            for flavor in FLAVORS:
                for length in LENGTHS:
                    overlay = "floating-ip" if virt == "vm" and flavor == "medium" and prof.floating_ip else "vpn"
                    yield kind, virt, flavor, length, overlay


@pytest.fixture(scope="session")
def openroadm():
    return load_profile("openroadm")


@pytest.fixture(scope="session")
def cloudlab():
    return load_profile("cloudlab")


_verdicts = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _verdicts.append((report.nodeid.split("::")[-1], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(_verdicts):
        terminalreporter.write_line(f"{verdict}  {name}")
