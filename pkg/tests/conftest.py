import os
import sys

from hypothesis import HealthCheck, settings

settings.register_profile("dsvc", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dsvc")
os.environ.setdefault("SOURCE_DATE_EPOCH", "1700000000")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
