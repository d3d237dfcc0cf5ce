import sys

from hypothesis import HealthCheck, settings

settings.register_profile(
    "gfpc",
    max_examples=50,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("gfpc")


def pytest_runtest_logreport(report):
    # One unbuffered verdict line per acceptance check, independent of -v.
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        print(f"[acceptance] {name}: {verdict}", file=sys.stderr, flush=True)
        sys.stderr.flush()
