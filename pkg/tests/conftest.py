import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    reports = [
        r for key in ("passed", "failed") for r in terminalreporter.stats.get(key, [])
        if r.when == "call" and "::test_criterion_" in r.nodeid
    ]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(reports, key=lambda r: r.nodeid):
        props = dict(r.user_properties)
        number = r.nodeid.split("::test_criterion_")[1][:2]
        status = "PASS" if r.passed else "FAIL"
        elapsed = props.get("elapsed")
        timing = f" ({elapsed:.2f}s)" if elapsed is not None else ""
        terminalreporter.write_line(f"criterion {int(number):2d}: {status}  {props.get('title', '')}{timing}")
