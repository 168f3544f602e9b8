from __future__ import annotations

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


_criteria: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.user_properties and dict(report.user_properties).get("criterion")
    if name:
        _criteria.append(("PASS" if report.passed else "FAIL", name))


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker and not any(k == "criterion" for k, _ in item.user_properties):
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    outcomes: dict[str, list[str]] = {}
    for outcome, name in _criteria:
        outcomes.setdefault(name, []).append(outcome)
    terminalreporter.section("acceptance criteria")
    for name, results in outcomes.items():
        status = "PASS" if all(r == "PASS" for r in results) else "FAIL"
        cases = f" ({results.count('PASS')}/{len(results)} cases)" if len(results) > 1 else ""
        terminalreporter.write_line(f"{status}  {name}{cases}")
