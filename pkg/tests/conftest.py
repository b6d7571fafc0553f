import pytest

from immunids.attack_graph import load_graph_def
from immunids.rules import build_exploit_map, load_rules
from immunids.scenario import GRAPH_TEXT, RULES_TEXT, ScenarioConfig, synth_attack

_criteria: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = f"{marker.args[0]}. {marker.args[1]}"
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[key] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split(".")[0])):
        terminalreporter.write_line(f"{_criteria[key]:7s} criterion {key}")


@pytest.fixture(scope="session")
def ruleset():
    return load_rules(RULES_TEXT)


@pytest.fixture(scope="session")
def graph_def():
    return load_graph_def(GRAPH_TEXT)


@pytest.fixture(scope="session")
def exploit_map(ruleset, graph_def):
    return build_exploit_map(ruleset, graph_def)


@pytest.fixture(scope="session")
def attack():
    return synth_attack(ScenarioConfig())


@pytest.fixture(scope="session")
def small_attack():
    return synth_attack(ScenarioConfig(scan_ports=40, shell_output_segments=30))
