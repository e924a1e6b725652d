import pytest

TINY = {
    "proj.height": "16",
    "proj.width": "128",
    "model.n_stages": "2",
    "model.num_classes": "3",
    "sa1.mlp": "16",
    "sa2.mlp": "32",
    "sa1.radius": "1.0",
    "sa2.radius": "2.0",
    "head.mlp": "16",
}


@pytest.fixture
def tiny_config():
    return dict(TINY)


# --- acceptance summary -----------------------------------------------------

_CRITERIA: dict[str, tuple[str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    label = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA[label] = (status, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, (status, secs) in _CRITERIA.items():
        terminalreporter.write_line(f"{status}  {label}  ({secs:.1f} s)")
