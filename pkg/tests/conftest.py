import numpy as np
import pytest

from gaitdx.recording import Foot, Label, Recording

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA[number] = (status, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"[{status}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


def make_recording(frames, subject="S1", foot=Foot.LEFT, label=Label.NEGATIVE, rate=100.0):
    return Recording(np.asarray(frames, dtype=np.float64), rate, subject, foot, label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cases():
    """24 labeled cases (12 subjects x 2 walks) at side 64, with feature vectors."""
    from gaitdx.harness import assemble_case
    from gaitdx.recording import iter_synthetic_subjects

    cases = []
    for _meta, recs in iter_synthetic_subjects(12, 0.5, 2, seed=2024):
        for w in range(2):
            cases.append(assemble_case(recs[2 * w], recs[2 * w + 1], f"w{w + 1}", 64, 0.05, True))
    return cases
