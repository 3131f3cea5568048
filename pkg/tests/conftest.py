from __future__ import annotations

import pytest

from prosumbench.cohort import GeneratorConfig, PatientForm, derive_ground_truth
from prosumbench.question_bank import default_bank


@pytest.fixture(scope="session")
def bank():
    return default_bank()


@pytest.fixture(scope="session")
def minimal_answers(bank):
    """Every scored question answered with its lowest-severity option."""
    lowest = {
        "yes_no": "No",
        "severity5": "None",
        "interference5": "Not at all",
        "frequency5": "Never",
    }
    return {q.question_id: lowest[q.scale.value] for q in bank.scored_questions}


@pytest.fixture(scope="session")
def make_form(minimal_answers):
    def make(form_id="f", treatments=30, free_text=None, **answers) -> PatientForm:
        merged = dict(minimal_answers)
        merged.update(answers)
        return PatientForm(form_id, merged, treatments, free_text)

    return make


@pytest.fixture
def default_config():
    return GeneratorConfig(seed=42)


@pytest.fixture
def truth_of(bank):
    def derive(form, threshold=0.5):
        return derive_ground_truth(bank, form, threshold)

    return derive


_acceptance: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        outcome = "FAIL" if call.excinfo is not None else "PASS"
        previous = _acceptance.get(number, (title, "PASS"))[1]
        _acceptance[number] = (title, "FAIL" if "FAIL" in (outcome, previous) else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, outcome = _acceptance[number]
        terminalreporter.write_line(f"AC{number} {title}: {outcome}")
