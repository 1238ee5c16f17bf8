import pytest

from helpers import make_article


@pytest.fixture
def article_factory():
    return make_article


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Print one pass/fail line per acceptance criterion as it finishes."""
    outcome = yield
    report = outcome.get_result()
    if "test_acceptance" not in str(item.fspath):
        return
    if report.when == "call":
        status = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {status}: {item.name}")
    elif report.when == "setup" and report.skipped:
        print(f"\nACCEPTANCE SKIP: {item.name}")
