import numpy as np
import pytest
from hypothesis import settings

from signfusion.dataset import generate_synthetic

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 classes x 4 repetitions, 8x8 images: enough for split/loader/CLI plumbing."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    labels, samples = generate_synthetic(root, n_classes=3, reps=4, mode="joint", seed=5, image_size=8)
    return root, labels, samples


# --- acceptance reporting -------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and rep.passed:
        return
    number, text = mark.args
    _criteria[number] = (rep.passed and _criteria.get(number, (True,))[0], text)
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None:
        tr.write_line("")
        tr.write_line(f"criterion {number:>2}: {'PASS' if rep.passed else 'FAIL'}  {text}")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, text = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {text}")
