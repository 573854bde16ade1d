import numpy as np
import pytest

from crnnkit import synth
from crnnkit.charset import build_charset
from crnnkit.dataset import from_arrays


@pytest.fixture(scope="session")
def small_corpus():
    pairs = synth.make_examples(64, vocab=40, seed=1)
    charset = build_charset([lab for _, lab in pairs])
    return charset, from_arrays(pairs, charset)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
