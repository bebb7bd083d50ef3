import math

import numpy as np
import pytest

from skmarg.lattice import EmissionLattice, PhonemeVocab


@pytest.fixture
def vocab_a():
    """One phoneme ``a`` plus blank."""
    return PhonemeVocab(("a",))


@pytest.fixture
def vocab_ab():
    return PhonemeVocab(("a", "b"))


@pytest.fixture
def uniform2(vocab_a):
    """2 frames, every entry log .5."""
    return EmissionLattice(np.full((2, 2), math.log(0.5)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title = number, title
        self.notes = []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc_type is not None and exc is not None:
            detail = (detail + "; " if detail else "") + str(exc).splitlines()[0][:200]
        line = f"criterion {self.number:>2} {status}  {self.title}" + (f"  [{detail}]" if detail else "")
        _VERDICTS[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
