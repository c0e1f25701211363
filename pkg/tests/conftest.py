import numpy as np
import pytest

from eigenrank.masks import BinaryMask


def random_mask(rng, width=8, height=8, p=None):
    p = rng.uniform(0.1, 0.9) if p is None else p
    return BinaryMask.from_array(rng.random((height, width)) < p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


class ConstantBackend:
    """Every model predicts the same fixed mask."""

    name = "constant"

    def __init__(self, mask):
        self.mask = mask
        self.trained = []

    def train(self, case_ids, seed):
        self.trained.append(tuple(case_ids))
        return len(self.trained)

    def predict(self, model, case_id):
        return self.mask


class TableBackend:
    """Predictions looked up from ``table[(model_index, case_id)]``; models are 1-based indices."""

    name = "table"

    def __init__(self, table, default):
        self.table = table
        self.default = default
        self.n = 0

    def train(self, case_ids, seed):
        self.n += 1
        return self.n

    def predict(self, model, case_id):
        return self.table.get((model, case_id), self.default)


# Acceptance verdicts, printed once at the end of the session.
ACCEPTANCE = {}


def record_criterion(name, ok, detail):
    ACCEPTANCE[name] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda n: int(n[1:].split()[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
