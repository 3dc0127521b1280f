import numpy as np
import pytest

from croco.mildata import GenConfig, generate


def small_gen(**kw) -> GenConfig:
    base = dict(d=4, bag_size=8, positive_count=2, num_pos_bags=12, num_neg_bags=12, noise_sigma=0.3,
                labeled_ratio=0.5, test_fraction=0.25, pool_size=200, seed=0)
    base.update(kw)
    return GenConfig(**base)


@pytest.fixture
def small_ds():
    return generate(small_gen())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[str] = []


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion, shown in the terminal summary."""

    def _record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
