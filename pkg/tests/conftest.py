import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def _timed(fn, **kw):
    t0 = time.perf_counter()
    out = fn(**kw)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def table1_run():
    from schwarzq.tables import compute_table1

    return _timed(compute_table1)


@pytest.fixture(scope="session")
def table2_run():
    from schwarzq.tables import compute_table2

    return _timed(compute_table2)


@pytest.fixture(scope="session")
def table3_run():
    from schwarzq.tables import compute_table3

    return _timed(compute_table3)


@pytest.fixture(scope="session")
def table4_run():
    from schwarzq.tables import compute_table4

    return _timed(compute_table4)
