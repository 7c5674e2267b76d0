import gzip
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"
TOY = Path(__file__).parent.parent / "data" / "toy"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def toy_dir():
    return TOY


# chain-length census of the reference corpus: (representative length, count) per bucket
CENSUS = ((5, 96), (50, 3149), (500, 83526), (1500, 9107), (1501, 9117), (10000, 127), (1000000, 1))


@pytest.fixture(scope="session")
def census_table(tmp_path_factory):
    """Sequence table whose length distribution matches the census, single-code rows."""
    path = tmp_path_factory.mktemp("census") / "census.csv.gz"
    with gzip.open(path, "wt", compresslevel=1, newline="") as fh:
        fh.write("id,tokens\n")
        i = 0
        for n, count in CENSUS:
            row = "-".join(["A"] * n)
            for _ in range(count):
                fh.write(f"C{i}_1,{row}\n")
                i += 1
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    RESULTS = getattr(module, "RESULTS", None)
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
